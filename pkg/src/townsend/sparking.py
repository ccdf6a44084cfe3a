"""The sparking function D and its roots.

With z = -g(V_c) L**2 and c = gamma / (1 + gamma), all three regimes of D
share one formula,

    D(V_c) = C(z) + (V_c / 2) S(z) - c exp(V_c / 2),

where C(z) = cosh(sqrt z) and S(z) = sinh(sqrt z) / sqrt z for z > 0, and
the trigonometric continuation cos / sin(t)/t for z < 0.  Near z = 0 both
are replaced by their power series.  The scaled value exp(-V_c/2) D is
computed without forming exp(V_c/2), so large voltages do not overflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, InvalidRange, NoSparkingVoltage
from .model import ROOT_RTOL, Parameters, g_landscape, g_of_voltage, g_prime_of_voltage

__all__ = [
    "SERIES_BAND",
    "SparkEval",
    "Root",
    "Nondegeneracy",
    "RegimeFlags",
    "SparkReport",
    "DaggerBounds",
    "spark_terms",
    "D_normalized",
    "eval_D",
    "scan_roots",
    "default_scan_window",
    "sparking_report",
    "locate_dagger_bounds",
]

# |z| below which C and S come from their truncated power series
SERIES_BAND = 1e-8
# |z| below which dS/dz comes from its power series (avoids C - S cancellation)
_SZ_SERIES_BAND = 1e-2

_FACT = [math.factorial(k) for k in range(40)]


@dataclass
class _Terms:
    """C, S and dS/dz, each multiplied by exp(-V/2)."""

    z: np.ndarray
    CE: np.ndarray
    SE: np.ndarray
    SzE: np.ndarray


def spark_terms(params: Parameters, V) -> _Terms:
    V = np.asarray(V, dtype=float)
    z = -np.asarray(g_of_voltage(params, V)) * params.L**2
    CE = np.empty_like(z)
    SE = np.empty_like(z)
    SzE = np.empty_like(z)
    half = V / 2.0

    band = np.abs(z) < SERIES_BAND
    hyp = (z > 0) & ~band
    trig = (z < 0) & ~band

    if np.any(hyp):
        mu = np.sqrt(z[hyp])
        hv = half[hyp]
        up = np.exp(mu - hv)
        down = np.exp(-mu - hv)
        CE[hyp] = 0.5 * (up + down)
        SE[hyp] = -0.5 * up * np.expm1(-2.0 * mu) / mu
    if np.any(trig):
        th = np.sqrt(-z[trig])
        E = np.exp(-half[trig])
        CE[trig] = np.cos(th) * E
        SE[trig] = np.sin(th) / th * E
    if np.any(band):
        zb = z[band]
        E = np.exp(-half[band])
        # truncated after the mu**6 term
        CE[band] = (1.0 + zb / 2.0 + zb**2 / 24.0 + zb**3 / 720.0) * E
        SE[band] = (1.0 + zb / 6.0 + zb**2 / 120.0 + zb**3 / 5040.0) * E

    small = np.abs(z) < _SZ_SERIES_BAND
    if np.any(small):
        zs = z[small]
        acc = np.zeros_like(zs)
        for n in range(9, 0, -1):
            acc = acc * zs + n / _FACT[2 * n + 1]
        SzE[small] = acc * np.exp(-half[small])
    big = ~small
    if np.any(big):
        SzE[big] = (CE[big] - SE[big]) / (2.0 * z[big])
    return _Terms(z=z, CE=CE, SE=SE, SzE=SzE)


def _scaled_D(params: Parameters, V, terms: _Terms | None = None):
    """exp(-V/2) D and exp(-V/2) dD/dV."""
    V = np.asarray(V, dtype=float)
    t = spark_terms(params, V) if terms is None else terms
    c = params.emission_ratio
    DE = t.CE + 0.5 * V * t.SE - c
    dz = -params.L**2 * np.asarray(g_prime_of_voltage(params, V))
    DpE = dz * (0.5 * t.SE + 0.5 * V * t.SzE) + 0.5 * t.SE - 0.5 * c
    return DE, DpE


def D_normalized(params: Parameters, V):
    """(1 + gamma) exp(-V/2) D(V), vectorized over V > 0."""
    DE, _ = _scaled_D(params, V)
    out = (1.0 + params.gamma) * DE
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class SparkEval:
    V_c: float
    g: float
    mu: float | None
    D: float
    D_normalized: float
    D_prime: float


def eval_D(params: Parameters, V_c: float) -> SparkEval:
    V_c = float(V_c)
    if not V_c > 0:
        raise DomainError(f"V_c must be positive, got {V_c}")
    DE, DpE = _scaled_D(params, np.array([V_c]))
    DE, DpE = float(DE[0]), float(DpE[0])
    g = float(g_of_voltage(params, V_c))
    with np.errstate(over="ignore"):
        scale = math.exp(V_c / 2.0) if V_c < 1400 else math.inf
    return SparkEval(
        V_c=V_c,
        g=g,
        mu=params.L * math.sqrt(-g) if g <= 0 else None,
        D=DE * scale if DE != 0 else 0.0,
        D_normalized=(1.0 + params.gamma) * DE,
        D_prime=DpE * scale if DpE != 0 else 0.0,
    )


@dataclass(frozen=True)
class Root:
    V_c: float
    g: float
    satisfies_positive1: bool  # D = 0 together with g < pi^2 / L^2
    multiplicity: int = 1

    def as_dict(self) -> dict:
        return {"V_c": self.V_c, "g": self.g,
                "satisfies_positive1": self.satisfies_positive1,
                "multiplicity": self.multiplicity}


def _make_root(params: Parameters, V: float, multiplicity: int = 1) -> Root:
    g = float(g_of_voltage(params, V))
    return Root(V_c=float(V), g=g, satisfies_positive1=g < math.pi**2 / params.L**2,
                multiplicity=multiplicity)


def scan_roots(params: Parameters, V_max: float, step: float, chunk: int = 1_000_000) -> list[Root]:
    """Every root of D on (0, V_max] resolved at the given scan step.

    Sign changes of the scaled D between neighbouring nodes are refined by
    bracketing.  A node where the scaled D is below 1e-13 in magnitude and
    is a local minimum of |D| without a sign change is reported as a
    tangential root of multiplicity 2.
    """
    V_max = float(V_max)
    step = float(step)
    if not (math.isfinite(V_max) and V_max > 0):
        raise InvalidRange(f"V_max must be positive and finite, got {V_max}")
    if not (step > 0 and step <= V_max / 100.0):
        raise InvalidRange(f"step must lie in (0, V_max/100], got {step}")

    n = int(math.floor(V_max / step + 1e-9))
    nodes_needed = n + (1 if n * step < V_max * (1 - 1e-12) else 0)

    def scaled(v):
        return float(_scaled_D(params, np.array([v]))[0][0])

    roots: list[Root] = []
    prev_v = prev_f = None
    prev2_f = None
    start = 1
    while start <= nodes_needed:
        stop = min(start + chunk, nodes_needed + 1)
        k = np.arange(start, stop, dtype=float)
        v = np.minimum(k * step, V_max)
        f = _scaled_D(params, v)[0]
        if prev_v is not None:
            v = np.concatenate(([prev_v], v))
            f = np.concatenate(([prev_f], f))
            lead = 1
        else:
            lead = 0

        # exact zeros at nodes; no sign change across the node means a touch
        for i in np.flatnonzero(f[lead:] == 0.0) + lead:
            left = f[i - 1] if i > 0 else None
            right = f[i + 1] if i + 1 < len(f) else None
            touch = left is not None and right is not None and left * right > 0
            roots.append(_make_root(params, v[i], multiplicity=2 if touch else 1))
        sign_change = np.flatnonzero(f[:-1] * f[1:] < 0)
        for i in sign_change:
            r = brentq(scaled, v[i], v[i + 1], xtol=1e-300, rtol=ROOT_RTOL, maxiter=500)
            roots.append(_make_root(params, r))

        # tangential touches
        af = np.abs(f)
        cand = np.flatnonzero((af < 1e-13) & (af > 0))
        for i in cand:
            if i < lead:
                continue
            left = f[i - 1] if i > 0 else prev2_f
            right = f[i + 1] if i + 1 < len(f) else None
            if right is None:
                continue
            if left is not None and (abs(left) < af[i] or abs(right) < af[i]):
                continue
            same_sign = (left is None or left * f[i] > 0) and right * f[i] > 0
            if same_sign:
                roots.append(_make_root(params, v[i], multiplicity=2))

        prev2_f = f[-2] if len(f) > 1 else prev_f
        prev_v, prev_f = v[-1], f[-1]
        start = stop

    roots.sort(key=lambda r: r.V_c)
    deduped: list[Root] = []
    for r in roots:
        last = deduped[-1] if deduped else None
        if (last is not None and last.multiplicity == 1 and abs(r.V_c - last.V_c) <= 2.0 * step
                and abs(scaled(0.5 * (r.V_c + last.V_c))) < 1e-13):
            # rounding noise split a touch into two sign changes
            deduped[-1] = _make_root(params, 0.5 * (r.V_c + last.V_c), multiplicity=2)
            continue
        if last is not None and abs(r.V_c - last.V_c) <= 1e-12 * max(1.0, r.V_c):
            continue
        deduped.append(r)
    return deduped


def default_scan_window(params: Parameters) -> float:
    land = g_landscape(params)
    window = max(40.0, 4.0 * params.b * params.L)
    if land.Lambda_sharp is not None:
        window = max(window, 4.0 * land.Lambda_sharp)
    return window


@dataclass(frozen=True)
class Nondegeneracy:
    g_nonzero_at_dagger: bool
    D_prime_nonzero_at_dagger: bool


@dataclass(frozen=True)
class RegimeFlags:
    condA1: bool
    condA2: bool
    lemmaA3_no_root: bool
    gamma_degenerate_locus: bool
    nondegeneracy: Nondegeneracy | None


@dataclass(frozen=True)
class SparkReport:
    params: Parameters
    roots: tuple
    sparking_voltage: float | None
    anti_spark_candidates: tuple
    regime_flags: RegimeFlags
    V_max: float
    step: float
    window_closed: bool
    diagnostics: tuple = ()

    def as_dict(self) -> dict:
        nd = self.regime_flags.nondegeneracy
        return {
            "parameters": self.params.as_dict(),
            "roots": [r.as_dict() for r in self.roots],
            "sparking_voltage": self.sparking_voltage,
            "anti_spark_candidates": [r.as_dict() for r in self.anti_spark_candidates],
            "regime_flags": {
                "condA1": self.regime_flags.condA1,
                "condA2": self.regime_flags.condA2,
                "lemmaA3_no_root": self.regime_flags.lemmaA3_no_root,
                "gamma_degenerate_locus": self.regime_flags.gamma_degenerate_locus,
                "nondegeneracy": None if nd is None else {
                    "g_nonzero_at_dagger": nd.g_nonzero_at_dagger,
                    "D_prime_nonzero_at_dagger": nd.D_prime_nonzero_at_dagger,
                },
            },
            "window": {"V_max": self.V_max, "step": self.step, "closed": self.window_closed},
            "diagnostics": list(self.diagnostics),
        }


def _regime_flags(params: Parameters, dagger: float | None) -> RegimeFlags:
    a, b, L = params.a, params.b, params.L
    c = params.emission_ratio
    e = math.e
    # g at lambda = b exceeds pi^2/L^2; reduces to a > eb/4 + e pi^2/b at L = 1
    condA1 = a > e * b / 4.0 + e * math.pi**2 / (b * L**2)
    condA2 = c > math.exp(-a * L)
    lemmaA3 = a < e * b / 4.0 and c <= math.exp(-2.0 * a * L)

    degenerate = False
    land = g_landscape(params)
    for W in (land.Lambda_star, land.Lambda_sharp):
        if W is None:
            continue
        denom = math.expm1(W / 2.0) - W / 2.0
        if denom > 0 and abs(params.gamma - (1.0 + W / 2.0) / denom) < 1e-6:
            degenerate = True

    nd = None
    if dagger is not None:
        ev = eval_D(params, dagger)
        nd = Nondegeneracy(
            g_nonzero_at_dagger=abs(ev.g) > 1e-10,
            D_prime_nonzero_at_dagger=abs(ev.D_prime) > 1e-10,
        )
    return RegimeFlags(condA1=condA1, condA2=condA2, lemmaA3_no_root=lemmaA3,
                       gamma_degenerate_locus=degenerate, nondegeneracy=nd)


def sparking_report(params: Parameters, V_max: float | None = None, step: float = 1e-3) -> SparkReport:
    if V_max is None:
        V_max = default_scan_window(params)
    roots = scan_roots(params, V_max, step)
    dagger = roots[0].V_c if roots else None
    anti = tuple(r for r in roots[1:] if r.satisfies_positive1)
    flags = _regime_flags(params, dagger)

    diagnostics = []
    slope = math.exp(-params.a * params.L) - params.emission_ratio
    DE, DpE = _scaled_D(params, np.array([float(V_max)]))
    # derivative of exp(-V/2) D is exp(-V/2) (D' - D/2)
    trend = float(DpE[0] - 0.5 * DE[0])
    # past the last root of g the scaled D tends monotonically to `slope`;
    # negative there and either falling or already below the limit means
    # no further sign change
    beyond = float(g_of_voltage(params, V_max)) < 0
    closed = bool(slope < 0 and beyond and DE[0] < 0 and (trend <= 0 or DE[0] <= slope))
    # no root anywhere is already guaranteed in this region
    closed = closed or flags.lemmaA3_no_root
    if not closed:
        diagnostics.append(
            "scan window may miss roots: scaled D is not settled below zero at V_max"
        )
    if not roots and (flags.condA1 or flags.condA2):
        diagnostics.append(
            "inconsistency: a root is guaranteed but none was found; scan range too small"
        )
    if roots and flags.lemmaA3_no_root:
        diagnostics.append("inconsistency: roots found although the no-root condition holds")
    return SparkReport(
        params=params,
        roots=tuple(roots),
        sparking_voltage=dagger,
        anti_spark_candidates=anti,
        regime_flags=flags,
        V_max=float(V_max),
        step=float(step),
        window_closed=closed,
        diagnostics=tuple(diagnostics),
    )


@dataclass(frozen=True)
class DaggerBounds:
    V_c_dagger: float
    g_at_dagger: float
    B1_band: bool  # pi^2/(4L^2) < g(V_c^dagger) < pi^2/L^2
    B2_band: bool | None  # V_c^dagger < Lambda*, None when g has no root
    Lambda_star: float | None
    lower: float
    upper: float


def locate_dagger_bounds(params: Parameters, report: SparkReport) -> DaggerBounds:
    if report.sparking_voltage is None:
        raise NoSparkingVoltage("the report contains no root of D")
    V = report.sparking_voltage
    g = float(g_of_voltage(params, V))
    lower = math.pi**2 / (4.0 * params.L**2)
    upper = math.pi**2 / params.L**2
    land = g_landscape(params)
    return DaggerBounds(
        V_c_dagger=V,
        g_at_dagger=g,
        B1_band=lower < g < upper,
        B2_band=None if land.Lambda_star is None else V < land.Lambda_star,
        Lambda_star=land.Lambda_star,
        lower=lower,
        upper=upper,
    )
