"""Parameters, ionization coefficients, grid and field transforms.

The steady model is written in reduced variables

    R_e = rho_e * exp(lambda x / 2),    Phi = V + lambda x,

with lambda = V_c / L the mean field.  The ionization rate is
h(s) = a s exp(-b / s) and g(V_c) = h(V_c / L) - (V_c / L)**2 / 4.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidParameters

__all__ = [
    "Parameters",
    "LocalCoefficients",
    "GLandscape",
    "Grid",
    "SteadyState",
    "PhysicalFields",
    "ionization_rate",
    "ionization_rate_prime",
    "g_of_voltage",
    "g_prime_of_voltage",
    "eval_coefficients",
    "g_landscape",
    "to_physical",
    "from_physical",
    "trivial_state",
]

# relative tolerance for every bracketing root search in the package
ROOT_RTOL = 1e-12


@dataclass(frozen=True)
class Parameters:
    """Physical constants of the discharge model."""

    a: float
    b: float
    gamma: float
    k_i: float = 1.0
    k_e: float = 1.0
    L: float = 1.0

    def __post_init__(self):
        for name in ("a", "b", "gamma", "k_i", "k_e", "L"):
            value = getattr(self, name)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise InvalidParameters(f"{name} must be a real number, got {value!r}")
            if not math.isfinite(value):
                raise InvalidParameters(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        for name in ("a", "b", "k_i", "k_e", "L"):
            if getattr(self, name) <= 0:
                raise InvalidParameters(f"{name} must be positive, got {getattr(self, name)}")
        if self.gamma < 0:
            raise InvalidParameters(f"gamma must be nonnegative, got {self.gamma}")

    @property
    def emission_ratio(self) -> float:
        """gamma / (1 + gamma), the weight of secondary emission in D."""
        return self.gamma / (1.0 + self.gamma)

    def as_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "gamma": self.gamma,
                "k_i": self.k_i, "k_e": self.k_e, "L": self.L}


def ionization_rate(params: Parameters, s):
    """h(s) = a s exp(-b/s), extended by 0 at s = 0.  Vectorized."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    sp = s[pos]
    out[pos] = params.a * sp * np.exp(-params.b / sp)
    return out if out.ndim else float(out)


def ionization_rate_prime(params: Parameters, s):
    """dh/ds = a exp(-b/s) (1 + b/s), extended by 0 at s = 0.  Vectorized."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    sp = s[pos]
    out[pos] = params.a * np.exp(-params.b / sp) * (1.0 + params.b / sp)
    return out if out.ndim else float(out)


def g_of_voltage(params: Parameters, V_c):
    lam = np.asarray(V_c, dtype=float) / params.L
    return ionization_rate(params, lam) - lam**2 / 4.0


def g_prime_of_voltage(params: Parameters, V_c):
    """dg/dV_c."""
    lam = np.asarray(V_c, dtype=float) / params.L
    return (ionization_rate_prime(params, lam) - lam / 2.0) / params.L


@dataclass(frozen=True)
class LocalCoefficients:
    lam: float
    h: float
    h_prime: float
    g: float
    g_prime: float


def eval_coefficients(params: Parameters, lam: float) -> LocalCoefficients:
    if not isinstance(params, Parameters):
        raise InvalidParameters("params must be a Parameters instance")
    lam = float(lam)
    if not lam >= 0:
        raise InvalidParameters(f"lambda must be nonnegative, got {lam}")
    h = ionization_rate(params, lam)
    hp = ionization_rate_prime(params, lam)
    return LocalCoefficients(
        lam=lam,
        h=h,
        h_prime=hp,
        g=h - lam**2 / 4.0,
        g_prime=hp / params.L - lam / (2.0 * params.L),
    )


@dataclass(frozen=True)
class GLandscape:
    """Roots, interior maximum and pi^2/L^2 crossings of g (all in V_c units)."""

    root_count: int
    Lambda_star: float | None = None
    Lambda_sharp: float | None = None
    max_location: float | None = None
    max_value: float | None = None
    Vc_star: float | None = None
    Vc_sharp: float | None = None


def _bisect(f, lo, hi):
    return brentq(f, lo, hi, xtol=1e-300, rtol=ROOT_RTOL, maxiter=500)


def _expand_down(f, x, limit=1e-300):
    # shrink x until f(x) < 0
    while f(x) >= 0:
        x *= 0.5
        if x < limit:
            raise RuntimeError("failed to bracket root from below")
    return x


def _expand_up(f, x):
    while f(x) >= 0:
        x *= 2.0
        if not math.isfinite(x):
            raise RuntimeError("failed to bracket root from above")
    return x


def g_landscape(params: Parameters) -> GLandscape:
    a, b, L = params.a, params.b, params.L

    # log form of the sign of g: g(lambda L) > 0 iff G(lambda) > 0
    def G(lam):
        return -math.log(lam) - b / lam + math.log(a) + math.log(4.0)

    G_max = G(b)
    Lambda_star = Lambda_sharp = None
    if abs(G_max) <= 8 * np.finfo(float).eps * max(1.0, abs(math.log(4 * a))):
        root_count = 1
        Lambda_star = b * L
    elif G_max < 0:
        root_count = 0
    else:
        root_count = 2
        lo = _expand_down(G, b / 2.0)
        hi = _expand_up(G, 2.0 * b)
        Lambda_star = _bisect(G, lo, b) * L
        Lambda_sharp = _bisect(G, b, hi) * L

    # critical points of g solve h'(lambda) = lambda / 2; in log form
    # P(lambda) = log(2a) - b/lambda + log(1 + b/lambda) - log(lambda) is
    # unimodal with its peak where (b/lambda)^2 = 1 + b/lambda
    def P(lam):
        return math.log(2 * a) - b / lam + math.log1p(b / lam) - math.log(lam)

    lam_peak = b / ((1.0 + math.sqrt(5.0)) / 2.0)
    max_location = max_value = Vc_star = Vc_sharp = None
    if P(lam_peak) > 0:
        lam_min = _bisect(P, _expand_down(P, lam_peak / 2.0), lam_peak)
        lam_max = _bisect(P, lam_peak, _expand_up(P, 2.0 * lam_peak))
        max_location = lam_max * L
        max_value = float(g_of_voltage(params, max_location))
        level = math.pi**2 / L**2
        if max_value > level:
            def shifted(V):
                return float(g_of_voltage(params, V)) - level
            Vc_star = _bisect(shifted, lam_min * L, max_location)
            hi = max_location * 2.0
            while shifted(hi) >= 0:
                hi *= 2.0
            Vc_sharp = _bisect(shifted, max_location, hi)

    return GLandscape(
        root_count=root_count,
        Lambda_star=Lambda_star,
        Lambda_sharp=Lambda_sharp,
        max_location=max_location,
        max_value=max_value,
        Vc_star=Vc_star,
        Vc_sharp=Vc_sharp,
    )


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [0, L] with N cells and N + 1 nodes.

    Derivative stencils are second order: central in the interior and
    one-sided (three-point first derivative, four-point second derivative)
    at the two ends.  ``d1``/``d2`` act along axis 0.
    """

    n_cells: int
    L: float = 1.0

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 16:
            raise InvalidParameters(f"n_cells must be an integer >= 16, got {self.n_cells}")
        if not self.L > 0:
            raise InvalidParameters(f"L must be positive, got {self.L}")
        object.__setattr__(self, "n_cells", int(self.n_cells))
        object.__setattr__(self, "L", float(self.L))

    @property
    def N(self) -> int:
        return self.n_cells

    @property
    def h(self) -> float:
        return self.L / self.n_cells

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.linspace(0.0, self.L, self.n_cells + 1)
        x.setflags(write=False)
        return x

    def d1(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        h = self.h
        out = np.empty_like(f)
        out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
        out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
        out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
        return out

    def d2(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        h2 = self.h**2
        out = np.empty_like(f)
        out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / h2
        out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h2
        out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h2
        return out

    def cumtrapz(self, f: np.ndarray) -> np.ndarray:
        """Cumulative trapezoid integral from x = 0, along axis 0."""
        f = np.asarray(f, dtype=float)
        out = np.zeros_like(f)
        np.cumsum(0.5 * self.h * (f[1:] + f[:-1]), axis=0, out=out[1:])
        return out

    @cached_property
    def D1(self) -> np.ndarray:
        m = self.d1(np.eye(self.n_cells + 1))
        m.setflags(write=False)
        return m

    @cached_property
    def D2(self) -> np.ndarray:
        m = self.d2(np.eye(self.n_cells + 1))
        m.setflags(write=False)
        return m


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SteadyState:
    """Reduced unknowns (lambda, rho_i, R_e, V) sampled on grid nodes."""

    grid: Grid
    lam: float
    rho_i: np.ndarray
    R_e: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        n = self.grid.n_cells + 1
        object.__setattr__(self, "lam", float(self.lam))
        for name in ("rho_i", "R_e", "V"):
            arr = _frozen(getattr(self, name))
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
            object.__setattr__(self, name, arr)

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def field(self) -> np.ndarray:
        """dV/dx + lambda at the nodes."""
        return self.grid.d1(self.V) + self.lam

    @property
    def rho_e(self) -> np.ndarray:
        return self.R_e * np.exp(-self.lam * self.x / 2.0)

    @property
    def V_c(self) -> float:
        return self.lam * self.grid.L

    def boundary_defect(self) -> float:
        """Largest violation of rho_i(0) = R_e(0) = V(0) = V(L) = 0."""
        return float(max(abs(self.rho_i[0]), abs(self.R_e[0]), abs(self.V[0]), abs(self.V[-1])))

    def sup_norm(self) -> float:
        return float(max(np.max(np.abs(self.rho_i)), np.max(np.abs(self.R_e)), np.max(np.abs(self.V))))

    def replace(self, **changes) -> "SteadyState":
        values = dict(grid=self.grid, lam=self.lam, rho_i=self.rho_i, R_e=self.R_e, V=self.V)
        values.update(changes)
        return SteadyState(**values)


def trivial_state(grid: Grid, lam: float) -> SteadyState:
    z = np.zeros(grid.n_cells + 1)
    return SteadyState(grid, lam, z, z, z)


@dataclass(frozen=True)
class PhysicalFields:
    x: np.ndarray
    rho_i: np.ndarray
    rho_e: np.ndarray
    Phi: np.ndarray
    u_i: np.ndarray
    v_e: np.ndarray
    u_e: np.ndarray  # NaN where rho_e is below the floor


def to_physical(state: SteadyState, params: Parameters, floor: float = 1e-12) -> PhysicalFields:
    grid = state.grid
    x = grid.nodes
    lam = state.lam
    rho_e = state.R_e * np.exp(-lam * x / 2.0)
    Phi = state.V + lam * x
    dPhi = grid.d1(Phi)
    u_i = params.k_i * dPhi
    v_e = -params.k_e * dPhi
    u_e = np.full_like(x, np.nan)
    peak = np.max(rho_e) if rho_e.size else 0.0
    mask = rho_e > floor * peak
    if peak > 0 and np.any(mask):
        drho = grid.d1(rho_e)
        u_e[mask] = v_e[mask] - params.k_e * drho[mask] / rho_e[mask]
    return PhysicalFields(
        x=_frozen(x),
        rho_i=_frozen(state.rho_i),
        rho_e=_frozen(rho_e),
        Phi=_frozen(Phi),
        u_i=_frozen(u_i),
        v_e=_frozen(v_e),
        u_e=_frozen(u_e),
    )


def from_physical(grid: Grid, lam: float, rho_i, rho_e, Phi) -> SteadyState:
    """Inverse of :func:`to_physical` on the densities and potential."""
    x = grid.nodes
    return SteadyState(
        grid=grid,
        lam=lam,
        rho_i=np.asarray(rho_i, dtype=float),
        R_e=np.asarray(rho_e, dtype=float) * np.exp(lam * x / 2.0),
        V=np.asarray(Phi, dtype=float) - lam * x,
    )
