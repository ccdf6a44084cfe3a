"""Continuation of the branch of nontrivial steady states.

The branch leaves the trivial solution at the sparking voltage along the
null basis.  It is followed with Keller's pseudo-arclength method: a secant
predictor and a Newton corrector on the system bordered by the arclength
condition.  After every accepted point the tracer checks, in a fixed
order, whether the branch closed on itself, returned to the trivial
solution at another root of D, let the mean field or the local field
degenerate, or blew up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

from .errors import (DomainViolation, InvalidParameters, NoConvergence, NoSparkingVoltage,
                     NotApplicable, SeedFailure, SingularJacobian, WrongTerminationKind)
from .linear import NullBasis, null_basis
from .model import Parameters, SteadyState
from .solver import (Amplitude, Arclength, Layout, SolverConfig, newton_solve,
                     positivity_check)
from .sparking import SparkReport, sparking_report

__all__ = [
    "TERMINATION_KINDS",
    "Limits",
    "BranchPoint",
    "Termination",
    "Branch",
    "seed_branch",
    "trace_branch",
    "bounded_density_diagnostic",
    "halfloop_cross_check",
    "CrossCheck",
    "DensityDiagnostic",
]

TERMINATION_KINDS = ("LoopClosed", "HalfLoop", "LambdaToZero", "FieldDegeneracy",
                     "BlowUp", "Budget", "SolverFailure")

_SOLVE_ERRORS = (NoConvergence, DomainViolation, SingularJacobian)


@dataclass(frozen=True)
class Limits:
    max_steps: int = 2000
    norm_ceiling: float = 1e6
    lambda_floor: float = 1e-6
    field_floor: float = 1e-8
    trivial_tol: float | None = None  # default 1e-7 (1 + V_c^dagger)
    ds_initial: float = 1e-2
    ds_min: float = 1e-6
    ds_max: float = 0.5
    grow: float = 1.3
    fast_iterations: int = 3

    def __post_init__(self):
        if int(self.max_steps) < 1:
            raise InvalidParameters("max_steps must be at least 1")
        for name in ("norm_ceiling", "lambda_floor", "field_floor", "ds_initial", "ds_min", "ds_max"):
            if not getattr(self, name) > 0:
                raise InvalidParameters(f"{name} must be positive")
        if self.trivial_tol is not None and not self.trivial_tol > 0:
            raise InvalidParameters("trivial_tol must be positive")
        if not self.ds_min <= self.ds_initial <= self.ds_max:
            raise InvalidParameters("ds_initial must lie in [ds_min, ds_max]")
        if not self.grow >= 1:
            raise InvalidParameters("grow must be at least 1")

    def resolved_trivial_tol(self, V_dagger: float) -> float:
        return self.trivial_tol if self.trivial_tol is not None else 1e-7 * (1.0 + V_dagger)


@dataclass(frozen=True)
class BranchPoint:
    s: float
    state: SteadyState
    residual: float = 0.0
    iterations: int = 0
    amplitude: float = 0.0  # <R_e, phi_e> / <phi_e, phi_e> on the grid

    @property
    def diagnostics(self) -> dict:
        st = self.state
        rho_e = np.asarray(st.rho_e)
        pos = positivity_check(st)
        return {
            "min_field": float(np.min(st.field)),
            "sup_rho_i": float(np.max(np.abs(st.rho_i))),
            "sup_rho_e": float(np.max(np.abs(rho_e))),
            "l1_rho_e": float(trapezoid(np.abs(rho_e), st.grid.nodes)),
            "sup_V": float(np.max(np.abs(st.V))),
            "lambda": st.lam,
            "positive": pos.rho_i_positive and pos.rho_e_positive,
        }


@dataclass(frozen=True)
class Termination:
    kind: str
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TERMINATION_KINDS:
            raise InvalidParameters(f"unknown termination kind {self.kind!r}")


@dataclass
class Branch:
    points: list
    termination: Termination | None
    start: dict

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.state.lam for p in self.points])


def _amplitude(state: SteadyState, direction: np.ndarray) -> float:
    return float(np.dot(state.R_e, direction) / np.dot(direction, direction))


def _dagger(params: Parameters, spark: SparkReport | None):
    if spark is None:
        spark = sparking_report(params)
    if spark.sparking_voltage is None:
        raise NoSparkingVoltage("no root of D in the scan window")
    return spark, spark.sparking_voltage


def seed_branch(params: Parameters, spark: SparkReport | None, config: SolverConfig,
                s0: float = 1e-3, sign: int = 1, basis: NullBasis | None = None) -> BranchPoint:
    """First nontrivial point: s0 times the null basis, corrected by Newton.

    The amplitude <R_e, phi_e>/<phi_e, phi_e> is held at sign*s0 while
    lambda is free.  The positive seed must have strictly positive
    densities.  A negative seed is returned as computed (its densities are
    negative) so callers can record it.
    """
    spark, V = _dagger(params, spark)
    root = next(r for r in spark.roots if r.V_c == V)
    if not root.satisfies_positive1:
        raise SeedFailure("the sparking voltage does not admit a positive null basis")
    if sign not in (1, -1):
        raise InvalidParameters("sign must be +1 or -1")
    nb = basis if basis is not None else null_basis(params, V, config.grid)
    errors = []
    for trial in (s0, s0 / 2.0, s0 / 4.0):
        s = sign * trial
        guess = SteadyState(config.grid, nb.lam, s * nb.phi_i, s * nb.phi_e, s * nb.phi_v)
        try:
            res = newton_solve(guess, params, config, Amplitude(s, nb.phi_e))
        except _SOLVE_ERRORS as exc:
            errors.append(f"s0={trial:g}: {exc}")
            continue
        point = BranchPoint(s=trial, state=res.state, residual=res.residual_norms[-1],
                            iterations=res.iterations, amplitude=s)
        if sign > 0 and not point.diagnostics["positive"]:
            errors.append(f"s0={trial:g}: corrected state is not positive")
            continue
        return point
    raise SeedFailure("seeding failed: " + "; ".join(errors))


def _wnorm(layout: Layout, dvec: np.ndarray, dlam: float) -> float:
    return math.sqrt(float(np.dot(layout.weights() * dvec, dvec)) + dlam**2)


def _pack_basis(layout: Layout, nb: NullBasis) -> np.ndarray:
    st = SteadyState(layout.grid, nb.lam, nb.phi_i, nb.phi_e, nb.phi_v)
    return layout.pack(st)


def trace_branch(params: Parameters, config: SolverConfig, limits: Limits | None = None,
                 spark: SparkReport | None = None, s0: float = 1e-3, direction: int = 1,
                 progress: Callable | None = None) -> Branch:
    """Follow the bifurcating branch until one of the termination tests fires."""
    limits = limits or Limits()
    spark, V_dag = _dagger(params, spark)
    if direction not in (1, -1):
        raise InvalidParameters("direction must be +1 or -1")
    if config.domain_margin is None:
        # the classifier, not the solver guard, decides field degeneracy
        config = SolverConfig(grid=config.grid, newton_tol=config.newton_tol,
                              max_iters=config.max_iters, domain_margin=limits.field_floor,
                              damping=config.damping, min_step=config.min_step, mode=config.mode)
    layout = config.layout
    nb = null_basis(params, V_dag, config.grid)
    triv = limits.resolved_trivial_tol(V_dag)
    start = {"V_c_dagger": V_dag, "null_basis": nb, "s0": s0, "direction": direction,
             "trivial_tol": triv}

    first = seed_branch(params, spark, config, s0=s0, sign=direction, basis=nb)
    points = [first]
    lam0 = first.state.lam

    vec = layout.pack(first.state)
    lam = first.state.lam
    t_vec = direction * _pack_basis(layout, nb)
    t_lam = 0.0
    nrm = _wnorm(layout, t_vec, t_lam)
    t_vec, t_lam = t_vec / nrm, t_lam / nrm
    tangents = [(t_vec, t_lam)]

    ds = limits.ds_initial
    s = first.s
    termination = None
    steps = 0
    while termination is None:
        if steps >= limits.max_steps:
            termination = Termination("Budget", {"steps": steps, "max_steps": limits.max_steps})
            break
        try:
            res = _corrector(params, config, layout, vec, lam, t_vec, t_lam, ds)
        except _SOLVE_ERRORS as exc:
            ds /= 2.0
            if ds < limits.ds_min:
                termination = Termination("SolverFailure", {"reason": str(exc), "ds": ds,
                                                            "steps": steps})
            continue
        new_vec = layout.pack(res.state)
        new_lam = res.state.lam
        steps += 1

        amp_prev = points[-1].amplitude
        amp = _amplitude(res.state, nb.phi_e)
        if amp_prev * amp < 0 or (abs(amp) < triv and res.state.sup_norm() < triv):
            # the branch reached (or stepped across) the trivial solution
            hit = _locate_trivial(params, config, layout, vec, lam, t_vec, t_lam, ds, nb.phi_e)
            if hit is not None:
                hit_res, hit_ds = hit
                s_hit = s + hit_ds
                hit_point = BranchPoint(s=s_hit, state=hit_res.state,
                                        residual=hit_res.residual_norms[-1],
                                        iterations=hit_res.iterations,
                                        amplitude=_amplitude(hit_res.state, nb.phi_e))
                termination = _classify_trivial(params, spark, hit_point, lam0, triv, V_dag)
                if termination is not None:
                    points.append(hit_point)
                    break

        secant = new_vec - vec
        dl = new_lam - lam
        nrm = _wnorm(layout, secant, dl)
        t_vec, t_lam = secant / nrm, dl / nrm
        vec, lam = new_vec, new_lam
        s += ds
        point = BranchPoint(s=s, state=res.state, residual=res.residual_norms[-1],
                            iterations=res.iterations, amplitude=amp)
        points.append(point)
        tangents.append((t_vec, t_lam))
        if progress is not None:
            progress(point)

        termination = _classify(point, points, tangents, limits, triv, lam0, V_dag)
        if termination is None and res.iterations <= limits.fast_iterations:
            ds = min(ds * limits.grow, limits.ds_max)

    return Branch(points=points, termination=termination, start=start)


def _corrector(params, config, layout, vec, lam, t_vec, t_lam, ds):
    guess = layout.unpack(vec + ds * t_vec, lam + ds * t_lam)
    con = Arclength(prev=vec, prev_lam=lam, tangent=t_vec, tangent_lam=t_lam, ds=ds)
    return newton_solve(guess, params, config, con)


def _locate_trivial(params, config, layout, vec, lam, t_vec, t_lam, ds, direction):
    """Secant search on the step length for the point where the amplitude vanishes."""
    def amp_at(step):
        res = _corrector(params, config, layout, vec, lam, t_vec, t_lam, step)
        return _amplitude(res.state, direction), res

    try:
        a0 = _amplitude(layout.unpack(vec, lam), direction)
        lo, hi = 0.0, ds
        f_lo = a0
        f_hi, res = amp_at(hi)
        best = (abs(f_hi), res, hi)
        for _ in range(60):
            if f_hi == f_lo:
                break
            nxt = hi - f_hi * (hi - lo) / (f_hi - f_lo)
            if not (0.0 < nxt < 2.0 * ds):
                nxt = 0.5 * (lo + hi)
            lo, f_lo = hi, f_hi
            hi = nxt
            f_hi, res = amp_at(hi)
            if abs(f_hi) < best[0]:
                best = (abs(f_hi), res, hi)
            if abs(f_hi) < 1e-14 or abs(hi - lo) < 1e-15 * ds:
                break
        return best[1], best[2]
    except _SOLVE_ERRORS:
        return None


def _classify_trivial(params, spark, point, lam0, triv, V_dag):
    st = point.state
    if st.sup_norm() >= triv:
        return None
    V_hit = st.lam * params.L
    nearest = min(spark.roots, key=lambda r: abs(r.V_c - V_hit)) if spark.roots else None
    details = {
        "V_c_ddagger": V_hit,
        "nearest_root": None if nearest is None else nearest.V_c,
        "root_distance": None if nearest is None else abs(V_hit - nearest.V_c),
        "root_satisfies_positive1": None if nearest is None else nearest.satisfies_positive1,
        "sup_norm": st.sup_norm(),
    }
    if st.lam > lam0:
        return Termination("HalfLoop", details)
    details["note"] = "returned to the trivial solution at or below the starting voltage"
    return Termination("LoopClosed", details)


def _classify(point, points, tangents, limits, triv, lam0, V_dag):
    d = point.diagnostics
    st = point.state
    # a return to an earlier point moving in the same direction closes a loop
    t_vec, t_lam = tangents[-1]
    for k, old in enumerate(points[:-3]):
        if (abs(old.state.lam - st.lam) < triv and abs(old.amplitude - point.amplitude) < triv):
            o_vec, o_lam = tangents[k]
            if float(np.dot(o_vec, t_vec)) + o_lam * t_lam > 0:
                return Termination("LoopClosed", {"matched_index": k, "lambda": st.lam})
    if st.sup_norm() < triv and st.lam > lam0:
        return Termination("HalfLoop", {"V_c_ddagger": st.lam * st.grid.L,
                                        "sup_norm": st.sup_norm()})
    if st.lam < limits.lambda_floor:
        return Termination("LambdaToZero", {"lambda": st.lam})
    if d["min_field"] < limits.field_floor:
        return Termination("FieldDegeneracy", {"min_field": d["min_field"]})
    size = d["sup_rho_i"] + d["sup_rho_e"] + st.lam
    if size > limits.norm_ceiling or d["sup_V"] > limits.norm_ceiling:
        return Termination("BlowUp", {"norm": size, "sup_V": d["sup_V"],
                                      "ceiling": limits.norm_ceiling})
    return None


@dataclass(frozen=True)
class CrossCheck:
    ok: bool
    reason: str
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ok


def halfloop_cross_check(branch: Branch, spark: SparkReport, params: Parameters | None = None,
                         cos_tol: float = 0.9) -> CrossCheck:
    """Consistency of a half-loop ending with the roots of D.

    Requires V_c^ddagger above the sparking voltage, a root of D within
    1e-6 relative that satisfies g < pi^2/L^2, positive densities before
    the end, and an exit direction aligned with minus the null basis at
    the new root.
    """
    term = branch.termination
    if term is None or term.kind != "HalfLoop":
        raise WrongTerminationKind(f"termination is {None if term is None else term.kind}, not HalfLoop")
    V_hit = term.details["V_c_ddagger"]
    V_dag = branch.start["V_c_dagger"]
    if abs(V_hit - V_dag) <= 1e-6 * V_dag or V_hit < V_dag:
        return CrossCheck(False, "returned to start")
    matches = [r for r in spark.roots if abs(r.V_c - V_hit) <= 1e-6 * r.V_c]
    if not matches:
        return CrossCheck(False, "no root of D near the recorded voltage", {"V_c_ddagger": V_hit})
    root = matches[0]
    if not root.satisfies_positive1:
        return CrossCheck(False, "root violates g < pi^2/L^2", {"g": root.g})
    before = branch.points[:-1]
    if not all(p.diagnostics["positive"] for p in before[1:]):
        return CrossCheck(False, "densities lost positivity before the end")
    if params is None:
        params = spark.params
    if len(before) >= 1:
        grid = branch.points[-1].state.grid
        nb = null_basis(params, root.V_c, grid)
        last, prev = branch.points[-1].state, before[-1].state
        d = np.concatenate([last.rho_i - prev.rho_i, last.R_e - prev.R_e])
        ref = -np.concatenate([nb.phi_i, nb.phi_e])
        cos = float(np.dot(d, ref) / (np.linalg.norm(d) * np.linalg.norm(ref)))
        if cos < cos_tol:
            return CrossCheck(False, "exit direction does not match the null basis", {"cos": cos})
    return CrossCheck(True, "consistent", {"V_c_ddagger": V_hit, "root": root.V_c})


@dataclass(frozen=True)
class DensityDiagnostic:
    hypothesis_holds: bool  # gamma/(1+gamma) != exp(-aL)
    values: tuple  # sup rho_i + int rho_e over the last quartile
    lambdas: tuple
    decreasing: bool


def bounded_density_diagnostic(branch: Branch, params: Parameters) -> DensityDiagnostic:
    """Trend of sup|rho_i| + int|rho_e| over the last quartile of a branch.

    Only meaningful for branches whose mean field keeps growing with
    bounded densities; a half-loop or a shrinking tail is rejected.
    """
    term = branch.termination
    if term is not None and term.kind == "HalfLoop":
        raise NotApplicable("branch ended in a half-loop")
    pts = branch.points
    if len(pts) < 4:
        raise NotApplicable("too few points for a tail trend")
    tail = pts[len(pts) - max(2, len(pts) // 4):]
    lams = np.array([p.state.lam for p in tail])
    q = np.array([p.diagnostics["sup_rho_i"] + p.diagnostics["l1_rho_e"] for p in tail])
    if not lams[-1] > lams[0]:
        raise NotApplicable("lambda is not growing along the tail")
    if not np.all(np.isfinite(q)) or (term is not None and term.kind == "BlowUp"):
        raise NotApplicable("densities are not bounded along the tail")
    hyp = abs(params.emission_ratio - math.exp(-params.a * params.L)) > 1e-12
    return DensityDiagnostic(hypothesis_holds=hyp, values=tuple(map(float, q)),
                             lambdas=tuple(map(float, lams)),
                             decreasing=bool(np.all(np.diff(q) < 0)))
