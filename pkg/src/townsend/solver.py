"""Discrete steady-state equations and a damped Newton solver.

Unknowns live on the uniform grid.  Boundary values fixed by the problem
(rho_i(0) = R_e(0) = V(0) = V(L) = 0) are eliminated, so the unknown vector
is

    reduced mode:  [R_1 .. R_N, V_1 .. V_{N-1}]
    full mode:     [rho_1 .. rho_N, R_1 .. R_N, V_1 .. V_{N-1}]

optionally followed by lambda.  In reduced mode the ion density is
eliminated through

    rho_i(x) = (k_e/k_i) / (V' + lambda) * int_0^x h(V' + lambda) e^{-lambda y/2} R_e dy

evaluated by cumulative trapezoid, and the cathode condition becomes
R_e'(L) + (V'(L) + lambda/2) R_e(L) = gamma e^{lambda L/2} int_0^L (same integrand).
The Jacobian is assembled analytically as a dense matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DomainViolation, InvalidParameters, NoConvergence, SingularJacobian
from .model import Grid, Parameters, SteadyState, ionization_rate, ionization_rate_prime

__all__ = [
    "Residual",
    "Jacobian",
    "SolverConfig",
    "FixedLambda",
    "Amplitude",
    "Arclength",
    "NewtonResult",
    "Positivity",
    "Layout",
    "assemble_residual",
    "assemble_jacobian",
    "newton_solve",
    "positivity_check",
    "reconstruct_rho_i",
]

MODES = ("reduced", "full")


@dataclass(frozen=True)
class Layout:
    """Maps between SteadyState objects and flat unknown vectors."""

    grid: Grid
    mode: str = "reduced"

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidParameters(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def n_state(self) -> int:
        N = self.grid.n_cells
        return (2 * N - 1) if self.mode == "reduced" else (3 * N - 1)

    def pack(self, state: SteadyState) -> np.ndarray:
        parts = [state.R_e[1:], state.V[1:-1]]
        if self.mode == "full":
            parts.insert(0, state.rho_i[1:])
        return np.concatenate(parts)

    def unpack(self, vec: np.ndarray, lam: float, params: Parameters | None = None) -> SteadyState:
        N = self.grid.n_cells
        vec = np.asarray(vec, dtype=float)
        off = 0
        rho = np.zeros(N + 1)
        if self.mode == "full":
            rho[1:] = vec[:N]
            off = N
        R = np.zeros(N + 1)
        R[1:] = vec[off:off + N]
        V = np.zeros(N + 1)
        V[1:-1] = vec[off + N:off + 2 * N - 1]
        state = SteadyState(self.grid, lam, rho, R, V)
        if self.mode == "reduced" and params is not None:
            state = state.replace(rho_i=reconstruct_rho_i(state, params))
        return state

    def weights(self) -> np.ndarray:
        """Quadrature weights of the bordered inner product on state unknowns."""
        return np.full(self.n_state, self.grid.h)


@dataclass(frozen=True)
class Residual:
    F1: np.ndarray | None  # nodes 1..N, full mode only
    F2: np.ndarray  # interior nodes
    F3: np.ndarray  # interior nodes
    F4: float
    rho_i: np.ndarray  # ion density used (reconstructed in reduced mode)

    def vector(self) -> np.ndarray:
        parts = [self.F2, [self.F4], self.F3]
        if self.F1 is not None:
            parts.insert(0, self.F1)
        return np.concatenate(parts)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.vector())))


@dataclass
class _Fields:
    x: np.ndarray
    lam: float
    R: np.ndarray
    V: np.ndarray
    Rp: np.ndarray
    Rpp: np.ndarray
    Vp: np.ndarray
    Vpp: np.ndarray
    w: np.ndarray
    E: np.ndarray
    hw: np.ndarray
    hpw: np.ndarray


def _fields(state: SteadyState, params: Parameters, margin: float) -> _Fields:
    grid = state.grid
    lam = state.lam
    R, V = np.asarray(state.R_e), np.asarray(state.V)
    Vp = grid.d1(V)
    w = Vp + lam
    wmin = float(np.min(w))
    if not (wmin > 0 and wmin >= margin) or not np.isfinite(wmin):
        raise DomainViolation(
            f"field V' + lambda drops to {wmin:.3e}, below the margin {margin:.3e}", min_field=wmin)
    x = np.asarray(grid.nodes)
    return _Fields(
        x=x, lam=lam, R=R, V=V, Rp=grid.d1(R), Rpp=grid.d2(R), Vp=Vp, Vpp=grid.d2(V), w=w,
        E=np.exp(-lam * x / 2.0),
        hw=ionization_rate(params, w), hpw=ionization_rate_prime(params, w),
    )


def reconstruct_rho_i(state: SteadyState, params: Parameters) -> np.ndarray:
    """Ion density from the integral formula (cumulative trapezoid)."""
    f = _fields(state, params, 0.0)
    Q = state.grid.cumtrapz(f.hw * f.E * f.R)
    return params.k_e / params.k_i * Q / f.w


def _residual_parts(state: SteadyState, params: Parameters, mode: str, f: _Fields):
    grid = state.grid
    lam = f.lam
    K = math.exp(lam * grid.L / 2.0)
    F2 = -f.Rpp - f.Vp * f.Rp + (lam / 2.0 * f.Vp - f.Vpp + lam**2 / 4.0 - f.hw) * f.R
    if mode == "reduced":
        Q = grid.cumtrapz(f.hw * f.E * f.R)
        rho = params.k_e / params.k_i * Q / f.w
        F1 = None
        F4 = f.Rp[-1] + (f.Vp[-1] + lam / 2.0) * f.R[-1] - params.gamma * K * Q[-1]
    else:
        rho = np.asarray(state.rho_i)
        Q = None
        F1 = params.k_i * grid.d1(f.w * rho) - params.k_e * f.hw * f.E * f.R
        F4 = (f.Rp[-1] + (f.Vp[-1] + lam / 2.0) * f.R[-1]
              - params.gamma * params.k_i / params.k_e * K * f.w[-1] * rho[-1])
    F3 = f.Vpp - rho + f.E * f.R
    return F1, F2, F3, float(F4), rho, Q


def assemble_residual(state: SteadyState, params: Parameters, mode: str = "reduced",
                      margin: float = 0.0) -> Residual:
    """Discrete residual of the steady equations at ``state``."""
    if mode not in MODES:
        raise InvalidParameters(f"mode must be one of {MODES}, got {mode!r}")
    f = _fields(state, params, margin)
    F1, F2, F3, F4, rho, _ = _residual_parts(state, params, mode, f)
    return Residual(
        F1=None if F1 is None else F1[1:],
        F2=F2[1:-1], F3=F3[1:-1], F4=F4, rho_i=rho,
    )


@dataclass(frozen=True)
class Jacobian:
    """Dense Jacobian of the residual vector.

    ``J`` has one column per state unknown; ``J_lam`` is the derivative
    with respect to lambda.
    """

    J: np.ndarray
    J_lam: np.ndarray
    residual: Residual

    def full(self) -> np.ndarray:
        return np.column_stack([self.J, self.J_lam])


def _jacobian(state: SteadyState, params: Parameters, mode: str, f: _Fields, extra_rows: int = 0):
    """Dense [J | dF/dlambda], with ``extra_rows`` zero rows appended for a constraint."""
    grid = state.grid
    N = grid.n_cells
    L = grid.L
    lam = f.lam
    x = f.x
    D1, D2 = grid.D1, grid.D2
    K = math.exp(lam * L / 2.0)
    gam, ki, ke = params.gamma, params.k_i, params.k_e
    F1, F2, F3, F4, rho, Q = _residual_parts(state, params, mode, f)
    ER = f.E * f.R

    # electron equation, shared by both modes
    J2R = -D2 - f.Vp[:, None] * D1
    J2R[np.diag_indices(N + 1)] += lam / 2.0 * f.Vp - f.Vpp + lam**2 / 4.0 - f.hw
    J2V = -f.Rp[:, None] * D1 + f.R[:, None] * ((lam / 2.0 - f.hpw)[:, None] * D1 - D2)
    J2l = (f.Vp / 2.0 + lam / 2.0 - f.hpw) * f.R

    dsig_l = f.hpw * ER - x / 2.0 * f.hw * ER
    J4R = D1[-1].copy()
    J4R[-1] += f.Vp[-1] + lam / 2.0
    J4V = f.R[-1] * D1[-1]

    if mode == "reduced":
        c = ke / ki
        dQ_R = grid.cumtrapz(np.diag(f.hw * f.E))
        dQ_V = grid.cumtrapz((f.hpw * ER)[:, None] * D1)
        dQ_l = grid.cumtrapz(dsig_l)
        drho_R = c * dQ_R / f.w[:, None]
        drho_V = c * (dQ_V / f.w[:, None] - (Q / f.w**2)[:, None] * D1)
        drho_l = c * (dQ_l / f.w - Q / f.w**2)
        J3R = -drho_R
        J3R[np.diag_indices(N + 1)] += f.E
        J3V = D2 - drho_V
        J3l = -drho_l - x / 2.0 * ER
        J4R = J4R - gam * K * dQ_R[-1]
        J4V = J4V - gam * K * dQ_V[-1]
        J4l = f.R[-1] / 2.0 - gam * L / 2.0 * K * Q[-1] - gam * K * dQ_l[-1]

        n = 2 * N - 1
        A = np.zeros((n + extra_rows, n + 1))
        A[:N - 1, :N] = J2R[1:-1, 1:]
        A[N - 1, :N] = J4R[1:]
        A[N:n, :N] = J3R[1:-1, 1:]
        A[:N - 1, N:n] = J2V[1:-1, 1:-1]
        A[N - 1, N:n] = J4V[1:-1]
        A[N:n, N:n] = J3V[1:-1, 1:-1]
        A[:N - 1, n] = J2l[1:-1]
        A[N - 1, n] = J4l
        A[N:n, n] = J3l[1:-1]
        return A, Residual(None, F2[1:-1], F3[1:-1], F4, rho)

    # full mode: ion transport written out
    J1rho = ki * D1 * f.w[None, :]
    J1R = np.diag(-ke * f.hw * f.E)
    J1V = ki * (D1 * rho[None, :]) @ D1 - ke * (f.hpw * ER)[:, None] * D1
    J1l = ki * D1 @ rho - ke * dsig_l
    J3rho = -np.eye(N + 1)
    J3R = np.diag(f.E)
    J3V = D2
    J3l = -x / 2.0 * ER
    coef = gam * ki / ke * K
    J4rho = np.zeros(N + 1)
    J4rho[-1] = -coef * f.w[-1]
    J4V = J4V - coef * rho[-1] * D1[-1]
    J4l = f.R[-1] / 2.0 - coef * (L / 2.0 * f.w[-1] + 1.0) * rho[-1]
    n = 3 * N - 1
    A = np.zeros((n + extra_rows, n + 1))
    r2, r4, r3 = slice(N, 2 * N - 1), 2 * N - 1, slice(2 * N, n)
    c_rho, c_R, c_V = slice(0, N), slice(N, 2 * N), slice(2 * N, n)
    A[:N, c_rho] = J1rho[1:, 1:]
    A[:N, c_R] = J1R[1:, 1:]
    A[:N, c_V] = J1V[1:, 1:-1]
    A[:N, n] = J1l[1:]
    A[r2, c_R] = J2R[1:-1, 1:]
    A[r2, c_V] = J2V[1:-1, 1:-1]
    A[r2, n] = J2l[1:-1]
    A[r4, c_rho] = J4rho[1:]
    A[r4, c_R] = J4R[1:]
    A[r4, c_V] = J4V[1:-1]
    A[r4, n] = J4l
    A[r3, c_rho] = J3rho[1:-1, 1:]
    A[r3, c_R] = J3R[1:-1, 1:]
    A[r3, c_V] = J3V[1:-1, 1:-1]
    A[r3, n] = J3l[1:-1]
    return A, Residual(F1[1:], F2[1:-1], F3[1:-1], F4, rho)


def assemble_jacobian(state: SteadyState, params: Parameters, mode: str = "reduced",
                      margin: float = 0.0) -> Jacobian:
    """Analytic derivative of the residual vector with respect to the unknowns."""
    if mode not in MODES:
        raise InvalidParameters(f"mode must be one of {MODES}, got {mode!r}")
    f = _fields(state, params, margin)
    A, res = _jacobian(state, params, mode, f)
    return Jacobian(J=A[:, :-1], J_lam=A[:, -1], residual=res)


@dataclass(frozen=True)
class SolverConfig:
    grid: Grid
    newton_tol: float = 1e-10
    max_iters: int = 40
    domain_margin: float | None = None  # default 1e-6 * lambda of the guess
    damping: float = 0.5
    min_step: float = 1e-8
    mode: str = "reduced"

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise InvalidParameters("newton_tol must be positive")
        if int(self.max_iters) < 1:
            raise InvalidParameters("max_iters must be at least 1")
        if self.domain_margin is not None and not self.domain_margin > 0:
            raise InvalidParameters("domain_margin must be positive")
        if not 0 < self.damping < 1:
            raise InvalidParameters("damping must lie in (0, 1)")
        if not 0 < self.min_step < 1:
            raise InvalidParameters("min_step must lie in (0, 1)")
        if self.mode not in MODES:
            raise InvalidParameters(f"mode must be one of {MODES}")

    @property
    def layout(self) -> Layout:
        return Layout(self.grid, self.mode)


@dataclass(frozen=True)
class FixedLambda:
    """Solve at the lambda of the guess."""


@dataclass(frozen=True)
class Amplitude:
    """Fix <R_e, direction>_h / <direction, direction>_h = value; lambda is free."""

    value: float
    direction: np.ndarray  # node samples, typically the electron part of the null basis

    def evaluate(self, state: SteadyState, grid: Grid):
        d = np.asarray(self.direction, dtype=float)
        norm = float(np.dot(d, d))
        return float(np.dot(state.R_e, d)) / norm - self.value, d / norm


@dataclass(frozen=True)
class Arclength:
    """Pseudo-arclength condition <t_u, u - u0>_w + t_lam (lam - lam0) = ds."""

    prev: np.ndarray  # packed unknowns at the previous point
    prev_lam: float
    tangent: np.ndarray
    tangent_lam: float
    ds: float


@dataclass(frozen=True)
class NewtonResult:
    state: SteadyState
    iterations: int
    residual_norms: tuple
    converged: bool = True
    at_floor: bool = False  # stopped at the rounding floor above newton_tol


def _roundoff_floor(layout: Layout, vec: np.ndarray) -> float:
    """Residual level set by rounding the unknowns before the 1/h^2 stencils."""
    return 16.0 * np.finfo(float).eps * float(np.max(np.abs(vec), initial=0.0)) / layout.grid.h**2


def _constraint(constraint, layout: Layout, vec: np.ndarray, lam: float, state: SteadyState):
    """Constraint value and its gradient (state part, lambda part)."""
    if isinstance(constraint, Amplitude):
        val, dR = constraint.evaluate(state, layout.grid)
        grad = np.zeros(layout.n_state)
        off = layout.grid.n_cells if layout.mode == "full" else 0
        grad[off:off + layout.grid.n_cells] = dR[1:]
        return val, grad, 0.0
    if isinstance(constraint, Arclength):
        w = layout.weights()
        val = (float(np.dot(w * constraint.tangent, vec - constraint.prev))
               + constraint.tangent_lam * (lam - constraint.prev_lam) - constraint.ds)
        return val, w * constraint.tangent, constraint.tangent_lam
    raise InvalidParameters(f"unknown constraint {constraint!r}")


def _system(params, layout, vec, lam, constraint, margin, want_jac):
    state = layout.unpack(vec, lam)
    f = _fields(state, params, margin)
    if want_jac:
        A, res = _jacobian(state, params, layout.mode, f, extra_rows=int(constraint is not None))
    else:
        F1, F2, F3, F4, rho, _ = _residual_parts(state, params, layout.mode, f)
        res = Residual(None if F1 is None else F1[1:], F2[1:-1], F3[1:-1], F4, rho)
        A = None
    F = res.vector()
    if constraint is None:
        return F, (None if A is None else A[:, :-1]), res
    cval, cgrad, clam = _constraint(constraint, layout, vec, lam, state)
    F = np.append(F, cval)
    if want_jac:
        A[-1, :-1] = cgrad
        A[-1, -1] = clam
    return F, A, res


def newton_solve(guess: SteadyState, params: Parameters, config: SolverConfig,
                 constraint=None) -> NewtonResult:
    """Damped Newton iteration on the discrete steady equations.

    ``constraint`` is None or FixedLambda (lambda held at the guess value),
    Amplitude or Arclength (lambda becomes an unknown).  Steps are halved
    until the iterate stays in the admissible set and the squared residual
    decreases (Armijo rule).
    """
    layout = config.layout
    if guess.grid != config.grid:
        raise InvalidParameters("guess and config use different grids")
    margin = config.domain_margin if config.domain_margin is not None else 1e-6 * guess.lam
    free = constraint is not None and not isinstance(constraint, FixedLambda)
    con = constraint if free else None

    vec = layout.pack(guess)
    lam = guess.lam
    F, J, res = _system(params, layout, vec, lam, con, margin, True)
    norms = [float(np.max(np.abs(F)))]
    it = 0
    while True:
        if norms[-1] <= config.newton_tol:
            state = layout.unpack(vec, lam)
            state = state.replace(rho_i=res.rho_i)
            return NewtonResult(state=state, iterations=it, residual_norms=tuple(norms))
        if it >= config.max_iters:
            raise NoConvergence(f"no convergence after {it} iterations (residual {norms[-1]:.3e})",
                                residual_norms=norms)
        if not np.all(np.isfinite(J)):
            raise SingularJacobian("Jacobian has non-finite entries")
        try:
            with np.errstate(all="ignore"):
                lu = sla.lu_factor(J, check_finite=False)
            diag = np.abs(np.diag(lu[0]))
            if diag.min() <= 1e-14 * diag.max():
                raise SingularJacobian("Jacobian is numerically singular")
            step = sla.lu_solve(lu, -F, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SingularJacobian(str(exc)) from exc
        if not np.all(np.isfinite(step)):
            raise SingularJacobian("Newton step is not finite")

        dvec = step[:layout.n_state]
        dlam = step[layout.n_state] if free else 0.0
        size = max(1.0, float(np.max(np.abs(vec))), abs(lam))
        if (norms[-1] <= _roundoff_floor(layout, vec)
                and max(float(np.max(np.abs(dvec))), abs(dlam)) <= 1e-12 * size):
            # the update is rounding noise: the iterate is converged
            state = layout.unpack(vec, lam).replace(rho_i=res.rho_i)
            return NewtonResult(state=state, iterations=it, residual_norms=tuple(norms),
                                at_floor=True)
        merit = float(np.dot(F, F))
        t = 1.0
        accepted = False
        saw_domain = False
        while t >= config.min_step:
            trial_vec = vec + t * dvec
            trial_lam = lam + t * dlam
            try:
                F_t, _, _ = _system(params, layout, trial_vec, trial_lam, con, margin, False)
            except DomainViolation:
                saw_domain = True
                t *= config.damping
                continue
            if np.all(np.isfinite(F_t)) and float(np.dot(F_t, F_t)) <= (1.0 - 1e-4 * t) * merit:
                accepted = True
                break
            t *= config.damping
        if not accepted:
            if norms[-1] <= _roundoff_floor(layout, vec):
                # no floating-point iterate can do better than this
                state = layout.unpack(vec, lam).replace(rho_i=res.rho_i)
                return NewtonResult(state=state, iterations=it, residual_norms=tuple(norms),
                                    at_floor=True)
            if saw_domain and t < config.min_step:
                raise DomainViolation("cannot keep the iterate inside the admissible set")
            raise NoConvergence(f"line search stalled at residual {norms[-1]:.3e}",
                                residual_norms=norms)
        vec, lam = trial_vec, trial_lam
        it += 1
        F, J, res = _system(params, layout, vec, lam, con, margin, True)
        norms.append(float(np.max(np.abs(F))))


@dataclass(frozen=True)
class Positivity:
    rho_i_positive: bool
    rho_e_positive: bool
    rho_i_negative: bool
    rho_e_negative: bool
    min_rho_i: float
    min_rho_e: float
    argmin_rho_i: float  # x location
    argmin_rho_e: float


def positivity_check(state: SteadyState) -> Positivity:
    """Strict sign of the densities on nodes 1..N (the anode value is pinned to 0)."""
    x = state.grid.nodes[1:]
    ri = np.asarray(state.rho_i)[1:]
    re = np.asarray(state.rho_e)[1:]
    i, e = int(np.argmin(ri)), int(np.argmin(re))
    return Positivity(
        rho_i_positive=bool(np.all(ri > 0)),
        rho_e_positive=bool(np.all(re > 0)),
        rho_i_negative=bool(np.all(ri < 0)),
        rho_e_negative=bool(np.all(re < 0)),
        min_rho_i=float(ri[i]), min_rho_e=float(re[e]),
        argmin_rho_i=float(x[i]), argmin_rho_e=float(x[e]),
    )
