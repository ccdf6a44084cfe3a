"""Linear analysis of the trivial branch at a root of D.

At a root V_c of the sparking function the linearization about the trivial
state has a one-dimensional kernel spanned by (phi_i, phi_e, phi_v), and its
adjoint has a one-dimensional kernel (psi_i, psi_e, psi_v, psi_b).  Both are
built here from closed forms, together with the 2x2 boundary matrices whose
determinants reproduce D, the discrete adjoint pairing, and the
transversality functional F that decides whether the branch actually
bifurcates.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import cumulative_simpson, simpson
from scipy.linalg import solve_banded

from .errors import NoSparkingVoltage, NotARoot
from .model import Grid, Parameters, eval_coefficients
from .sparking import SERIES_BAND, SparkReport, _scaled_D, eval_D

__all__ = [
    "ROOT_TOL",
    "NullBasis",
    "AdjointBasis",
    "DetIdentity",
    "PairingResult",
    "LinearReport",
    "null_basis",
    "adjoint_basis",
    "det_identity",
    "linearized_residual",
    "pairing_defect",
    "pairing_check",
    "transversality_value",
    "transversality_unreduced",
    "transversality_F",
]

# largest |D_normalized| accepted as a root
ROOT_TOL = 1e-9


def _regime(z: float) -> str:
    if abs(z) < SERIES_BAND:
        return "linear"
    return "hyperbolic" if z > 0 else "trigonometric"


def _cs(w: np.ndarray):
    """C(w) = cosh(sqrt w) and S(w) = sinh(sqrt w)/sqrt w, continued to w < 0."""
    w = np.asarray(w, dtype=float)
    C = np.empty_like(w)
    S = np.empty_like(w)
    band = np.abs(w) < SERIES_BAND
    pos = (w > 0) & ~band
    neg = (w < 0) & ~band
    if np.any(pos):
        r = np.sqrt(w[pos])
        C[pos] = np.cosh(r)
        S[pos] = np.sinh(r) / r
    if np.any(neg):
        r = np.sqrt(-w[neg])
        C[neg] = np.cos(r)
        S[neg] = np.sin(r) / r
    if np.any(band):
        wb = w[band]
        C[band] = 1.0 + wb / 2.0 + wb**2 / 24.0 + wb**3 / 720.0
        S[band] = 1.0 + wb / 6.0 + wb**2 / 120.0 + wb**3 / 5040.0
    return C, S


def _check_root(params: Parameters, V_c: float):
    ev = eval_D(params, V_c)
    if abs(ev.D_normalized) > ROOT_TOL:
        raise NotARoot(f"V_c = {V_c!r} is not a root of D (scaled value {ev.D_normalized:.3e})")
    return ev


@dataclass(frozen=True)
class NullBasis:
    V_c: float
    lam: float
    x: np.ndarray
    phi_i: np.ndarray
    phi_e: np.ndarray
    phi_v: np.ndarray
    dphi_e: np.ndarray  # exact derivative of phi_e
    regime: str
    positive: bool

    def scaled(self, factor: float) -> "NullBasis":
        return replace(self, phi_i=self.phi_i * factor, phi_e=self.phi_e * factor,
                       phi_v=self.phi_v * factor, dphi_e=self.dphi_e * factor)


def _phi_e(g: float, x: np.ndarray):
    # x S(-g x^2) covers sinh(kx)/k, x and sin(qx)/q in one expression
    C, S = _cs(-g * x**2)
    return x * S, C


def null_basis(params: Parameters, V_c: float, grid: Grid) -> NullBasis:
    """Kernel of the linearization at a root of D, normalized to max|phi_e| = 1."""
    ev = _check_root(params, V_c)
    lam = V_c / params.L
    co = eval_coefficients(params, lam)
    x = np.array(grid.nodes)
    phi_e, dphi_e = _phi_e(ev.g, x)
    scale = 1.0 / np.max(np.abs(phi_e))
    phi_e = phi_e * scale
    dphi_e = dphi_e * scale
    phi_e[0] = 0.0

    E = np.exp(-lam * x / 2.0)
    phi_i = (params.k_e * co.h / (params.k_i * lam)) * cumulative_simpson(E * phi_e, dx=grid.h, initial=0.0)

    # W'' = phi_i - E phi_e with W(0) = W(L) = 0
    n = grid.n_cells - 1
    ab = np.zeros((3, n))
    ab[0, 1:] = 1.0
    ab[1, :] = -2.0
    ab[2, :-1] = 1.0
    rhs = (phi_i - E * phi_e)[1:-1] * grid.h**2
    phi_v = np.zeros_like(x)
    phi_v[1:-1] = solve_banded((1, 1), ab, rhs)

    positive = bool(np.all(phi_i[1:] > 0) and np.all(phi_e[1:] > 0))
    return NullBasis(
        V_c=float(V_c), lam=lam, x=x, phi_i=phi_i, phi_e=phi_e, phi_v=phi_v,
        dphi_e=dphi_e, regime=_regime(-ev.g * params.L**2), positive=positive,
    )


def _boundary_matrix(params: Parameters, V_c: float, scaled: bool):
    """The 2x2 matrix of the adjoint boundary problem and its basis.

    Returns (M, regime, basis) where basis(x) gives the two homogeneous
    solutions and their derivatives.  With ``scaled`` the first row is
    multiplied by exp(-V_c/2) so that large voltages stay finite.
    """
    L = params.L
    lam = V_c / L
    g = eval_coefficients(params, lam).g
    c = params.emission_ratio
    regime = _regime(-g * L**2)
    if scaled:
        K, one = 1.0, math.exp(-V_c / 2.0)
    else:
        K, one = math.exp(V_c / 2.0), 1.0

    if regime == "hyperbolic":
        k = math.sqrt(-g)
        ep, em = math.exp(k * L), math.exp(-k * L)
        M = np.array([[one - c * K * ep, one - c * K * em],
                      [(k + lam / 2.0) * ep, (-k + lam / 2.0) * em]])

        def basis(x):
            p, m = np.exp(k * x), np.exp(-k * x)
            return (p, m), (k * p, -k * m)
    elif regime == "trigonometric":
        q = math.sqrt(g)
        s, co = math.sin(q * L), math.cos(q * L)
        M = np.array([[-c * K * s, one - c * K * co],
                      [q * co + lam / 2.0 * s, -q * s + lam / 2.0 * co]])

        def basis(x):
            return (np.sin(q * x), np.cos(q * x)), (q * np.cos(q * x), -q * np.sin(q * x))
    else:
        # x S(-g x^2) and C(-g x^2); exactly (x, 1) when g = 0
        C, S = _cs(np.array([-g * L**2]))
        C, S = float(C[0]), float(S[0])
        M = np.array([[-c * K * L * S, one - c * K * C],
                      [C + lam / 2.0 * L * S, -g * L * S + lam / 2.0 * C]])

        def basis(x):
            Cx, Sx = _cs(-g * x**2)
            return (x * Sx, Cx), (Cx, -g * x * Sx)
    return M, regime, basis


@dataclass(frozen=True)
class AdjointBasis:
    V_c: float
    lam: float
    x: np.ndarray
    psi_i: np.ndarray
    psi_e: np.ndarray
    psi_v: np.ndarray
    psi_b: float
    dpsi_e: np.ndarray  # exact derivative of psi_e
    AB: tuple
    M: np.ndarray
    det_M: float
    kernel_residual: float  # |M (A, B)| relative to |M| |(A, B)|
    regime: str

    def scaled(self, factor: float) -> "AdjointBasis":
        return replace(self, psi_i=self.psi_i * factor, psi_e=self.psi_e * factor,
                       psi_b=self.psi_b * factor, dpsi_e=self.dpsi_e * factor)


def adjoint_basis(params: Parameters, V_c: float, grid: Grid) -> AdjointBasis:
    """Kernel of the adjoint problem at a root of D, normalized to psi_e(L) = 1."""
    _check_root(params, V_c)
    L = params.L
    lam = V_c / L
    M, regime, basis = _boundary_matrix(params, V_c, scaled=False)
    # the second row never vanishes, so it fixes the kernel direction
    A, B = -M[1, 1], M[1, 0]
    AB = np.array([A, B])
    resid = float(np.max(np.abs(M @ AB)) / (np.max(np.abs(M)) * np.max(np.abs(AB))))

    x = np.array(grid.nodes)
    (b1, b2), (d1, d2) = basis(x)
    (b1L, b2L), _ = basis(np.array([L]))
    psi_L = (A * b1L[0] + B * b2L[0]) / (1.0 + params.gamma)
    # psi_e(L) is 2k, 1 or q over (1 + gamma) and never zero
    A, B = A / psi_L, B / psi_L
    K = math.exp(V_c / 2.0)
    gam = params.gamma
    particular = gam * K * np.exp(-lam * x / 2.0)
    psi_e = A * b1 + B * b2 - particular
    dpsi_e = A * d1 + B * d2 + lam / 2.0 * particular
    psi_e[0] = 0.0
    psi_e[-1] = 1.0
    psi_i = np.full_like(x, gam / params.k_e * K)
    return AdjointBasis(
        V_c=float(V_c), lam=lam, x=x, psi_i=psi_i, psi_e=psi_e,
        psi_v=np.zeros_like(x), psi_b=1.0, dpsi_e=dpsi_e,
        AB=(float(AB[0]), float(AB[1])), M=M, det_M=float(np.linalg.det(M)),
        kernel_residual=resid, regime=regime,
    )


@dataclass(frozen=True)
class DetIdentity:
    V_c: float
    regime: str
    det_scaled: float
    expected_scaled: float
    defect: float
    D_normalized: float


def det_identity(params: Parameters, V_c: float) -> DetIdentity:
    """Compare det M with -2k D, -D or -q D, all multiplied by exp(-V_c/2)."""
    M, regime, _ = _boundary_matrix(params, V_c, scaled=True)
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    DE = float(_scaled_D(params, np.array([float(V_c)]))[0][0])
    g = eval_coefficients(params, V_c / params.L).g
    if regime == "hyperbolic":
        factor = 2.0 * math.sqrt(-g)
    elif regime == "trigonometric":
        factor = math.sqrt(g)
    else:
        factor = 1.0
    expected = -factor * DE
    return DetIdentity(V_c=float(V_c), regime=regime, det_scaled=float(det),
                       expected_scaled=expected, defect=abs(det - expected),
                       D_normalized=(1.0 + params.gamma) * DE)


def linearized_residual(params: Parameters, lam: float, grid: Grid, S_i, S_e, W,
                        exact: dict | None = None):
    """The four linearized equations applied to (S_i, S_e, W) at the trivial state.

    Derivatives come from the grid stencils unless ``exact`` supplies
    ``dS_i``, ``d2S_e``, ``d2W`` or ``dS_e_L``.  Returns (L1, L2, L3, L4) with
    the first three sampled at every node.
    """
    exact = exact or {}
    co = eval_coefficients(params, lam)
    x = grid.nodes
    E = np.exp(-lam * x / 2.0)
    dS_i = exact.get("dS_i", grid.d1(S_i))
    d2S_e = exact.get("d2S_e", grid.d2(S_e))
    d2W = exact.get("d2W", grid.d2(W))
    dS_e_L = exact.get("dS_e_L", grid.d1(S_e)[-1])
    L1 = params.k_i * lam * dS_i - params.k_e * co.h * E * S_e
    L2 = -d2S_e - co.g * S_e
    L3 = d2W - S_i + E * S_e
    L4 = (dS_e_L + lam / 2.0 * S_e[-1]
          - params.gamma * params.k_i / params.k_e * lam * math.exp(lam * grid.L / 2.0) * S_i[-1])
    return L1, L2, L3, float(L4)


def null_residual_norms(params: Parameters, basis: NullBasis, grid: Grid) -> dict:
    L1, L2, L3, L4 = linearized_residual(params, basis.lam, grid,
                                         basis.phi_i, basis.phi_e, basis.phi_v)
    return {
        "L1": float(np.max(np.abs(L1[1:]))),
        "L2": float(np.max(np.abs(L2[1:-1]))),
        "L3": float(np.max(np.abs(L3[1:-1]))),
        "L4": abs(L4),
    }


@dataclass(frozen=True)
class PairingResult:
    defect: float
    misuse: bool
    reasons: tuple = ()


def pairing_defect(params: Parameters, adj: AdjointBasis, grid: Grid, u, exact: dict | None = None) -> PairingResult:
    """<L u, psi> + L4(u) psi_b for u = (S_i, S_e, W); zero when psi spans the adjoint kernel.

    The identity relies on S_i(0) = S_e(0) = W(0) = W(L) = 0.  Inputs
    breaking those conditions are flagged as misuse (the defect is then
    of order one).
    """
    S_i, S_e, W = (np.asarray(v, dtype=float) for v in u)
    reasons = []
    scale = max(1.0, float(np.max(np.abs(S_i))), float(np.max(np.abs(S_e))), float(np.max(np.abs(W))))
    tol = 1e-12 * scale
    if abs(S_i[0]) > tol:
        reasons.append("S_i(0) != 0")
    if abs(S_e[0]) > tol:
        reasons.append("S_e(0) != 0")
    if abs(W[0]) > tol or abs(W[-1]) > tol:
        reasons.append("W does not vanish at both ends")
    if reasons:
        warnings.warn("pairing evaluated outside the admissible space: " + ", ".join(reasons),
                      RuntimeWarning, stacklevel=2)
    L1, L2, L3, L4 = linearized_residual(params, adj.lam, grid, S_i, S_e, W, exact)
    integrand = L1 * adj.psi_i + L2 * adj.psi_e + L3 * adj.psi_v
    value = simpson(integrand, dx=grid.h) + L4 * adj.psi_b
    return PairingResult(defect=abs(float(value)), misuse=bool(reasons), reasons=tuple(reasons))


def random_admissible_triple(grid: Grid, rng: np.random.Generator, degree: int = 3):
    """Random polynomials vanishing where the admissible space requires."""
    x = grid.nodes / grid.L
    def poly():
        return np.polynomial.polynomial.polyval(x, rng.uniform(-1.0, 1.0, degree + 1))
    return x * poly(), x * poly(), x * (1.0 - x) * poly()


def pairing_check(params: Parameters, V_c: float, grid: Grid, trials: int = 8, seed: int = 0) -> float:
    """Largest pairing defect over random admissible polynomial triples."""
    adj = adjoint_basis(params, V_c, grid)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        res = pairing_defect(params, adj, grid, random_admissible_triple(grid, rng))
        worst = max(worst, res.defect)
    return worst


def _parts(params: Parameters, V: float, nb: NullBasis, adj: AdjointBasis, grid: Grid):
    L = params.L
    lam = V / L
    co = eval_coefficients(params, lam)
    x = grid.nodes
    E = np.exp(-lam * x / 2.0)
    weight = (co.h_prime - x / 2.0 * co.h) * E * nb.phi_e
    overlap = simpson(adj.psi_e * nb.phi_e, dx=grid.h)
    return co, E, weight, overlap


def transversality_value(params: Parameters, nb: NullBasis, adj: AdjointBasis, grid: Grid) -> float:
    """The reduced transversality functional F."""
    V = nb.V_c
    L = params.L
    co, E, weight, overlap = _parts(params, V, nb, adj, grid)
    psi_L = adj.psi_e[-1]
    pe_L, dpe_L = nb.phi_e[-1], nb.dphi_e[-1]
    return float(
        -params.gamma * math.exp(V / 2.0) * psi_L * simpson(weight, dx=grid.h)
        - L * co.g_prime * overlap
        + 0.5 * psi_L * (pe_L - L * dpe_L - V / 2.0 * pe_L)
    )


def transversality_unreduced(params: Parameters, nb: NullBasis, adj: AdjointBasis, grid: Grid) -> float:
    """The transversality pairing before the boundary terms are combined.

    Uses the ion component explicitly: its exact derivative inside the
    integral and its quadrature value at the cathode.
    """
    V = nb.V_c
    L = params.L
    ki, ke, gam = params.k_i, params.k_e, params.gamma
    co, E, weight, overlap = _parts(params, V, nb, adj, grid)
    psi_L = adj.psi_e[-1]
    dphi_i = ke * co.h / (ki * nb.lam) * E * nb.phi_e
    K = math.exp(V / 2.0)
    first = gam / ke * K * psi_L * simpson(ki * dphi_i - ke * weight, dx=grid.h)
    last = psi_L * (0.5 * nb.phi_e[-1] - gam * ki / ke * (1.0 + V / 2.0) * K * nb.phi_i[-1])
    return float(first - L * co.g_prime * overlap + last)


@dataclass(frozen=True)
class LinearReport:
    V_c: float
    residual_norms: dict
    det_identity_error: float
    kernel_residual: float
    adjoint_bc_error: float
    pairing_error: float
    F_value: float
    F_unreduced: float
    F_consistent: bool
    transversal: bool
    positive: bool
    regime: str

    def as_dict(self) -> dict:
        return {
            "V_c": self.V_c,
            "regime": self.regime,
            "positive": self.positive,
            "residual_norms": dict(self.residual_norms),
            "det_identity_error": self.det_identity_error,
            "kernel_residual": self.kernel_residual,
            "adjoint_bc_error": self.adjoint_bc_error,
            "pairing_error": self.pairing_error,
            "F_value": self.F_value,
            "F_unreduced": self.F_unreduced,
            "F_consistent": self.F_consistent,
            "transversal": self.transversal,
        }


def transversality_F(params: Parameters, report: SparkReport, grid: Grid) -> LinearReport:
    if report.sparking_voltage is None:
        raise NoSparkingVoltage("the report contains no root of D")
    V = report.sparking_voltage
    nb = null_basis(params, V, grid)
    adj = adjoint_basis(params, V, grid)
    F = transversality_value(params, nb, adj, grid)
    T3 = transversality_unreduced(params, nb, adj, grid)
    bc = abs(adj.dpsi_e[-1] + nb.lam / 2.0 * adj.psi_e[-1])
    return LinearReport(
        V_c=V,
        residual_norms=null_residual_norms(params, nb, grid),
        det_identity_error=det_identity(params, V).defect,
        kernel_residual=adj.kernel_residual,
        adjoint_bc_error=bc,
        pairing_error=pairing_check(params, V, grid, trials=4, seed=0),
        F_value=F,
        F_unreduced=T3,
        F_consistent=abs(F - T3) <= 1e-6 * abs(F),
        transversal=abs(F) > 1e-8,
        positive=nb.positive,
        regime=nb.regime,
    )
