import math
import warnings

import numpy as np
import pytest

from townsend.errors import NotARoot, NoSparkingVoltage
from townsend.linear import (adjoint_basis, det_identity, linearized_residual, null_basis,
                             null_residual_norms, pairing_check, pairing_defect,
                             random_admissible_triple, transversality_F, transversality_unreduced,
                             transversality_value)
from townsend.model import Grid, Parameters, eval_coefficients, g_landscape, g_of_voltage
from townsend.sparking import sparking_report

FIG4 = Parameters(3, 4, 5)
MANY = Parameters(12, 4, 0.01)


@pytest.fixture(scope="module")
def fig4_root():
    return sparking_report(FIG4).sparking_voltage


@pytest.fixture(scope="module")
def many_report():
    return sparking_report(MANY)


def _linear_regime_case():
    # choose gamma so that D vanishes exactly where g does
    p0 = Parameters(3, 4, 1.0)
    W = g_landscape(p0).Lambda_star
    c = (1 + W / 2) * math.exp(-W / 2)
    return Parameters(3, 4, c / (1 - c)), W


def test_det_identity_random_regimes():
    rng = np.random.default_rng(7)
    seen = set()
    for _ in range(300):
        p = Parameters(rng.uniform(0.01, 100), rng.uniform(0.01, 10), rng.uniform(0.01, 10))
        V = rng.uniform(1e-3, 30)
        d = det_identity(p, V)
        seen.add(d.regime)
        assert d.defect <= 1e-9 * (1 + abs(d.D_normalized))
    assert seen == {"hyperbolic", "trigonometric"}


def test_det_identity_at_zero_of_g():
    p = Parameters(3, 4, 5)
    for W in (g_landscape(p).Lambda_star, g_landscape(p).Lambda_sharp):
        d = det_identity(p, W)
        assert d.regime == "linear"
        assert d.defect <= 1e-9 * (1 + abs(d.D_normalized))


def test_det_identity_large_voltage_finite():
    d = det_identity(FIG4, 900.0)
    assert math.isfinite(d.det_scaled) and d.defect <= 1e-9 * (1 + abs(d.D_normalized))


def test_not_a_root():
    with pytest.raises(NotARoot):
        null_basis(FIG4, 1.0, Grid(64))
    with pytest.raises(NotARoot):
        adjoint_basis(FIG4, 1.0, Grid(64))


def test_null_basis_fig4(fig4_root):
    nb = null_basis(FIG4, fig4_root, Grid(400))
    assert nb.positive and nb.regime == "hyperbolic"
    assert nb.phi_e[0] == nb.phi_i[0] == nb.phi_v[0] == nb.phi_v[-1] == 0
    assert np.max(np.abs(nb.phi_e)) == pytest.approx(1.0, rel=1e-15)


def test_null_basis_not_positive_above_pi_squared(many_report):
    later = [r for r in many_report.roots if not r.satisfies_positive1]
    assert later
    nb = null_basis(MANY, later[0].V_c, Grid(400))
    assert nb.regime == "trigonometric" and not nb.positive


def test_null_residual_second_order(fig4_root, many_report):
    for p, V in ((FIG4, fig4_root), (MANY, many_report.sparking_voltage)):
        coarse = null_residual_norms(p, null_basis(p, V, Grid(400)), Grid(400))
        fine = null_residual_norms(p, null_basis(p, V, Grid(800)), Grid(800))
        worst_c, worst_f = max(coarse.values()), max(fine.values())
        assert worst_c / worst_f >= 3.5
    assert worst_f < 1e-4
    fig4_fine = null_residual_norms(FIG4, null_basis(FIG4, fig4_root, Grid(800)), Grid(800))
    assert max(fig4_fine.values()) <= 1e-6


def test_linear_regime_basis():
    p, W = _linear_regime_case()
    rep = sparking_report(p)
    assert rep.regime_flags.gamma_degenerate_locus
    assert any(abs(r.V_c - W) < 1e-8 * W for r in rep.roots)
    grid = Grid(400)
    nb = null_basis(p, W, grid)
    assert nb.regime == "linear"
    # phi_e is a straight line when g = 0
    np.testing.assert_allclose(nb.phi_e, grid.nodes / grid.L, atol=1e-7)
    adj = adjoint_basis(p, W, grid)
    assert adj.regime == "linear" and adj.kernel_residual <= 1e-12


@pytest.mark.parametrize("case", ["fig4", "many", "linear"])
def test_adjoint_invariants(case, fig4_root, many_report):
    if case == "fig4":
        p, V = FIG4, fig4_root
    elif case == "many":
        p, V = MANY, many_report.sparking_voltage
    else:
        p, V = _linear_regime_case()
    grid = Grid(400)
    adj = adjoint_basis(p, V, grid)
    lam = V / p.L
    assert adj.kernel_residual <= 1e-12
    assert adj.psi_e[0] == 0.0 and adj.psi_e[-1] == 1.0 and adj.psi_b == adj.psi_e[-1]
    assert np.all(adj.psi_v == 0)
    np.testing.assert_allclose(adj.psi_i, p.gamma / p.k_e * math.exp(lam * p.L / 2) * adj.psi_e[-1],
                               rtol=1e-14)
    assert abs(adj.dpsi_e[-1] + lam / 2 * adj.psi_e[-1]) <= 1e-8


def test_adjoint_boundary_condition_discrete_order(fig4_root):
    errs = []
    for n in (200, 400, 800):
        grid = Grid(n)
        adj = adjoint_basis(FIG4, fig4_root, grid)
        lam = fig4_root
        errs.append(abs(grid.d1(adj.psi_e)[-1] + lam / 2 * adj.psi_e[-1]))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def _exact_null_derivatives(p, nb):
    g = float(g_of_voltage(p, nb.V_c))
    lam = nb.lam
    co = eval_coefficients(p, lam)
    E = np.exp(-lam * nb.x / 2)
    return {
        "dS_i": p.k_e * co.h / (p.k_i * lam) * E * nb.phi_e,
        "d2S_e": -g * nb.phi_e,
        "d2W": nb.phi_i - E * nb.phi_e,
        "dS_e_L": nb.dphi_e[-1],
    }


def test_pairing_vanishes_on_null_basis(fig4_root, many_report):
    for p, V in ((FIG4, fig4_root), (MANY, many_report.sparking_voltage)):
        grid = Grid(400)
        nb = null_basis(p, V, grid)
        adj = adjoint_basis(p, V, grid)
        exact = _exact_null_derivatives(p, nb)
        res = pairing_defect(p, adj, grid, (nb.phi_i, nb.phi_e, nb.phi_v), exact=exact)
        assert res.defect <= 1e-10 and not res.misuse


def test_pairing_second_order(fig4_root):
    coarse = pairing_check(FIG4, fig4_root, Grid(400), trials=6, seed=3)
    fine = pairing_check(FIG4, fig4_root, Grid(800), trials=6, seed=3)
    assert 3.5 <= coarse / fine <= 4.5


def test_pairing_misuse_flagged(fig4_root):
    grid = Grid(200)
    adj = adjoint_basis(FIG4, fig4_root, grid)
    S_i, S_e, W = random_admissible_triple(grid, np.random.default_rng(0))
    with pytest.warns(RuntimeWarning):
        res = pairing_defect(FIG4, adj, grid, (S_i + 1.0, S_e, W))
    assert res.misuse and res.defect > 1e-2
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ok = pairing_defect(FIG4, adj, grid, (S_i, S_e, W))
    assert not ok.misuse


def test_linearized_residual_trivial_zero():
    grid = Grid(32)
    z = np.zeros(33)
    L1, L2, L3, L4 = linearized_residual(FIG4, 2.0, grid, z, z, z)
    assert not np.any(L1) and not np.any(L2) and not np.any(L3) and L4 == 0


@pytest.mark.parametrize("which", ["fig4", "many"])
def test_transversality(which, fig4_root, many_report):
    p = FIG4 if which == "fig4" else MANY
    rep = sparking_report(p)
    lin = transversality_F(p, rep, Grid(400))
    assert lin.F_consistent and lin.transversal and lin.positive
    assert abs(lin.F_value - lin.F_unreduced) <= 1e-6 * abs(lin.F_value)
    assert abs(lin.F_value) > 1e-8
    d = lin.as_dict()
    assert all(v >= 0 and math.isfinite(v) for v in d["residual_norms"].values())


def test_transversality_bilinear(fig4_root):
    grid = Grid(400)
    nb = null_basis(FIG4, fig4_root, grid)
    adj = adjoint_basis(FIG4, fig4_root, grid)
    F = transversality_value(FIG4, nb, adj, grid)
    F2 = transversality_value(FIG4, nb.scaled(2.5), adj.scaled(0.3), grid)
    assert F2 == pytest.approx(0.75 * F, rel=1e-12)
    assert np.sign(F2) == np.sign(F)
    T = transversality_unreduced(FIG4, nb.scaled(2.5), adj.scaled(0.3), grid)
    assert T == pytest.approx(F2, rel=1e-6)


def test_transversality_requires_root():
    rep = sparking_report(Parameters(1, 4, 0.1))
    with pytest.raises(NoSparkingVoltage):
        transversality_F(rep.params, rep, Grid(64))
