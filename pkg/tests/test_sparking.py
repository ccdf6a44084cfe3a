import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from townsend.errors import DomainError, InvalidRange, NoSparkingVoltage
from townsend.model import Parameters, g_landscape, g_of_voltage
from townsend.sparking import (D_normalized, default_scan_window, eval_D, locate_dagger_bounds,
                               scan_roots, spark_terms, sparking_report)

FIG4 = Parameters(3, 4, 5)
FIG5 = Parameters(70, 0.1, 0.1)
MANY = Parameters(12, 4, 0.01)
NONE = Parameters(1, 4, 0.1)


def test_domain_error():
    for V in (0.0, -1.0):
        with pytest.raises(DomainError):
            eval_D(FIG4, V)


@pytest.mark.parametrize("p", [FIG4, FIG5, MANY, Parameters(2, 1, 0)])
def test_small_voltage_limit(p):
    assert eval_D(p, 1e-8).D == pytest.approx(1 / (1 + p.gamma), abs=1e-6)


def test_value_at_zero_of_g():
    land = g_landscape(FIG4)
    c = FIG4.emission_ratio
    for W in (land.Lambda_star, land.Lambda_sharp):
        expected = (1 + W / 2) * math.exp(-W / 2) - c
        assert eval_D(FIG4, W).D_normalized / (1 + FIG4.gamma) == pytest.approx(expected, abs=1e-8)


def test_value_at_pi_squared_crossing():
    p = Parameters(12, 4, 0.01)
    land = g_landscape(p)
    c = p.emission_ratio
    for V in (land.Vc_star, land.Vc_sharp):
        expected = -math.exp(-V / 2) - c
        assert eval_D(p, V).D_normalized / (1 + p.gamma) == pytest.approx(expected, abs=1e-8)


def test_continuity_across_zero_of_g():
    # the jump over [W - eps, W + eps] is the slope term 2 eps D' plus nothing else
    for p in (FIG4, MANY):
        land = g_landscape(p)
        for W in (land.Lambda_star, land.Lambda_sharp):
            mid = eval_D(p, W)
            for rel in (1e-6, 1e-8):
                eps = rel * W
                lo, hi = eval_D(p, W - eps), eval_D(p, W + eps)
                scale = math.exp(W / 2)
                assert abs(hi.D - lo.D - 2 * eps * mid.D_prime) / scale <= 1e-8
                assert abs(hi.D - lo.D) / scale <= 4 * eps * (1 + abs(mid.D_prime) / scale)


def test_series_band_matches_closed_forms():
    # second differences across the crossover are at rounding level
    W = g_landscape(FIG4).Lambda_star
    for rel in (1e-9, 1e-7):
        V = W * (1 + rel * np.array([-1.0, 0.0, 1.0]))
        D = D_normalized(FIG4, V)
        assert abs(D[0] - 2 * D[1] + D[2]) < 1e-12


@pytest.mark.parametrize("p", [FIG4, FIG5, MANY, Parameters(5, 2, 3, L=2.5)])
def test_derivative_against_difference_quotient(p):
    land = g_landscape(p)
    zeros = [w for w in (land.Lambda_star, land.Lambda_sharp) if w is not None]
    for V in np.linspace(0.3, 30, 41):
        if any(abs(V - w) < 1e-4 for w in zeros):
            continue
        dV = 1e-6 * V
        fd = (eval_D(p, V + dV).D - eval_D(p, V - dV).D) / (2 * dV)
        ev = eval_D(p, V)
        assert ev.D_prime == pytest.approx(fd, rel=1e-6, abs=1e-7 * max(1.0, abs(ev.D)))


def test_normalized_relation_exact():
    for V in (0.5, 3.0, 17.0, 60.0):
        ev = eval_D(FIG4, V)
        assert ev.D_normalized == pytest.approx((1 + FIG4.gamma) * math.exp(-V / 2) * ev.D, rel=1e-14)


def test_large_voltage_is_overflow_free():
    ev = eval_D(FIG4, 5000.0)
    assert math.isfinite(ev.D_normalized)
    assert ev.D == -math.inf


def _slope_gap(p, V):
    return abs(D_normalized(p, V) / (1 + p.gamma) - (math.exp(-p.a * p.L) - p.emission_ratio))


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0.1, 20), b=st.floats(0.1, 10), gamma=st.floats(0, 10))
def test_asymptotic_slope(a, b, gamma):
    # exp(-V/2) D = exp(-a) (1 + a (b - a + 1) / V + O(V^-2)) - gamma/(1+gamma) at L = 1
    p = Parameters(a, b, gamma)
    first = math.exp(-a) * a * abs(b - a + 1)
    second = math.exp(-a) * (a * (a + b + 1)) ** 2
    for V in (200.0, 2000.0):
        assert _slope_gap(p, V) <= 1.2 * first / V + 2 * second / V**2 + 1e-12


def test_asymptotic_slope_fig4():
    # the leading correction 3 (4 - 3 + 1) e^-3 / V is 1.49e-3 at V = 200
    gap = _slope_gap(FIG4, 200.0)
    assert gap == pytest.approx(6 * math.exp(-3) / 200, rel=0.05)
    assert _slope_gap(FIG4, 400.0) <= 1e-3


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0.01, 200), b=st.floats(0.01, 20), gamma=st.floats(0, 50),
       L=st.floats(0.1, 5))
def test_scaled_D_finite(a, b, gamma, L):
    p = Parameters(a, b, gamma, L=L)
    V = np.geomspace(1e-10, 3000, 200)
    assert np.all(np.isfinite(D_normalized(p, V)))


def test_scan_figure_cases():
    assert len(scan_roots(FIG4, 40, 1e-3)) == 1
    assert len(scan_roots(FIG5, 40, 1e-3)) >= 2
    assert scan_roots(NONE, 40, 1e-3) == []


def test_scan_counts_stable_under_refinement():
    for p in (FIG4, FIG5):
        coarse = scan_roots(p, 40, 1e-3)
        fine = scan_roots(p, 40, 1e-5)
        assert len(coarse) == len(fine)
        np.testing.assert_allclose([r.V_c for r in coarse], [r.V_c for r in fine], rtol=1e-10)


def test_scan_invalid_ranges():
    for V_max, step in ((0, 1e-3), (-1, 1e-3), (40, 0), (40, 1.0), (math.inf, 1e-3)):
        with pytest.raises(InvalidRange):
            scan_roots(FIG4, V_max, step)


def test_roots_are_roots():
    for p in (FIG4, FIG5, MANY):
        for r in scan_roots(p, 40, 1e-3):
            assert abs(D_normalized(p, r.V_c)) <= 1e-9
            assert r.satisfies_positive1 == (r.g < math.pi**2 / p.L**2)


def test_tangential_root_reported():
    # F(V) = exp(-V/2)(C + V S / 2); choosing gamma/(1+gamma) at a local maximum of F
    # makes D touch zero without changing sign
    base = Parameters(70, 0.1, 0.0)

    def F(v):
        t = spark_terms(base, np.array([v]))
        return float((t.CE + 0.5 * v * t.SE)[0])

    res = minimize_scalar(lambda v: -F(v), bracket=(0.6, 0.65, 0.7), tol=1e-14)
    V0, c = res.x, -res.fun
    p = Parameters(70, 0.1, c / (1 - c))
    step = V0 / round(V0 / 1e-3)
    roots = scan_roots(p, 40, step)
    double = [r for r in roots if r.multiplicity == 2]
    assert len(double) == 1
    assert double[0].V_c == pytest.approx(V0, rel=1e-9)


def test_report_fig4():
    rep = sparking_report(FIG4, 40)
    assert len(rep.roots) == 1
    assert rep.sparking_voltage == rep.roots[0].V_c
    assert rep.regime_flags.condA2 and not rep.regime_flags.condA1
    assert rep.roots[0].satisfies_positive1
    assert rep.window_closed
    nd = rep.regime_flags.nondegeneracy
    assert nd.g_nonzero_at_dagger and nd.D_prime_nonzero_at_dagger


def test_report_many_roots():
    rep = sparking_report(MANY, 40)
    assert rep.regime_flags.condA1
    assert len(rep.roots) >= 2
    assert rep.roots[0].satisfies_positive1
    # the later roots sit in the band where g exceeds pi^2
    land = g_landscape(MANY)
    assert rep.roots[0].V_c < land.Vc_star
    for r in rep.roots[1:]:
        assert land.Vc_star < r.V_c < land.Vc_sharp or r.satisfies_positive1


def test_report_no_roots():
    rep = sparking_report(NONE, 40)
    assert rep.regime_flags.lemmaA3_no_root
    assert rep.roots == () and rep.sparking_voltage is None
    assert np.all(D_normalized(NONE, np.linspace(1e-3, 40, 4000)) > 0)
    with pytest.raises(NoSparkingVoltage):
        locate_dagger_bounds(NONE, rep)


def test_inconsistency_diagnostic_on_short_window():
    # a root is guaranteed by the asymptotic slope but lies beyond the window
    rep = sparking_report(FIG4, 1.0, 1e-3)
    assert rep.roots == ()
    assert any("inconsistency" in d for d in rep.diagnostics)
    assert not rep.window_closed


def test_default_window():
    assert default_scan_window(FIG4) >= 40
    assert default_scan_window(Parameters(3, 40, 1)) >= 160


@settings(max_examples=30, deadline=None)
@given(a=st.floats(10, 60), b=st.floats(0.5, 6), gamma=st.floats(1e-3, 5))
def test_condA1_guarantees_positive_root(a, b, gamma):
    p = Parameters(a, b, gamma)
    rep = sparking_report(p)
    if not rep.regime_flags.condA1:
        return
    land = g_landscape(p)
    assert any(r.V_c < land.Vc_star and r.satisfies_positive1 for r in rep.roots)


def test_dagger_bounds():
    rep = sparking_report(Parameters(12, 4, 1e-4))
    assert locate_dagger_bounds(rep.params, rep).B1_band
    rep = sparking_report(Parameters(3, 4, 100))
    b = locate_dagger_bounds(rep.params, rep)
    assert b.B2_band and b.V_c_dagger < b.Lambda_star


def test_report_serializable():
    d = sparking_report(FIG5).as_dict()
    assert d["sparking_voltage"] == d["roots"][0]["V_c"]
    assert float(g_of_voltage(FIG5, d["roots"][0]["V_c"])) == pytest.approx(d["roots"][0]["g"])
