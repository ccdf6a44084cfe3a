import math

import numpy as np
import pytest

from townsend.continuation import (Branch, BranchPoint, Limits, Termination,
                                   bounded_density_diagnostic, halfloop_cross_check, seed_branch,
                                   trace_branch)
from townsend.errors import (InvalidParameters, NoSparkingVoltage, NotApplicable, SeedFailure,
                             WrongTerminationKind)
from townsend.linear import null_basis
from townsend.model import Grid, Parameters, SteadyState
from townsend.solver import SolverConfig, assemble_residual, positivity_check
from townsend.sparking import sparking_report

FIG4 = Parameters(3, 4, 5)


@pytest.fixture(scope="module")
def spark():
    return sparking_report(FIG4)


@pytest.fixture(scope="module")
def short_branch(spark):
    cfg = SolverConfig(Grid(100))
    return trace_branch(FIG4, cfg, Limits(max_steps=25), spark=spark)


def test_seed_is_positive(spark):
    pt = seed_branch(FIG4, spark, SolverConfig(Grid(200)))
    pos = positivity_check(pt.state)
    assert pos.rho_i_positive and pos.rho_e_positive
    assert pt.residual <= 1e-10
    assert pt.state.lam == pytest.approx(spark.sparking_voltage, rel=1e-2)


def test_seed_tangent_is_null_basis(spark):
    grid = Grid(200)
    cfg = SolverConfig(grid)
    nb = null_basis(FIG4, spark.sparking_voltage, grid)
    devs = []
    for s in (1e-2, 1e-3, 1e-4):
        st = seed_branch(FIG4, spark, cfg, s0=s, basis=nb).state
        devs.append(max(np.max(np.abs(st.rho_i - s * nb.phi_i)),
                        np.max(np.abs(st.R_e - s * nb.phi_e)),
                        np.max(np.abs(st.V - s * nb.phi_v))) / s)
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 1e-3


def test_negative_seed(spark):
    pt = seed_branch(FIG4, spark, SolverConfig(Grid(100)), sign=-1)
    pos = positivity_check(pt.state)
    assert pos.rho_i_negative and pos.rho_e_negative
    assert pt.amplitude < 0


def test_seed_failures():
    with pytest.raises(NoSparkingVoltage):
        seed_branch(Parameters(1, 4, 0.1), None, SolverConfig(Grid(50)))
    rep = sparking_report(FIG4)
    with pytest.raises(InvalidParameters):
        seed_branch(FIG4, rep, SolverConfig(Grid(50)), sign=0)


def test_seed_rejects_root_above_pi_squared():
    p = Parameters(12, 4, 0.01)
    rep = sparking_report(p)
    later = [r for r in rep.roots if not r.satisfies_positive1]
    fake = type(rep)(**{**rep.__dict__, "sparking_voltage": later[0].V_c})
    with pytest.raises(SeedFailure):
        seed_branch(p, fake, SolverConfig(Grid(50)))


def test_short_trace_invariants(short_branch):
    br = short_branch
    s = np.array([p.s for p in br.points])
    assert np.all(np.diff(s) > 0)
    assert br.termination is not None and br.termination.kind == "Budget"
    for p in br.points:
        assert p.diagnostics["positive"]
        assert p.residual <= 1e-8
        assert p.diagnostics["min_field"] > 0
    # every stored point solves the discrete system
    last = br.points[-1].state
    assert assemble_residual(last, FIG4).sup_norm() <= 1e-8
    assert br.start["V_c_dagger"] > 0


def test_trace_moves_away_from_trivial(short_branch):
    amps = [p.amplitude for p in short_branch.points]
    assert amps[-1] > 10 * amps[0]


def test_trace_deterministic(spark):
    cfg = SolverConfig(Grid(60))
    a = trace_branch(FIG4, cfg, Limits(max_steps=8), spark=spark)
    b = trace_branch(FIG4, cfg, Limits(max_steps=8), spark=spark)
    assert len(a.points) == len(b.points)
    for p, q in zip(a.points, b.points):
        assert p.s == q.s and p.state.lam == q.state.lam
        assert np.array_equal(p.state.R_e, q.state.R_e)


def test_lambda_floor_terminates(spark):
    # an absurd floor makes the first step terminate through the lambda test
    br = trace_branch(FIG4, SolverConfig(Grid(60)), Limits(max_steps=5, lambda_floor=1e3),
                      spark=spark)
    assert br.termination.kind == "LambdaToZero"
    assert len(br.points) == 2


def test_norm_ceiling_terminates(spark):
    br = trace_branch(FIG4, SolverConfig(Grid(60)), Limits(max_steps=5, norm_ceiling=1.0),
                      spark=spark)
    assert br.termination.kind == "BlowUp"


def test_halfloop_cross_check_wrong_kind(short_branch, spark):
    with pytest.raises(WrongTerminationKind):
        halfloop_cross_check(short_branch, spark)


def test_halfloop_cross_check_rejects_start(short_branch, spark):
    V = spark.sparking_voltage
    fake = Branch(points=short_branch.points, start=short_branch.start,
                  termination=Termination("HalfLoop", {"V_c_ddagger": V}))
    res = halfloop_cross_check(fake, spark)
    assert not res and res.reason == "returned to start"
    far = Branch(points=short_branch.points, start=short_branch.start,
                 termination=Termination("HalfLoop", {"V_c_ddagger": V * 3.7}))
    assert not halfloop_cross_check(far, spark)


def test_density_diagnostic_on_trace(short_branch):
    diag = bounded_density_diagnostic(short_branch, FIG4)
    assert diag.hypothesis_holds
    assert len(diag.values) == len(diag.lambdas) >= 2
    assert all(math.isfinite(v) for v in diag.values)


def _synthetic_tail(params, lams, scale):
    grid = Grid(40)
    x = grid.nodes
    pts = []
    for k, lam in enumerate(lams):
        c = scale(lam)
        st = SteadyState(grid, lam, c * x, c * x * np.exp(lam * x / 2), np.zeros_like(x))
        pts.append(BranchPoint(s=float(k), state=st))
    return Branch(points=pts, termination=Termination("Budget"), start={})


def test_density_diagnostic_decreasing_tail():
    br = _synthetic_tail(FIG4, np.linspace(2, 20, 12), lambda lam: 1 / lam)
    diag = bounded_density_diagnostic(br, FIG4)
    assert diag.decreasing
    br = _synthetic_tail(FIG4, np.linspace(2, 20, 12), lambda lam: lam)
    assert not bounded_density_diagnostic(br, FIG4).decreasing


def test_density_diagnostic_hypothesis_flag():
    p = Parameters(1, 4, math.exp(-1) / (1 - math.exp(-1)))
    br = _synthetic_tail(p, np.linspace(2, 20, 8), lambda lam: 1 / lam)
    assert not bounded_density_diagnostic(br, p).hypothesis_holds


def test_density_diagnostic_not_applicable():
    br = _synthetic_tail(FIG4, np.linspace(2, 20, 8), lambda lam: 1 / lam)
    half = Branch(points=br.points, start={}, termination=Termination("HalfLoop", {}))
    with pytest.raises(NotApplicable):
        bounded_density_diagnostic(half, FIG4)
    shrinking = _synthetic_tail(FIG4, np.linspace(20, 2, 8), lambda lam: 1 / lam)
    with pytest.raises(NotApplicable):
        bounded_density_diagnostic(shrinking, FIG4)
    with pytest.raises(NotApplicable):
        bounded_density_diagnostic(_synthetic_tail(FIG4, [1.0, 2.0], lambda lam: 1.0), FIG4)


@pytest.mark.parametrize("kw", [dict(max_steps=0), dict(norm_ceiling=0), dict(lambda_floor=-1),
                                dict(ds_initial=1.0), dict(ds_min=1e-1, ds_initial=1e-2),
                                dict(grow=0.5), dict(trivial_tol=0)])
def test_limits_validation(kw):
    with pytest.raises(InvalidParameters):
        Limits(**kw)


def test_termination_kind_validated():
    with pytest.raises(InvalidParameters):
        Termination("Whatever")
    assert Limits().resolved_trivial_tol(2.0) == pytest.approx(3e-7)
