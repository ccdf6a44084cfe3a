"""Local picture at the sparking voltage for a=3, b=4, gamma=5.

Builds the null and adjoint bases, evaluates the transversality functional
two ways, then solves the steady system at small amplitudes s and shows
that u(s)/s approaches the null basis linearly in s.

    python demos/local_bifurcation.py
"""
import numpy as np

from townsend.linear import null_basis, null_residual_norms, transversality_F
from townsend.model import Grid, Parameters, SteadyState
from townsend.solver import Amplitude, SolverConfig, newton_solve, positivity_check
from townsend.sparking import sparking_report

p = Parameters(3, 4, 5)
rep = sparking_report(p)
V = rep.sparking_voltage
print(f"sparking voltage V_c = {V:.12f}")

for n in (200, 400, 800):
    grid = Grid(n)
    worst = max(null_residual_norms(p, null_basis(p, V, grid), grid).values())
    print(f"  N={n:4d}  discrete residual of the null basis {worst:.3e}")

lin = transversality_F(p, rep, Grid(400))
print(f"transversality F = {lin.F_value:.10f} (unreduced form {lin.F_unreduced:.10f})")

grid = Grid(400)
nb = null_basis(p, V, grid)
cfg = SolverConfig(grid)
print("\n       s     lambda(s) - lambda0   ||u/s - phi||_inf   iterations")
for s in (1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4):
    guess = SteadyState(grid, nb.lam, s * nb.phi_i, s * nb.phi_e, s * nb.phi_v)
    res = newton_solve(guess, p, cfg, Amplitude(s, nb.phi_e))
    st = res.state
    dev = max(np.max(np.abs(st.rho_i / s - nb.phi_i)), np.max(np.abs(st.R_e / s - nb.phi_e)),
              np.max(np.abs(st.V / s - nb.phi_v)))
    pos = positivity_check(st)
    flag = "" if pos.rho_i_positive and pos.rho_e_positive else "  (not positive)"
    print(f"  {s:8.0e}   {st.lam - nb.lam:+.6e}      {dev:.3e}        {res.iterations}{flag}")
