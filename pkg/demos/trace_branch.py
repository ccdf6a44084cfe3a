"""Follow the branch of positive steady states away from the sparking voltage.

    python demos/trace_branch.py [max_steps]

Prints every 20th point and the termination record, and writes
demos/out/branch.svg with lambda against the amplitude.
"""
import sys
from pathlib import Path

from townsend.continuation import Limits, bounded_density_diagnostic, trace_branch
from townsend.errors import NotApplicable
from townsend.model import Grid, Parameters
from townsend.solver import SolverConfig
from townsend.svg import line_chart

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200
p = Parameters(3, 4, 5)
branch = trace_branch(p, SolverConfig(Grid(200)), Limits(max_steps=steps))

print("  k        s      lambda    sup rho_i   sup rho_e   min field   residual")
for k, pt in enumerate(branch.points):
    if k % 20 and k != len(branch.points) - 1:
        continue
    d = pt.diagnostics
    print(f"{k:4d} {pt.s:9.4f} {pt.state.lam:10.6f} {d['sup_rho_i']:11.4e} {d['sup_rho_e']:11.4e}"
          f" {d['min_field']:11.4e} {pt.residual:10.2e}")
print("termination:", branch.termination.kind, branch.termination.details)

try:
    diag = bounded_density_diagnostic(branch, p)
    print("tail of sup rho_i + int rho_e:", ", ".join(f"{v:.4g}" for v in diag.values[-5:]))
    print("decreasing along the tail:", diag.decreasing)
except NotApplicable as exc:
    print("density diagnostic not applicable:", exc)

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)
amps = [pt.amplitude for pt in branch.points]
(out / "branch.svg").write_text(line_chart([("branch", amps, list(branch.lambdas))],
                                           title="branch from the sparking voltage",
                                           xlabel="amplitude", ylabel="lambda"))
