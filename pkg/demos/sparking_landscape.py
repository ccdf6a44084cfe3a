"""Roots of the sparking function for a few parameter sets.

Prints the landscape of g (zeros and pi^2 crossings), the roots of D with
their multiplicity and the regime flags, and writes one SVG per case into
demos/out/.

    python demos/sparking_landscape.py
"""
from pathlib import Path

import numpy as np

from townsend.model import Parameters, g_landscape
from townsend.sparking import D_normalized, sparking_report
from townsend.svg import line_chart

CASES = {
    "fig4": Parameters(3, 4, 5),
    "fig5": Parameters(70, 0.1, 0.1),
    "condA1": Parameters(12, 4, 0.01),
    "no_root": Parameters(1, 4, 0.1),
}


def describe(name, p, out):
    land = g_landscape(p)
    rep = sparking_report(p)
    flags = rep.regime_flags
    print(f"== {name}: a={p.a:g} b={p.b:g} gamma={p.gamma:g} L={p.L:g}")
    if land.root_count:
        print(f"   g = 0 at V = {land.Lambda_star:.6f}, {land.Lambda_sharp:.6f}")
    if land.Vc_star is not None:
        print(f"   g = pi^2/L^2 at V = {land.Vc_star:.6f}, {land.Vc_sharp:.6f}")
    print(f"   condA1={flags.condA1} condA2={flags.condA2} no-root region={flags.lemmaA3_no_root}")
    for r in rep.roots:
        tag = "positive null basis" if r.satisfies_positive1 else "g above pi^2"
        print(f"   root V_c={r.V_c:.9f}  g={r.g:+.4f}  multiplicity {r.multiplicity}  ({tag})")
    if not rep.roots:
        print("   no roots in", f"(0, {rep.V_max:g}]")
    for d in rep.diagnostics:
        print("   note:", d)

    V = np.linspace(rep.V_max / 2000, rep.V_max, 2000)
    svg = line_chart([("exp(-V/2) D", V, D_normalized(p, V) / (1 + p.gamma))],
                     title=f"sparking function, {name}", xlabel="V_c", ylabel="exp(-V_c/2) D",
                     markers=[(r.V_c, 0.0) for r in rep.roots], hlines=[0.0])
    (out / f"spark_{name}.svg").write_text(svg)


def main():
    out = Path(__file__).parent / "out"
    out.mkdir(exist_ok=True)
    for name, p in CASES.items():
        describe(name, p, out)


if __name__ == "__main__":
    main()
