"""Step through the truncated water-wave system and print each intermediate result."""

import sympy as sp

from hamperturb import (
    check_conserved0,
    is_hydro_integrable,
    load_manifest,
    render,
    second_order_check,
    second_order_extension_solve,
    solve_claws0,
    verify_chart,
)
from hamperturb.casebook import case_manifest


def main():
    setup = load_manifest(case_manifest("waterwave")).build()
    sys, ch, ws = setup.system, setup.chart, setup.ws
    rws = ch.rws

    print("velocity matrix:", [[render(sys.A[i, j], ws) for j in range(2)] for i in range(2)])
    print("Haantjes:", is_hydro_integrable(sys).to_dict())
    print("chart verified:", verify_chart(sys, ch).ok)
    for i, lam in enumerate(ch.lambdas):
        print(f"lambda_{i + 1} = {render(lam, rws)}   lambda_{i + 1},{i + 1} = {render(ch.lam_d[i][i], rws)}")

    pert = setup.perturbation
    print("h2 in the chart:", render(pert.H2_R.density, rws))
    so = second_order_check(pert)
    w = so.witness()
    print("second order:", so.verdict, "|", w.name, "|", w.test.residual)

    census = solve_claws0(sys, ch, setup.basis("claws"))
    print(f"census over {len(census.basis)} basis functions: {len(census.densities)} densities")
    for d in census.densities:
        mu = check_conserved0(sys, ch, d).mu
        ext = second_order_extension_solve(pert, d)
        print(f"  {render(d, ws):28s} mu = {[render(m, rws) for m in mu]}  extension: {ext.verdict}")

    R1, R2 = ch.R
    print("c_1 =", sp.factor(so.c[0]), "depends on R2:", sp.diff(so.c[0], R2) != 0)


if __name__ == "__main__":
    main()
