import itertools

import pytest
import sympy as sp

from hamperturb.errors import ChartError, PreconditionError
from hamperturb.hydro import (
    HydroSystem,
    RiemannChart,
    check_conserved0,
    haantjes_tensor,
    is_hydro_integrable,
    solve_chart_n2,
    solve_claws0,
    tsarev_check,
    velocity_matrix,
    verify_chart,
)
from hamperturb.jets import LocalFunctional, Metric, poisson_bracket
from hamperturb.kernel import Workspace, canonical, is_zero, substitute
from hamperturb.parsing import parse_expr

CENSUS_BASIS = "1 r v r^2 r*v v^2 r^3 r^2*v r*v^2 v^3 r*log(r)".split()


def _haantjes_oracle(h0, eta, v):
    """Dense loop over every index, straight from the contraction formula."""
    n = len(v)
    eta = sp.Matrix(eta)
    hess = sp.hessian(h0, v)
    A = eta * hess
    third = lambda a, b, c: sp.diff(h0, v[a], v[b], v[c])
    delta = lambda s, m, p, f: eta[s, p] * eta[m, f] - eta[s, f] * eta[m, p]
    out = {}
    for a, b, c in itertools.product(range(n), repeat=3):
        total = 0
        for x, y, z in ((a, b, c), (b, c, a), (c, a, b)):
            for r, s, f, p, m in itertools.product(range(n), repeat=5):
                total += third(x, r, s) * hess[y, f] * hess[z, p] * A[r, m] * delta(s, m, p, f)
        out[(a, b, c)] = sp.expand(total)
    return out


# ---- velocity matrix -----------------------------------------------------

def test_velocity_matrix_water_wave(ww_system, ww_ws):
    r, v = ww_ws.symbols
    A = ww_system.A
    assert A == sp.ImmutableMatrix([[-v, -r], [-1, -v]])
    # reproduces r_t = -(r v)_x, v_t = -r_x - v v_x at order zero
    rx, vx = ww_ws.jet(0, 1), ww_ws.jet(1, 1)
    flow = A * sp.Matrix([rx, vx])
    assert sp.expand(flow[0] + rx * v + r * vx) == 0
    assert sp.expand(flow[1] + rx + v * vx) == 0


def test_velocity_matrix_trivial_cases():
    ws = Workspace(["a", "b"])
    a, b = ws.symbols
    eta = Metric([[2, 1], [1, 3]])
    quad = sp.Rational(1, 2) * sum(eta.eta_inv[i, j] * ws.symbols[i] * ws.symbols[j]
                                   for i in range(2) for j in range(2))
    assert velocity_matrix(quad, eta, ws) == sp.eye(2)
    one = Workspace(["v"])
    assert velocity_matrix(one.symbols[0] ** 3 / 6, Metric([[1]]), one) == sp.Matrix([[one.symbols[0]]])


def test_eta_symmetry(ww_system):
    assert all(e == 0 for _, e in ww_system.eta_symmetry_residuals())


# ---- Haantjes ------------------------------------------------------------

def test_haantjes_vanishes_for_two_components(ww_system):
    assert all(e == 0 for e in haantjes_tensor(ww_system).values())
    rep = is_hydro_integrable(ww_system)
    assert rep.integrable and rep.mode == "exact"
    ws = Workspace(["a", "b"])
    a, b = ws.symbols
    generic = HydroSystem(ws, Metric([[1, 2], [2, -1]]), a ** 3 * b + b ** 4 / 5 - a * b ** 2)
    assert is_hydro_integrable(generic).integrable


def test_haantjes_single_component():
    ws = Workspace(["v"])
    sys = HydroSystem(ws, Metric([[1]]), ws.symbols[0] ** 5)
    assert all(e == 0 for e in haantjes_tensor(sys).values())


def test_haantjes_three_components_matches_dense_oracle():
    ws = Workspace(["v1", "v2", "v3"])
    v = list(ws.symbols)
    h0 = v[0] * v[1] * v[2] + v[0] ** 4
    eta = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    sys = HydroSystem(ws, Metric(eta), h0)
    ours = haantjes_tensor(sys)
    oracle = _haantjes_oracle(h0, eta, v)
    assert set(ours) == set(oracle)
    for idx in oracle:
        assert sp.expand(ours[idx] - oracle[idx]) == 0, idx
    nonzero = any(e != 0 for e in oracle.values())
    assert is_hydro_integrable(sys).integrable == (not nonzero)
    assert nonzero


def test_haantjes_nondiagonal_metric_matches_oracle():
    ws = Workspace(["v1", "v2", "v3"])
    v = list(ws.symbols)
    h0 = v[0] ** 2 * v[2] + v[1] ** 3 - v[0] * v[1] * v[2]
    eta = [[0, 0, 1], [0, 1, 0], [1, 0, 0]]
    ours = haantjes_tensor(HydroSystem(ws, Metric(eta), h0))
    oracle = _haantjes_oracle(h0, eta, v)
    assert all(sp.expand(ours[i] - oracle[i]) == 0 for i in oracle)


# ---- charts ----------------------------------------------------------------

def test_water_wave_chart_verifies(ww_system, ww_chart):
    rep = verify_chart(ww_system, ww_chart)
    assert rep.ok, rep.first_failure()
    R1, R2 = ww_chart.R
    assert [canonical(ww_chart.lam_d[i][i]) for i in range(2)] == [sp.Rational(-3, 2)] * 2
    lam_v = [ww_chart.to_v(l) for l in ww_chart.lambdas]
    r, v = ww_system.v
    assert is_zero(lam_v[0] - (-v - sp.sqrt(r)), ww_system.ws)
    assert is_zero(lam_v[1] - (-v + sp.sqrt(r)), ww_system.ws)


def test_swapped_speeds_fail(ww_system, ww_chart):
    bad = RiemannChart(ww_system, ww_chart.rws, ww_chart.forward, ww_chart.inverse,
                       ww_chart.lambdas[::-1])
    rep = verify_chart(ww_system, bad)
    assert not rep.ok
    assert rep.first_failure().test.residual != "0"


def test_identity_chart_single_component():
    ws = Workspace(["v"])
    rws = Workspace(["R1"])
    sys = HydroSystem(ws, Metric([[1]]), ws.symbols[0] ** 3 / 6)
    ch = RiemannChart(sys, rws, [ws.symbols[0]], [rws.symbols[0]], [rws.symbols[0]])
    assert verify_chart(sys, ch).ok


def _functionally_dependent(f, g, v, ws):
    jac = sp.Matrix([[sp.diff(f, x) for x in v], [sp.diff(g, x) for x in v]])
    return is_zero(canonical(jac.det()), ws)


def test_solve_chart_water_wave(ww_system, ww_ws):
    ch = solve_chart_n2(ww_system)
    assert verify_chart(ww_system, ch).ok
    r, v = ww_ws.symbols
    targets = [v / 2 + sp.sqrt(r), v / 2 - sp.sqrt(r)]
    # each solved invariant is a reparametrization of one known invariant
    for f in ch.forward:
        assert sum(_functionally_dependent(f, t, ww_ws.symbols, ww_ws) for t in targets) == 1


def test_solve_chart_decoupled():
    ws = Workspace(["a", "b"], ["a > 0", "b > 0"])
    a, b = ws.symbols
    sys = HydroSystem(ws, Metric([[1, 0], [0, 2]]), a ** 3 / 6 + b ** 4)
    ch = solve_chart_n2(sys)
    assert verify_chart(sys, ch).ok
    assert sorted(len(f.free_symbols) for f in ch.forward) == [1, 1]
    assert {frozenset(f.free_symbols) for f in ch.forward} == {frozenset([a]), frozenset([b])}


def test_solve_chart_degenerate_input():
    ws = Workspace(["a", "b"])
    a, b = ws.symbols
    sys = HydroSystem(ws, Metric([[1, 0], [0, 1]]), (a ** 2 + b ** 2) / 2)
    with pytest.raises((PreconditionError, ChartError)):
        solve_chart_n2(sys)


# ---- Tsarev -----------------------------------------------------------------

def test_tsarev_vacuous_for_two_components(ww_chart):
    rep = tsarev_check(ww_chart)
    assert rep.ok and rep.vacuous


def test_tsarev_diagonal_passes(diagonal3):
    sys, ch = diagonal3
    assert verify_chart(sys, ch).ok
    rep = tsarev_check(ch)
    assert rep.ok and not rep.vacuous


def test_tsarev_perturbed_fails(diagonal3):
    sys, ch = diagonal3
    R1, R2, R3 = ch.R
    bad = RiemannChart(sys, ch.rws, ch.forward, ch.inverse, [R1 + R2 * R3, R2, R3])
    rep = tsarev_check(bad)
    assert not rep.ok
    residuals = [t for _, x, y in rep.residuals for t in (x, y) if not t.zero]
    assert residuals and all(t.residual != "0" for t in residuals)


# ---- order-zero conservation laws ---------------------------------------------

def _mu_oracle(f, ws):
    """Left-eigenvector computation for the water wave: mu_{1,2} = f_rv +- sqrt(r) f_rr."""
    r, v = ws.symbols
    frv, frr = sp.diff(f, r, v), sp.diff(f, r, r)
    return [frv + sp.sqrt(r) * frr, frv - sp.sqrt(r) * frr]


@pytest.mark.parametrize("text", ["r*v", "(1/2)*r*v^2 + (1/2)*r^2", "(1/2)*v^2 + r*log(r)"])
def test_conserved_mu_two_routes(ww_system, ww_chart, ww_ws, text):
    f = parse_expr(text, ww_ws)
    rep = check_conserved0(ww_system, ww_chart, f)
    assert rep.conserved and not rep.degenerate
    assert all(c.ok for c in rep.mu_checks), "mu must not depend on the component used"
    assert all(c.ok for c in rep.in_chart)
    for ours, ref in zip(rep.mu, _mu_oracle(f, ww_ws)):
        assert is_zero(canonical(ww_chart.to_v(ours) - ref), ww_ws)


def test_conserved_rv_has_unit_mu(ww_system, ww_chart, ww_ws):
    rep = check_conserved0(ww_system, ww_chart, parse_expr("r*v", ww_ws))
    assert rep.mu == (1, 1) and rep.generic is False


def test_constant_is_degenerate(ww_system, ww_chart):
    rep = check_conserved0(ww_system, ww_chart, sp.Integer(7))
    assert rep.conserved and rep.degenerate


def test_not_conserved(ww_system, ww_chart, ww_ws):
    rep = check_conserved0(ww_system, ww_chart, parse_expr("r^2*v", ww_ws))
    assert not rep.conserved
    assert any(not t.zero and t.residual != "0" for _, t in rep.commutator)


def test_census_water_wave(ww_system, ww_chart, ww_ws):
    basis = [parse_expr(t, ww_ws) for t in CENSUS_BASIS]
    census = solve_claws0(ww_system, ww_chart, basis)
    assert len(census.densities) == 5
    assert census.degenerate == [1]
    expected = [parse_expr(t, ww_ws) for t in
                ["r", "v", "r*v", "(1/2)*r*v^2 + (1/2)*r^2", "(1/2)*v^2 + r*log(r)"]]
    cs = sp.symbols("c0:5")
    for d in census.densities:
        # every density lies in the span of the expected list ...
        eq = sp.expand(d - sum(c * e for c, e in zip(cs, expected)))
        coeffs = sp.Poly(eq.subs(sp.log(ww_ws.symbols[0]), sp.Symbol("L")), *ww_ws.symbols,
                         sp.Symbol("L")).coeffs()
        assert sp.solve(coeffs, cs, dict=True)
        # ... and, by the second route, Poisson-commutes with H0
        F = LocalFunctional(d, ww_system.space)
        assert poisson_bracket(F, ww_system.H0, ww_system.metric).is_zero()


def test_census_larger_basis_finds_extra_density(ww_system, ww_chart, ww_ws):
    basis = [parse_expr(t, ww_ws) for t in CENSUS_BASIS + ["r*v^3"]]
    census = solve_claws0(ww_system, ww_chart, basis)
    assert len(census.densities) == 6
    extra = parse_expr("(1/3)*r*v^3 + r^2*v", ww_ws)
    assert check_conserved0(ww_system, None, extra).conserved


def test_census_small_bases(ww_system, ww_chart, ww_ws):
    P = lambda ts: [parse_expr(t, ww_ws) for t in ts]
    assert solve_claws0(ww_system, ww_chart, P(["r", "v"])).densities == P(["r", "v"])
    assert solve_claws0(ww_system, ww_chart, P(["r^2*v", "r^3"])).densities == []


def test_chart_substitution_of_h2(ww_chart, ww_ws, ww_rws):
    r, v = ww_ws.symbols
    R1, R2 = ww_rws.symbols
    out = substitute(r ** 3 / 6, {r: (R1 - R2) ** 2 / 4}, ww_rws)
    assert canonical(out - (R1 - R2) ** 6 / 384) == 0
