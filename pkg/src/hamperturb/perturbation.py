"""Integrability and (quasi-)triviality of ``H0 + eps H1 + eps^2 H2`` up to order two.

All chart-side quantities (``p_i``, ``d_ij``, ``C_i``, ``s_ij``, ``phi_i``)
are functions of the Riemann invariants of a verified chart.  Brackets of
chart-side functionals use the chain rule ``d/dv^a = sum_i R_{i,a} d/dR_i``
for variational derivatives, so the bracket is the same one as on the
state variables, just written in other coordinates.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import sympy as sp

from .errors import (
    BasisInsufficientError,
    HamPerturbError,
    InternalConsistencyError,
    NonGenericDensityError,
    NotConservedError,
    NotIntegrableError,
    PreconditionError,
)
from .hydro import Check, HydroSystem, RiemannChart, check_conserved0, _combine_mode
from .jets import LocalFunctional, poisson_bracket
from .kernel import (
    ZeroTest,
    antiderivative,
    canonical,
    free_atoms,
    identity_equations,
    render,
    zero_test,
)

__all__ = [
    "Perturbation",
    "chart_bracket",
    "to_chart_first",
    "first_order_check",
    "first_order_trivialize",
    "second_order_check",
    "build_h2_canonical",
    "potentials_from_s",
    "quasi_trivialize",
    "extend_claw",
    "second_order_extension_solve",
    "canonical_transform",
    "reduce_first_order",
]


def _verdict(ok: bool, vacuous: bool = False) -> str:
    if vacuous:
        return "vacuous"
    return "pass" if ok else "fail"


# --------------------------------------------------------------------------
# brackets in the chart
# --------------------------------------------------------------------------

def chart_bracket(F: LocalFunctional, G: LocalFunctional, chart: RiemannChart) -> LocalFunctional:
    """``{F, G}`` for functionals written on the Riemann-invariant jet space."""
    space = chart.space
    if F.space != space or G.space != space:
        raise HamPerturbError("chart_bracket needs functionals on the chart jet space")
    n = chart.n
    eta = chart.system.metric.eta
    eF = [F.variational_derivative(i) for i in range(n)]
    eG = [G.variational_derivative(i) for i in range(n)]
    xF = [canonical(sum((chart.grad[i][a] * eF[i] for i in range(n)), sp.S.Zero)) for a in range(n)]
    xG = [canonical(sum((chart.grad[i][a] * eG[i] for i in range(n)), sp.S.Zero)) for a in range(n)]
    dG = [space.D(x) if x != 0 else sp.S.Zero for x in xG]
    density = sp.S.Zero
    for a in range(n):
        for b in range(n):
            if eta[a, b] != 0 and xF[a] != 0 and dG[b] != 0:
                density += xF[a] * eta[a, b] * dG[b]
    return LocalFunctional(space.tidy(density), space, F.extended or G.extended)


# --------------------------------------------------------------------------
# the perturbation
# --------------------------------------------------------------------------

class Perturbation:
    """Truncated Hamiltonian ``H0 + eps H1 + eps^2 H2`` over a charted system.

    ``H1``/``H2`` may be given on the state jet space or on the chart jet
    space; both forms are available as ``h1_v``/``h1_R`` etc.
    """

    def __init__(self, system: HydroSystem, chart: RiemannChart | None,
                 H1: LocalFunctional | None = None, H2: LocalFunctional | None = None):
        self.system = system
        self.chart = chart
        for name, H, deg in (("H1", H1, 1), ("H2", H2, 2)):
            if H is None:
                continue
            if H.space not in (system.space,) + ((chart.space,) if chart else ()):
                raise HamPerturbError(f"{name} lives on an unknown jet space")
            parts = H.space.grade(H.density)
            if any(k != deg for k, v in parts.items() if v != 0):
                raise HamPerturbError(f"{name} must be homogeneous of jet degree {deg}, "
                                      f"got degrees {sorted(parts)}")
        self.H1 = H1
        self.H2 = H2

    def _need_chart(self):
        if self.chart is None:
            raise PreconditionError("this analysis needs a verified Riemann chart")
        return self.chart

    def _on(self, H, space, convert):
        if H is None:
            return LocalFunctional(sp.S.Zero, space)
        if H.space == space:
            return H
        return LocalFunctional(convert(H.density), space, H.extended)

    @functools.cached_property
    def H0_R(self) -> LocalFunctional:
        ch = self._need_chart()
        return LocalFunctional(ch.to_R(self.system.h0), ch.space)

    @functools.cached_property
    def H1_R(self) -> LocalFunctional:
        ch = self._need_chart()
        return self._on(self.H1, ch.space, ch.density_to_R)

    @functools.cached_property
    def H2_R(self) -> LocalFunctional:
        ch = self._need_chart()
        return self._on(self.H2, ch.space, ch.density_to_R)

    @functools.cached_property
    def H1_v(self) -> LocalFunctional:
        conv = self.chart.density_to_v if self.chart else None
        return self._on(self.H1, self.system.space, conv)

    @functools.cached_property
    def H2_v(self) -> LocalFunctional:
        conv = self.chart.density_to_v if self.chart else None
        return self._on(self.H2, self.system.space, conv)

    @functools.cached_property
    def d(self) -> sp.ImmutableMatrix:
        """Chart-side ``d_ij`` with ``h2 == sum_ij d_ij R_i,x R_j,x`` modulo total derivatives."""
        ch = self._need_chart()
        return ch.space.quadratic_form(self.H2_R.density)

    @functools.cached_property
    def d_tilde(self) -> sp.ImmutableMatrix:
        return self.system.space.quadratic_form(self.H2_v.density)


# --------------------------------------------------------------------------
# first order
# --------------------------------------------------------------------------

def to_chart_first(pert: Perturbation) -> tuple:
    """``p_i(R)`` with ``h1 == sum p_i R_i,x`` (``p_i = p~_a dv^a/dR_i``)."""
    ch = pert._need_chart()
    n = ch.n
    if pert.H1 is None:
        return tuple(sp.S.Zero for _ in range(n))
    if pert.H1.space == ch.space:
        return ch.space.linear_form(pert.H1.density)
    pt = pert.system.space.linear_form(pert.H1.density)
    ptR = [ch.to_R(x) for x in pt]
    return tuple(canonical(sum((ptR[a] * ch.dv[a][i] for a in range(n)), sp.S.Zero))
                 for i in range(n))


def _distinct_speeds(ch: RiemannChart):
    for i, j in itertools.combinations(range(ch.n), 2):
        if zero_test(ch.lambdas[i] - ch.lambdas[j], ch.rws).zero:
            raise PreconditionError(f"lambda_{i + 1} - lambda_{j + 1} vanishes identically")


@dataclass
class FirstOrderReport:
    p: tuple
    theta: dict  # (i, j) -> expr, i != j
    omega: dict  # (i, j) -> expr, i != j
    conditions: list  # ((i, j, k), ZeroTest)
    k0: sp.Expr | None = None  # in v
    k0_R: sp.Expr | None = None
    bracket_check: ZeroTest | None = None
    basis_insufficient: bool = False

    @property
    def vacuous(self) -> bool:
        return not self.conditions

    @property
    def ok(self) -> bool:
        return all(t.zero for _, t in self.conditions)

    def __bool__(self):
        return self.ok

    @property
    def verdict(self) -> str:
        return _verdict(self.ok, self.vacuous and self.ok)

    def first_failure(self):
        return next(((idx, t) for idx, t in self.conditions if not t.zero), None)

    def to_dict(self, ws=None, rws=None) -> dict:
        d = {"verdict": self.verdict,
             "mode": _combine_mode([t for _, t in self.conditions]),
             "p": [render(x, rws) for x in self.p],
             "omega": [{"ij": [i + 1, j + 1], "value": render(w, rws)}
                       for (i, j), w in sorted(self.omega.items()) if i < j],
             "conditions": [dict(triple=[x + 1 for x in idx], **t.to_dict())
                            for idx, t in self.conditions]}
        if self.k0 is not None:
            d["k0"] = render(self.k0, ws)
            d["k0_chart"] = render(self.k0_R, rws)
            d["bracket_check"] = self.bracket_check.to_dict()
        if self.basis_insufficient:
            d["trivializer"] = "basis-insufficient"
        return d


def first_order_check(pert: Perturbation) -> FirstOrderReport:
    """``w_ij,k - w_ik,j = a_ij w_ik + a_ji w_jk - a_ik w_ij - a_ki w_kj`` for distinct i, j, k."""
    ch = pert._need_chart()
    _distinct_speeds(ch)
    n = ch.n
    R = ch.R
    lam = ch.lambdas
    p = to_chart_first(pert)
    theta, omega = {}, {}
    for i, j in itertools.permutations(range(n), 2):
        theta[i, j] = canonical(sp.diff(p[i], R[j]) - sp.diff(p[j], R[i]))
        omega[i, j] = canonical(theta[i, j] / (lam[i] - lam[j]))
    a = {(i, j): ch.a(i, j) for i, j in itertools.permutations(range(n), 2)}
    conds = []
    for i, j, k in itertools.permutations(range(n), 3):
        lhs = sp.diff(omega[i, j], R[k]) - sp.diff(omega[i, k], R[j])
        rhs = (a[i, j] * omega[i, k] + a[j, i] * omega[j, k]
               - a[i, k] * omega[i, j] - a[k, i] * omega[k, j])
        conds.append(((i, j, k), zero_test(canonical(lhs - rhs), ch.rws)))
    return FirstOrderReport(p, theta, omega, conds)


def first_order_trivialize(pert: Perturbation, basis: Sequence) -> FirstOrderReport:
    """``k0`` in ``span(basis)`` with ``{H0, integral k0} == H1``.

    Chart route: ``w_ij == -(k0_ij + a_ij k0_i + a_ji k0_j)`` for i < j,
    solved exactly; the sign is the one of the bracket convention used
    here.  The solution is then re-verified on the state jet space.
    """
    rep = first_order_check(pert)
    if not rep.ok:
        raise PreconditionError("first-order integrability condition fails; no trivializer exists")
    ch = pert.chart
    n = ch.n
    R = ch.R
    basis = [canonical(sp.sympify(b)) for b in basis]
    if pert.H1 is None or all(zero_test(x, ch.rws).zero for x in rep.p):
        rep.k0, rep.k0_R, rep.bracket_check = sp.S.Zero, sp.S.Zero, ZeroTest(True, "exact")
        return rep
    if not basis:
        raise BasisInsufficientError("empty basis for the first-order trivializer")
    cs = sp.symbols(f"k0:{len(basis)}", cls=sp.Dummy)
    basis_R = [ch.to_R(b) for b in basis]
    k = sum((c * b for c, b in zip(cs, basis_R)), sp.S.Zero)
    kd = [sp.diff(k, R[i]) for i in range(n)]
    exprs = []
    for i, j in itertools.combinations(range(n), 2):
        exprs.append(rep.omega[i, j] + sp.diff(kd[i], R[j])
                     + ch.a(i, j) * kd[i] + ch.a(j, i) * kd[j])
    eqs = identity_equations(exprs, cs)
    sol = {c: sp.S.Zero for c in cs}
    if eqs:
        mat, rhs = sp.linear_eq_to_matrix(eqs, cs)
        try:
            vec, params = mat.gauss_jordan_solve(rhs)
        except ValueError:
            rep.basis_insufficient = True
            raise BasisInsufficientError(
                "no trivializer in the span of the basis (this does not disprove triviality)")
        vec = vec.xreplace({q: 0 for q in params})
        sol = {c: vec[idx] for idx, c in enumerate(cs)}
    k0 = canonical(sum((sol[c] * b for c, b in zip(cs, basis)), sp.S.Zero))
    rep.k0 = k0
    rep.k0_R = canonical(sum((sol[c] * b for c, b in zip(cs, basis_R)), sp.S.Zero))
    # independent route: Euler operator on the state jet space
    space = pert.system.space
    K0 = LocalFunctional(k0, space)
    diff_fn = poisson_bracket(pert.system.H0, K0, pert.system.metric) - pert.H1_v
    rep.bracket_check = diff_fn.zero_test()
    if not rep.bracket_check.zero:
        raise InternalConsistencyError(
            f"trivializer failed the bracket check: residual {rep.bracket_check.residual}")
    return rep


# --------------------------------------------------------------------------
# second order
# --------------------------------------------------------------------------

def potentials_from_s(s: Mapping, chart_R: Sequence, ws) -> list:
    """``phi_i`` with ``phi_i,j - phi_j,i == s_ij`` (axial gauge, ``phi_1 = 0``).

    ``s`` maps ``(i, j)`` (i != j) to expressions; closedness is checked on
    the way: after the first variable is integrated out, the remaining
    field must not depend on it.  Raises NotIntegrableError if a quadrature
    leaves the supported class.
    """
    R = list(chart_R)
    n = len(R)
    phi = [sp.S.Zero] * n
    if n <= 1:
        return phi

    def solve(vars_idx: list, field: dict):
        if len(vars_idx) <= 1:
            return {vars_idx[0]: sp.S.Zero} if vars_idx else {}
        first = vars_idx[0]
        rest = vars_idx[1:]
        out = {first: sp.S.Zero}
        for i in rest:
            out[i] = canonical(-antiderivative(field[first, i], R[first], ws))
        resid = {}
        for j, k in itertools.permutations(rest, 2):
            rho = canonical(field[j, k] - (sp.diff(out[j], R[k]) - sp.diff(out[k], R[j])))
            if not zero_test(sp.diff(rho, R[first]), ws).zero:
                raise HamPerturbError(
                    f"s is not closed: residual for ({j + 1},{k + 1}) depends on R{first + 1}")
            resid[j, k] = rho
        sub = solve(rest, resid)
        for i in rest:
            out[i] = canonical(out[i] + sub[i])
        return out

    sol = solve(list(range(n)), {k: canonical(v) for k, v in s.items()})
    return [sol[i] for i in range(n)]


@dataclass
class SecondOrderReport:
    d: sp.ImmutableMatrix
    lam_ii: tuple
    c: tuple
    cond_a: list  # Check
    cond_b: list  # Check
    C: tuple | None = None
    s: dict | None = None
    phi: list | None = None
    phi_checks: list = field(default_factory=list)
    phi_error: str | None = None

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.cond_a + self.cond_b)

    def __bool__(self):
        return self.ok

    @property
    def verdict(self) -> str:
        return _verdict(self.ok)

    def witness(self):
        return next((c for c in self.cond_a + self.cond_b if not c.ok), None)

    def to_dict(self, rws=None) -> dict:
        n = self.d.rows
        out = {"verdict": self.verdict,
               "mode": _combine_mode([c.test for c in self.cond_a + self.cond_b + self.phi_checks]),
               "d": [[render(self.d[i, j], rws) for j in range(n)] for i in range(n)],
               "lambda_ii": [render(x, rws) for x in self.lam_ii],
               "c_candidates": [render(x, rws) for x in self.c],
               "condition_a": [c.to_dict() for c in self.cond_a],
               "condition_b": [c.to_dict() for c in self.cond_b]}
        w = self.witness()
        if w is not None:
            out["witness"] = {"name": w.name, "expression": w.test.residual}
        if self.C is not None:
            out["C"] = [render(x, rws) for x in self.C]
            out["s"] = [{"ij": [i + 1, j + 1], "value": render(v, rws)}
                        for (i, j), v in sorted(self.s.items()) if i < j]
        if self.phi is not None:
            out["phi"] = [render(x, rws) for x in self.phi]
            out["phi_checks"] = [c.to_dict() for c in self.phi_checks]
        if self.phi_error:
            out["phi_error"] = self.phi_error
        return out


def _lam_ii(ch: RiemannChart) -> tuple:
    vals = tuple(ch.lam_d[i][i] for i in range(ch.n))
    for i, x in enumerate(vals):
        if zero_test(x, ch.rws).zero:
            raise PreconditionError(f"lambda_{i + 1},{i + 1} vanishes identically")
    return vals


def second_order_check(pert: Perturbation) -> SecondOrderReport:
    """Conditions on ``d_ij``: (a) ``-d_ii/lambda_i,i`` depends on R_i only;
    (b) ``(d_ij/(l_i-l_j))_,k + cyclic == 0`` for distinct i, j, k.

    On success builds ``C_i``, ``s_ij = (2 d_ij + C_i l_i,j + C_j l_j,i)/(l_i - l_j)``
    and potentials ``phi_i`` with ``phi_i,j - phi_j,i == s_ij``.
    """
    ch = pert._need_chart()
    _distinct_speeds(ch)
    n = ch.n
    R = ch.R
    lam = ch.lambdas
    lii = _lam_ii(ch)
    d = pert.d
    c = tuple(canonical(-d[i, i] / lii[i]) for i in range(n))
    cond_a = []
    for i in range(n):
        for j in range(n):
            if i != j:
                name = f"c_{i + 1} = -d_{i + 1}{i + 1}/lambda_{i + 1},{i + 1} independent of R{j + 1}"
                cond_a.append(Check(name, zero_test(sp.diff(c[i], R[j]), ch.rws)))
    e = {(i, j): canonical(d[i, j] / (lam[i] - lam[j]))
         for i, j in itertools.permutations(range(n), 2)}
    cond_b = []
    for i, j, k in itertools.combinations(range(n), 3):
        cyc = sp.diff(e[i, j], R[k]) + sp.diff(e[j, k], R[i]) + sp.diff(e[k, i], R[j])
        cond_b.append(Check(f"cyclic ({i + 1},{j + 1},{k + 1})",
                            zero_test(canonical(cyc), ch.rws)))
    rep = SecondOrderReport(d, lii, c, cond_a, cond_b)
    if not rep.ok:
        return rep
    C = c
    ld = ch.lam_d
    s = {}
    for i, j in itertools.permutations(range(n), 2):
        s[i, j] = canonical((2 * d[i, j] + C[i] * ld[i][j] + C[j] * ld[j][i]) / (lam[i] - lam[j]))
    rep.C, rep.s = C, s
    try:
        phi = potentials_from_s(s, R, ch.rws)
    except (NotIntegrableError, HamPerturbError) as exc:
        rep.phi_error = f"quadrature outside the supported class: {exc}"
        return rep
    rep.phi = phi
    for i, j in itertools.combinations(range(n), 2):
        res = sp.diff(phi[i], R[j]) - sp.diff(phi[j], R[i]) - s[i, j]
        rep.phi_checks.append(Check(f"phi_{i + 1},{j + 1} - phi_{j + 1},{i + 1} = s_{i + 1}{j + 1}",
                                    zero_test(canonical(res), ch.rws)))
    bad = next((x for x in rep.phi_checks if not x.ok), None)
    if bad is not None:
        raise InternalConsistencyError(f"potential reconstruction failed: {bad.test.residual}")
    return rep


def build_h2_canonical(chart: RiemannChart, C: Sequence, phi: Sequence) -> LocalFunctional:
    """``h2 = -sum C_i l_i,i R_i,x^2 + 1/2 sum_{i != j} (l_i - l_j) s_ij R_i,x R_j,x``
    with ``s_ij = phi_i,j - phi_j,i``."""
    n = chart.n
    R = chart.R
    C = [canonical(sp.sympify(x)) for x in C]
    phi = [canonical(sp.sympify(x)) for x in phi]
    if len(C) != n or len(phi) != n:
        raise HamPerturbError("need one C_i and one phi_i per component")
    for i, ci in enumerate(C):
        others = [R[j] for j in range(n) if j != i and ci.has(R[j])]
        if others and not all(zero_test(sp.diff(ci, x), chart.rws).zero for x in others):
            raise HamPerturbError(f"C_{i + 1} must depend on R{i + 1} only")
    lam = chart.lambdas
    x = [chart.space.jet(i, 1) for i in range(n)]
    h = sp.S.Zero
    for i in range(n):
        h -= C[i] * chart.lam_d[i][i] * x[i] ** 2
    for i, j in itertools.permutations(range(n), 2):
        sij = sp.diff(phi[i], R[j]) - sp.diff(phi[j], R[i])
        h += sp.Rational(1, 2) * (lam[i] - lam[j]) * sij * x[i] * x[j]
    return LocalFunctional(canonical(h), chart.space)


@dataclass
class QuasiTrivialReport:
    second: SecondOrderReport
    K1: LocalFunctional
    bracket_check: ZeroTest
    log_free: bool
    homogeneity: ZeroTest

    @property
    def ok(self) -> bool:
        return self.bracket_check.zero and self.log_free and self.homogeneity.zero

    def to_dict(self, rws=None) -> dict:
        return {"verdict": _verdict(self.ok),
                "K1": render(self.K1.density, rws),
                "bracket_check": self.bracket_check.to_dict(),
                "log_free": self.log_free,
                "homogeneity": self.homogeneity.to_dict()}


def generator_density(chart: RiemannChart, C: Sequence, phi: Sequence) -> sp.Expr:
    """``sum C_i (R_i,x log R_i,x - R_i,x) + phi_i R_i,x``."""
    out = sp.S.Zero
    for i in range(chart.n):
        x = chart.space.jet(i, 1)
        out += C[i] * (x * sp.log(x) - x) + phi[i] * x
    return out


def quasi_trivialize(pert: Perturbation, second: SecondOrderReport | None = None) -> QuasiTrivialReport:
    """Generator ``K1`` with ``{H0, K1} == H2``, verified in-engine."""
    ch = pert._need_chart()
    rep = second or second_order_check(pert)
    if not rep.ok:
        w = rep.witness()
        raise PreconditionError(f"second-order condition fails ({w.name}); no quasi-trivialization")
    if rep.phi is None:
        raise NotIntegrableError(rep.phi_error or "potentials unavailable")
    K1 = LocalFunctional(generator_density(ch, rep.C, rep.phi), ch.space, extended=True)
    space = ch.space
    grads = [K1.variational_derivative(i) for i in range(ch.n)]
    log_free = not any(isinstance(a, sp.log) for g in grads for a in free_atoms(g))
    homog = ZeroTest(True, "exact")
    for g in grads:
        homog = zero_test(canonical(space.degree_operator(g) - g), ch.rws)
        if not homog.zero:
            break
    br = chart_bracket(pert.H0_R, K1, ch)
    if any(isinstance(a, sp.log) for a in free_atoms(br.density)):
        log_free = False
    check = (br - pert.H2_R).zero_test()
    out = QuasiTrivialReport(rep, K1, check, log_free, homog)
    if not out.ok:
        raise InternalConsistencyError(
            f"generator verification failed: bracket residual {check.residual}, "
            f"log_free={log_free}, homogeneity={homog.residual}")
    return out


# --------------------------------------------------------------------------
# extensions of conservation laws
# --------------------------------------------------------------------------

@dataclass
class ExtensionReport:
    f0: sp.Expr
    mu: tuple
    generic: bool
    F2: sp.Expr | None = None  # chart-side density
    D: sp.ImmutableMatrix | None = None
    D_tilde: sp.ImmutableMatrix | None = None
    checks: list = field(default_factory=list)  # Check
    route_agreement: ZeroTest | None = None
    final: ZeroTest | None = None

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks) and self.final is not None and self.final.zero

    def __bool__(self):
        return self.ok

    @property
    def verdict(self) -> str:
        return _verdict(self.ok)

    def first_failure(self):
        bad = next((c for c in self.checks if not c.ok), None)
        if bad is not None:
            return bad.name, bad.test.residual
        if self.final is not None and not self.final.zero:
            return "{H0,F2} + {H2,F0} total derivative", self.final.residual
        return None

    def to_dict(self, ws=None, rws=None) -> dict:
        out = {"f0": render(self.f0, ws), "verdict": self.verdict,
               "mu": [render(m, rws) for m in self.mu], "generic": self.generic}
        tests = [c.test for c in self.checks] + ([self.final] if self.final else [])
        out["mode"] = _combine_mode(tests)
        if self.F2 is not None:
            out["F2"] = render(self.F2, rws)
        if self.D is not None:
            n = self.D.rows
            out["D"] = [[render(self.D[i, j], rws) for j in range(n)] for i in range(n)]
        if self.D_tilde is not None:
            n = self.D_tilde.rows
            out["D_tilde"] = [[render(self.D_tilde[i, j], ws) for j in range(n)] for i in range(n)]
        if self.route_agreement is not None:
            out["route_agreement"] = self.route_agreement.to_dict()
        out["checks"] = [c.to_dict() for c in self.checks]
        if self.final is not None:
            out["final_bracket"] = self.final.to_dict()
        fail = self.first_failure()
        if fail is not None:
            out["witness"] = {"name": fail[0], "expression": fail[1]}
        return out


def _conserved(pert: Perturbation, f0, require_generic: bool):
    ch = pert._need_chart()
    rep = check_conserved0(pert.system, ch, f0)
    if not rep.conserved:
        bad = next(t for _, t in rep.commutator if not t.zero)
        raise NotConservedError(f"f0 = {render(rep.f0, pert.system.ws)} is not conserved at "
                                f"order zero (commutator residual {bad.residual})")
    if rep.degenerate:
        raise NotConservedError("f0 is degenerate (constant density)")
    if require_generic and not rep.generic:
        raise NonGenericDensityError(
            f"f0 = {render(rep.f0, pert.system.ws)} has coinciding Hessian eigenvalues")
    return rep


def _final_identity(pert: Perturbation, F0R: LocalFunctional, F2: LocalFunctional) -> ZeroTest:
    ch = pert.chart
    total = chart_bracket(pert.H0_R, F2, ch) + chart_bracket(pert.H2_R, F0R, ch)
    return total.zero_test()


def extend_claw(pert: Perturbation, f0, trivial: QuasiTrivialReport | None = None,
                require_generic: bool = False) -> ExtensionReport:
    """``F2 = {F0, K1}``, cross-checked against the closed form
    ``-sum C_i mu_i,x R_i,x + 1/2 sum_{i != j} (mu_i - mu_j) s_ij R_i,x R_j,x``."""
    ch = pert._need_chart()
    crep = _conserved(pert, f0, require_generic)
    trivial = trivial or quasi_trivialize(pert)
    sec = trivial.second
    space = ch.space
    n = ch.n
    F0R = LocalFunctional(ch.to_R(crep.f0), space)
    F2a = chart_bracket(F0R, trivial.K1, ch)
    mu = crep.mu
    x = [space.jet(i, 1) for i in range(n)]
    closed = sp.S.Zero
    for i in range(n):
        closed -= sec.C[i] * space.D(mu[i]) * x[i]
    for i, j in itertools.permutations(range(n), 2):
        closed += sp.Rational(1, 2) * (mu[i] - mu[j]) * sec.s[i, j] * x[i] * x[j]
    F2b = LocalFunctional(canonical(closed), space)
    agree = (F2a - F2b).zero_test()
    if not agree.zero:
        raise InternalConsistencyError(f"F2 routes disagree: residual {agree.residual}")
    out = ExtensionReport(crep.f0, mu, bool(crep.generic), F2=F2b.density, route_agreement=agree)
    out.final = _final_identity(pert, F0R, F2b)
    return out


def second_order_extension_solve(pert: Perturbation, f0,
                                 require_generic: bool = False) -> ExtensionReport:
    """Direct construction of ``D_ij`` for one conserved density.

    ``D_ii = mu_i,i d_ii / l_i,i`` and ``D_ij = d_ij (mu_i - mu_j)/(l_i - l_j)``
    (division-free, so coinciding ``mu`` are allowed unless
    ``require_generic``), then every chart identity for ``(i, j, l)`` and
    finally ``{H0,F2} + {H2,F0} == 0`` are verified.
    """
    ch = pert._need_chart()
    _distinct_speeds(ch)
    crep = _conserved(pert, f0, require_generic)
    n = ch.n
    R = ch.R
    lam = ch.lambdas
    lii = _lam_ii(ch)
    mu = crep.mu
    d = pert.d
    mud = [[canonical(sp.diff(mu[i], R[j])) for j in range(n)] for i in range(n)]
    D = [[None] * n for _ in range(n)]
    for i in range(n):
        D[i][i] = canonical(mud[i][i] * d[i, i] / lii[i])
    for i, j in itertools.permutations(range(n), 2):
        D[i][j] = canonical(d[i, j] * (mu[i] - mu[j]) / (lam[i] - lam[j]))
    Dm = sp.ImmutableMatrix(D)
    ld = ch.lam_d
    checks = []
    for i, j, l in itertools.product(range(n), repeat=3):
        lhs = (ld[i][l] * D[i][j] + ld[j][i] * D[j][l] + ld[i][j] * D[i][l]
               + (lam[i] - lam[l]) * sp.diff(D[l][j], R[i])
               + (lam[j] - lam[l]) * sp.diff(D[l][i], R[j])
               + (lam[l] - lam[j]) * sp.diff(D[i][j], R[l]))
        rhs = (mud[i][l] * d[i, j] + mud[j][i] * d[j, l] + mud[i][j] * d[i, l]
               + (mu[i] - mu[l]) * sp.diff(d[l, j], R[i])
               + (mu[j] - mu[l]) * sp.diff(d[l, i], R[j])
               + (mu[l] - mu[j]) * sp.diff(d[i, j], R[l]))
        checks.append(Check(f"chart identity (i,j,l)=({i + 1},{j + 1},{l + 1})",
                            zero_test(canonical(lhs - rhs), ch.rws)))
    x = [ch.space.jet(i, 1) for i in range(n)]
    F2 = LocalFunctional(canonical(sum((D[i][j] * x[i] * x[j]
                                        for i in range(n) for j in range(n)), sp.S.Zero)), ch.space)
    Dt = [[ch.to_v(canonical(sum((D[i][j] * ch.grad[i][a] * ch.grad[j][b]
                                  for i in range(n) for j in range(n)), sp.S.Zero)))
           for b in range(n)] for a in range(n)]
    out = ExtensionReport(crep.f0, mu, bool(crep.generic), F2=F2.density, D=Dm,
                          D_tilde=sp.ImmutableMatrix(Dt), checks=checks)
    F0R = LocalFunctional(ch.to_R(crep.f0), ch.space)
    out.final = _final_identity(pert, F0R, F2)
    return out


# --------------------------------------------------------------------------
# canonical transformations
# --------------------------------------------------------------------------

def canonical_transform(H: Mapping[int, LocalFunctional], K: Mapping[int, LocalFunctional],
                        order: int, bracket: Callable) -> dict:
    """``H + eps {H, K} + eps^2/2 {{H, K}, K}`` as an eps-series, truncated at ``order``.

    ``H`` and ``K`` map powers of eps to functionals, so ``K = -eps K1`` is
    ``{1: -K1}``; ``bracket(F, G)`` is the Poisson bracket to use.
    """
    if order not in (0, 1, 2):
        raise HamPerturbError("order must be 0, 1 or 2")
    some = next(iter(H.values()))
    zero = LocalFunctional(sp.S.Zero, some.space)
    out = {m: zero for m in range(order + 1)}
    for a, F in H.items():
        if a <= order:
            out[a] = out[a] + F
    first = {}
    for a, F in H.items():
        for b, G in K.items():
            m = a + b + 1
            if m <= order:
                term = bracket(F, G)
                first[m] = first[m] + term if m in first else term
                out[m] = out[m] + term
    for m1, F in first.items():
        for c, G in K.items():
            m = m1 + c + 1
            if m <= order:
                out[m] = out[m] + bracket(F, G).scale(sp.Rational(1, 2))
    for m, F in out.items():
        if F.extended:
            F.space.check_ring(F.density, extended=True)
    return out


def reduce_first_order(pert: Perturbation, basis: Sequence):
    """Remove ``H1`` by the canonical transformation generated by ``-k0``.

    Returns ``(new perturbation with H1 = 0, first-order report)``; the new
    ``H2`` is ``H2 - 1/2 {H1, K0}`` on the state jet space.
    """
    rep = first_order_trivialize(pert, basis)
    if rep.k0 is None or rep.k0 == 0:
        return Perturbation(pert.system, pert.chart, None, pert.H2), rep
    sys = pert.system
    K0 = LocalFunctional(rep.k0, sys.space)
    series = {0: sys.H0, 1: pert.H1_v, 2: pert.H2_v}
    out = canonical_transform(series, {0: -K0}, 2,
                              lambda F, G: poisson_bracket(F, G, sys.metric))
    if not out[1].is_zero():
        raise InternalConsistencyError("first-order term survived the trivializing transformation")
    return Perturbation(sys, pert.chart, None, out[2]), rep
