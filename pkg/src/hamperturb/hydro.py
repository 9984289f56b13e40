"""Dispersionless systems ``v_t = A(v) v_x`` with ``A = eta * Hess(h0)``.

Velocity matrix, Haantjes tensor, Riemann charts (verified, or built for
n = 2), Tsarev conditions and order-zero conservation laws.
"""

from __future__ import annotations

import functools
import itertools
import random
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import sympy as sp

from .errors import ChartError, HamPerturbError, NotIntegrableError, PreconditionError
from .jets import JetSpace, LocalFunctional, Metric
from .kernel import (
    Workspace,
    ZeroTest,
    _eval,
    antiderivative,
    canonical,
    free_atoms,
    identity_equations,
    render,
    substitute,
    zero_test,
)

__all__ = [
    "HydroSystem",
    "RiemannChart",
    "Check",
    "velocity_matrix",
    "haantjes_tensor",
    "is_hydro_integrable",
    "verify_chart",
    "solve_chart_n2",
    "tsarev_check",
    "check_conserved0",
    "solve_claws0",
]


@dataclass(frozen=True)
class Check:
    """One named identity check with its zero-test provenance."""

    name: str
    test: ZeroTest
    expect_zero: bool = True

    @property
    def ok(self) -> bool:
        return self.test.zero == self.expect_zero

    def to_dict(self) -> dict:
        d = {"name": self.name, "pass": self.ok}
        d.update(self.test.to_dict())
        return d


def _combine_mode(tests) -> str:
    return "probabilistic" if any(t.mode == "probabilistic" for t in tests) else "exact"


# --------------------------------------------------------------------------
# systems
# --------------------------------------------------------------------------

def velocity_matrix(h0: sp.Expr, metric: Metric, ws: Workspace) -> sp.ImmutableMatrix:
    """``A^a_g = eta^{ab} d_b d_g h0``."""
    n = ws.n
    if metric.n != n:
        raise HamPerturbError("metric size does not match the number of variables")
    v = ws.symbols
    hess = [[sp.diff(h0, v[b], v[g]) for g in range(n)] for b in range(n)]
    return sp.ImmutableMatrix(n, n, lambda a, g: canonical(
        sum((metric.eta[a, b] * hess[b][g] for b in range(n)), sp.S.Zero)))


class HydroSystem:
    """Metric ``eta``, density ``h0(v)`` and the derived velocity matrix."""

    def __init__(self, ws: Workspace, metric: Metric, h0):
        if metric.n != ws.n:
            raise HamPerturbError("metric size does not match the number of variables")
        self.ws = ws
        self.metric = metric
        self.h0 = canonical(sp.sympify(h0))
        bad = [s for s in self.h0.free_symbols if (ws.jet_info(s) or (0, 1))[1] != 0]
        if bad:
            raise HamPerturbError(f"h0 may depend on base variables only, got {bad}")
        self.space = JetSpace(ws)
        self.A = velocity_matrix(self.h0, metric, ws)

    @property
    def n(self) -> int:
        return self.ws.n

    @property
    def v(self) -> tuple:
        return self.ws.symbols

    @functools.cached_property
    def hessian(self) -> sp.ImmutableMatrix:
        v = self.v
        return sp.ImmutableMatrix(self.n, self.n, lambda a, b: canonical(sp.diff(self.h0, v[a], v[b])))

    @functools.cached_property
    def third(self) -> dict:
        v = self.v
        out = {}
        for idx in itertools.combinations_with_replacement(range(self.n), 3):
            val = canonical(sp.diff(self.hessian[idx[0], idx[1]], v[idx[2]]))
            for perm in set(itertools.permutations(idx)):
                out[perm] = val
        return out

    @property
    def H0(self) -> LocalFunctional:
        return LocalFunctional(self.h0, self.space)

    def eta_symmetry_residuals(self) -> list:
        """``eta_{ar} A^r_b - eta_{br} A^r_a`` for a < b."""
        g = self.metric.eta_inv
        out = []
        for a, b in itertools.combinations(range(self.n), 2):
            res = sum((g[a, r] * self.A[r, b] - g[b, r] * self.A[r, a] for r in range(self.n)),
                      sp.S.Zero)
            out.append(((a, b), canonical(res)))
        return out


def haantjes_tensor(sys: HydroSystem) -> dict:
    """``H_{abc}`` for all index triples, as a dict keyed by ``(a, b, c)``.

    ``H_{abc} = (A_{a r s} A_{b f} A_{c p} + cyclic) A^r_m delta^{s m p f}``
    with ``A_{..}`` derivatives of h0 and ``delta`` built from eta.
    """
    n = sys.n
    T = sys.third
    Hs = sys.hessian
    A = sys.A
    met = sys.metric
    # contract the (b, c)-independent part once: X_{a s f p} = sum_r,m A_{a r s} A^r_m delta^{s m p f}
    X = {}
    for a, s, f, p in itertools.product(range(n), repeat=4):
        acc = sp.S.Zero
        for r in range(n):
            if T[(a, r, s)] == 0:
                continue
            for m in range(n):
                dl = met.delta(s, m, p, f)
                if dl != 0 and A[r, m] != 0:
                    acc += T[(a, r, s)] * A[r, m] * dl
        X[(a, s, f, p)] = acc

    def part(a, b, c):
        acc = sp.S.Zero
        for s, f, p in itertools.product(range(n), repeat=3):
            x = X[(a, s, f, p)]
            if x != 0 and Hs[b, f] != 0 and Hs[c, p] != 0:
                acc += x * Hs[b, f] * Hs[c, p]
        return acc

    out = {}
    for a, b, c in itertools.product(range(n), repeat=3):
        out[(a, b, c)] = canonical(part(a, b, c) + part(b, c, a) + part(c, a, b))
    return out


@dataclass(frozen=True)
class HaantjesReport:
    integrable: bool
    mode: str
    witness_index: tuple | None = None
    witness: str | None = None

    def __bool__(self):
        return self.integrable

    def to_dict(self) -> dict:
        d = {"verdict": "pass" if self.integrable else "fail", "mode": self.mode}
        if not self.integrable:
            d["witness_index"] = [i + 1 for i in self.witness_index]
            d["witness"] = self.witness
        return d


def is_hydro_integrable(sys: HydroSystem) -> HaantjesReport:
    tensor = haantjes_tensor(sys)
    tests = []
    for idx in sorted(tensor):
        zt = zero_test(tensor[idx], sys.ws)
        tests.append(zt)
        if not zt.zero:
            return HaantjesReport(False, zt.mode, idx, render(tensor[idx], sys.ws))
    return HaantjesReport(True, _combine_mode(tests))


# --------------------------------------------------------------------------
# Riemann charts
# --------------------------------------------------------------------------

class RiemannChart:
    """Riemann invariants ``R_i(v)``, inverse ``v(R)`` and speeds ``lambda_i(R)``.

    ``rws`` declares the R variables and the ordering assumptions under which
    radicals such as ``sqrt((R1-R2)^2/4)`` simplify.
    """

    def __init__(self, system: HydroSystem, rws: Workspace, forward: Sequence,
                 inverse: Sequence, lambdas: Sequence):
        n = system.n
        if not (rws.n == len(forward) == len(inverse) == len(lambdas) == n):
            raise ChartError("chart dimensions do not match the system")
        clash = set(rws.names) & set(system.ws.names)
        if clash:
            raise ChartError(f"chart variables clash with state variables: {sorted(clash)}")
        self.system = system
        self.rws = rws
        self.forward = tuple(canonical(sp.sympify(f)) for f in forward)
        self.inverse = tuple(canonical(sp.sympify(f)) for f in inverse)
        self.lambdas = tuple(canonical(sp.sympify(f)) for f in lambdas)
        for f in self.forward:
            if not all(system.ws.jet_info(s) is not None for s in f.free_symbols):
                raise ChartError(f"forward map {f} uses undeclared variables")
        for f in self.inverse + self.lambdas:
            if not all(rws.jet_info(s) is not None for s in f.free_symbols):
                raise ChartError(f"chart expression {f} uses undeclared variables")
        self.space = JetSpace(rws)

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def R(self) -> tuple:
        return self.rws.symbols

    def to_R(self, e) -> sp.Expr:
        """Function of v rewritten in R (inverse substitution)."""
        return substitute(e, dict(zip(self.system.v, self.inverse)), self.rws)

    def to_v(self, e) -> sp.Expr:
        """Function of R rewritten in v (forward substitution)."""
        return substitute(e, dict(zip(self.R, self.forward)), self.system.ws)

    def density_to_R(self, e) -> sp.Expr:
        from .jets import transform_density
        return transform_density(e, self.system.space, self.space, self.inverse)

    def density_to_v(self, e) -> sp.Expr:
        from .jets import transform_density
        return transform_density(e, self.space, self.system.space, self.forward)

    @functools.cached_property
    def grad(self) -> tuple:
        """``R_{i,a}`` expressed in R."""
        v = self.system.v
        return tuple(tuple(self.to_R(sp.diff(self.forward[i], v[a])) for a in range(self.n))
                     for i in range(self.n))

    @functools.cached_property
    def dv(self) -> tuple:
        """``dv^a/dR_i`` as ``dv[a][i]``."""
        return tuple(tuple(canonical(sp.diff(self.inverse[a], self.R[i])) for i in range(self.n))
                     for a in range(self.n))

    @functools.cached_property
    def lam_d(self) -> tuple:
        """``lambda_{i,j}`` as ``lam_d[i][j]``."""
        return tuple(tuple(canonical(sp.diff(self.lambdas[i], self.R[j])) for j in range(self.n))
                     for i in range(self.n))

    def a(self, i: int, j: int) -> sp.Expr:
        return canonical(self.lam_d[i][j] / (self.lambdas[i] - self.lambdas[j]))

    @functools.cached_property
    def A_R(self) -> sp.ImmutableMatrix:
        return sp.ImmutableMatrix(self.n, self.n, lambda a, b: self.to_R(self.system.A[a, b]))

    def base_point(self, seed: int = 0) -> dict:
        return self.system.ws.sample_point(self.system.v, random.Random(seed))

    def labeling(self, seed: int = 0) -> list:
        """``lambda_i`` values (as decimal strings) at the base point."""
        v0 = self.base_point(seed)
        R0 = {}
        with mpmath.workdps(30):
            for i, f in enumerate(self.forward):
                R0[self.R[i]] = _eval(f, v0)
            vals = [_eval_mp(lam, R0) for lam in self.lambdas]
            return [mpmath.nstr(x, 8) for x in vals]


def _eval_mp(e, point):
    pt = {k: sp.Rational(str(mpmath.nstr(v, 40))) for k, v in point.items()}
    return _eval(e, pt)


@dataclass
class ChartReport:
    checks: list = field(default_factory=list)
    labeling: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def mode(self) -> str:
        return _combine_mode(c.test for c in self.checks)

    def __bool__(self):
        return self.ok

    def first_failure(self):
        return next((c for c in self.checks if not c.ok), None)

    def to_dict(self) -> dict:
        return {"verdict": "pass" if self.ok else "fail", "mode": self.mode,
                "lambda_at_base_point": self.labeling,
                "checks": [c.to_dict() for c in self.checks]}


def verify_chart(sys: HydroSystem, chart: RiemannChart) -> ChartReport:
    n = sys.n
    rep = ChartReport()
    vws, rws = sys.ws, chart.rws
    for i in range(n):
        back = chart.to_R(chart.forward[i])
        rep.checks.append(Check(f"forward(inverse(R))_{i + 1} = R_{i + 1}",
                                zero_test(back - chart.R[i], rws)))
    for a in range(n):
        back = chart.to_v(chart.inverse[a])
        rep.checks.append(Check(f"inverse(forward(v))_{a + 1} = {sys.ws.names[a]}",
                                zero_test(back - sys.v[a], vws)))
    jac = sp.Matrix(n, n, lambda i, a: chart.grad[i][a])
    rep.checks.append(Check("jacobian determinant", zero_test(canonical(jac.det()), rws),
                            expect_zero=False))
    A = chart.A_R
    for i in range(n):
        for b in range(n):
            res = sum((A[a, b] * chart.grad[i][a] for a in range(n)), sp.S.Zero)
            res -= chart.lambdas[i] * chart.grad[i][b]
            rep.checks.append(Check(f"eigencovector i={i + 1} beta={b + 1}",
                                    zero_test(canonical(res), rws)))
    for i, j in itertools.combinations(range(n), 2):
        rep.checks.append(Check(f"lambda_{i + 1} - lambda_{j + 1} not identically zero",
                                zero_test(chart.lambdas[i] - chart.lambdas[j], rws),
                                expect_zero=False))
    try:
        rep.labeling = chart.labeling()
    except Exception:  # labeling is informational; failures show up in checks
        rep.labeling = []
    return rep


def _integrating_factors(disc, v):
    exps = [sp.S.Zero, -sp.S.Half, sp.S.Half, -sp.S.One, sp.S.One]
    var_exps = [sp.S.Zero, -sp.S.One, sp.S.One, -sp.S.Half, sp.S.Half]
    for a in exps:
        for b in itertools.product(var_exps, repeat=len(v)):
            f = disc ** a if disc != 1 else sp.S.One
            for x, k in zip(v, b):
                f = f * x ** k
            yield f


def _potential(w, v, ws):
    """``R`` with ``dR/dv^a == w[a]`` (n = 2), or None."""
    x, y = v
    F = antiderivative(w[0], x, ws)
    rest = canonical(w[1] - sp.diff(F, y))
    if rest.has(x) and not zero_test(sp.diff(rest, x), ws).zero:
        return None
    rest = canonical(rest)
    G = antiderivative(rest, y, ws) if rest != 0 else sp.S.Zero
    return canonical(F + G)


def _chart_assumptions(forward, inverse, sys: HydroSystem, rnames, v0):
    """Ordering assumptions on R that fix the branch of every sqrt atom at v0."""
    rsyms = [sp.Symbol(nm) for nm in rnames]
    R0 = {rsyms[i]: _eval(f, v0) for i, f in enumerate(forward)}
    out = []
    for f in forward:
        for atom in free_atoms(f):
            if isinstance(atom, sp.log):
                continue
            rad = canonical(sp.expand(atom.args[0].xreplace(dict(zip(sys.v, inverse)))))
            num, den = sp.fraction(sp.factor(rad))
            _, factors = sp.factor_list(num)
            for fac, mult in factors:
                if mult >= 2 and fac.free_symbols:
                    val = _eval_mp(fac, R0)
                    out.append(canonical(fac if val > 0 else -fac))
    uniq = []
    for p in out:
        if p not in uniq:
            uniq.append(p)
    return uniq


def _solve_inverse(forward, sys: HydroSystem, rsyms, v0):
    """Solve ``R_i = forward_i(v)`` for v; pick the branch through v0."""
    v = sys.v
    atoms = set()
    for f in forward:
        atoms.update(a for a in free_atoms(f) if not isinstance(a, sp.log))
    subs = {}
    back = {}
    unknowns = list(v)
    for atom in atoms:
        arg = atom.args[0]
        if arg.is_Symbol and arg in v:
            s = sp.Dummy(f"s_{arg.name}", positive=True)
            subs[atom] = s
            back[arg] = s**2
            unknowns[unknowns.index(arg)] = s
    if len(subs) != len(atoms):
        raise ChartError("inverse map: only square roots of single state variables are supported; "
                         "supply the chart inverse explicitly")
    eqs = [sp.expand(sp.sympify(f).xreplace(subs).xreplace(back)) - rsyms[i]
           for i, f in enumerate(forward)]
    sols = sp.solve(eqs, unknowns, dict=True)
    R0 = {rsyms[i]: sp.Rational(str(mpmath.nstr(_eval(f, v0), 40))) for i, f in enumerate(forward)}
    for sol in sols:
        inv = []
        for a, x in enumerate(v):
            u = unknowns[a]
            val = sol.get(u, u)
            if u != x:
                val = val**2
            inv.append(canonical(sp.expand(val)))
        try:
            ok = all(abs(_eval(inv[a], R0) - _eval(x, v0)) < 1e-20 for a, x in enumerate(v))
        except (ValueError, ZeroDivisionError, KeyError):
            ok = False
        if ok:
            return inv
    raise ChartError("could not invert the Riemann invariants; supply the chart inverse explicitly")


def solve_chart_n2(sys: HydroSystem, names: Sequence[str] = ("R1", "R2"),
                   seed: int = 0) -> RiemannChart:
    """Build a Riemann chart for a two-component system.

    Speeds come from the quadratic formula; each left eigenvector is made
    exact by an integrating factor ``disc^a * v1^b1 * v2^b2`` from a small
    finite family, then integrated.  Labels follow ascending speed at the
    base point (the first seeded sample point of the state workspace).
    """
    if sys.n != 2:
        raise PreconditionError("solve_chart_n2 needs exactly two components")
    ws = sys.ws
    v = sys.v
    A = sys.A
    tr = canonical(A[0, 0] + A[1, 1])
    det = canonical(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
    disc = canonical(tr**2 - 4 * det)
    if zero_test(disc, ws).zero:
        raise PreconditionError("eigenvalues coincide identically (zero discriminant)")
    v0 = ws.sample_point(v, random.Random(seed))
    if _eval(disc, v0) <= 0:
        raise PreconditionError("eigenvalues are not real and distinct at the base point")
    root = sp.sqrt(disc)
    lams = [canonical((tr - root) / 2), canonical((tr + root) / 2)]
    forms = []
    for lam in lams:
        if not zero_test(A[1, 0], ws).zero:
            w = [A[1, 0], lam - A[0, 0]]
        elif not zero_test(A[0, 1], ws).zero:
            w = [lam - A[1, 1], A[0, 1]]
        else:
            # already diagonal: the eigenvector is a coordinate direction
            k = 0 if zero_test(lam - A[0, 0], ws).zero else 1
            w = [sp.S.One if k == 0 else sp.S.Zero, sp.S.One if k == 1 else sp.S.Zero]
        forms.append([canonical(x) for x in w])
    forward = []
    for w in forms:
        found = None
        for mu in _integrating_factors(disc, v):
            cw = [canonical(mu * x) for x in w]
            curl = canonical(sp.diff(cw[0], v[1]) - sp.diff(cw[1], v[0]))
            if not zero_test(curl, ws).zero:
                continue
            try:
                pot = _potential(cw, v, ws)
            except (NotIntegrableError, HamPerturbError):
                continue
            if pot is not None and not zero_test(pot, ws).zero:
                found = pot
                break
        if found is None:
            raise ChartError("no integrating factor in the candidate family; "
                             "supply a Riemann chart explicitly")
        # orientation: increasing in the last state variable at the base point
        slope = _eval(sp.diff(found, v[-1]), v0)
        if slope < 0 or (slope == 0 and _eval(sp.diff(found, v[0]), v0) < 0):
            found = canonical(-found)
        forward.append(found)
    rsyms = [sp.Symbol(nm) for nm in names]
    inverse = _solve_inverse(forward, sys, rsyms, v0)
    assumptions = _chart_assumptions(forward, inverse, sys, names, v0)
    rws = Workspace(names, assumptions, box=ws.box)
    lam_R = [substitute(lam.xreplace(dict(zip(v, inverse))), {}, rws) for lam in lams]
    chart = RiemannChart(sys, rws, forward, inverse, lam_R)
    rep = verify_chart(sys, chart)
    if not rep.ok:
        bad = rep.first_failure()
        raise ChartError(f"constructed chart failed verification: {bad.name}: {bad.test.residual}")
    return chart


@dataclass(frozen=True)
class TsarevReport:
    vacuous: bool
    residuals: tuple  # ((i, j, k), first residual, second residual)
    ok: bool
    mode: str

    def __bool__(self):
        return self.ok

    def to_dict(self) -> dict:
        verdict = "vacuous" if self.vacuous else ("pass" if self.ok else "fail")
        return {"verdict": verdict, "mode": self.mode, "conditions": [
            {"triple": [x + 1 for x in t], "symmetric": a.to_dict(), "second": b.to_dict()}
            for t, a, b in self.residuals]}


def tsarev_check(chart: RiemannChart) -> TsarevReport:
    """``a_ij,k = a_ik,j`` and ``a_ij,k + a_ij a_jk + a_ik a_kj - a_ij a_ik = 0``."""
    n = chart.n
    if n <= 2:
        return TsarevReport(True, (), True, "exact")
    R = chart.R
    a = {(i, j): chart.a(i, j) for i in range(n) for j in range(n) if i != j}
    out = []
    for i, j, k in itertools.permutations(range(n), 3):
        r1 = canonical(sp.diff(a[i, j], R[k]) - sp.diff(a[i, k], R[j]))
        r2 = canonical(sp.diff(a[i, j], R[k]) + a[i, j] * a[j, k] + a[i, k] * a[k, j]
                       - a[i, j] * a[i, k])
        out.append(((i, j, k), zero_test(r1, chart.rws), zero_test(r2, chart.rws)))
    ok = all(x.zero and y.zero for _, x, y in out)
    mode = _combine_mode([t for _, x, y in out for t in (x, y)])
    return TsarevReport(False, tuple(out), ok, mode)


# --------------------------------------------------------------------------
# order-zero conservation laws
# --------------------------------------------------------------------------

def _mixed_hessian(sys: HydroSystem, f0) -> sp.ImmutableMatrix:
    v = sys.v
    n = sys.n
    hess = [[sp.diff(f0, v[g], v[b]) for b in range(n)] for g in range(n)]
    return sp.ImmutableMatrix(n, n, lambda a, b: canonical(
        sum((sys.metric.eta[a, g] * hess[g][b] for g in range(n)), sp.S.Zero)))


@dataclass
class Conserved0Report:
    f0: sp.Expr
    conserved: bool
    degenerate: bool
    commutator: list  # ((a, b), ZeroTest)
    mu: tuple | None = None
    mu_checks: list = field(default_factory=list)  # Check
    generic: bool | None = None
    in_chart: list = field(default_factory=list)  # Check per (i, j)

    def __bool__(self):
        return self.conserved

    def to_dict(self, ws=None, rws=None) -> dict:
        d = {"f0": render(self.f0, ws), "conserved": self.conserved,
             "degenerate": self.degenerate,
             "commutator": [dict(entry=[a + 1, b + 1], **t.to_dict()) for (a, b), t in self.commutator]}
        if self.mu is not None:
            d["mu"] = [render(m, rws) for m in self.mu]
            d["generic"] = self.generic
            d["eigen_checks"] = [c.to_dict() for c in self.mu_checks]
            d["a_equals_b"] = [c.to_dict() for c in self.in_chart]
        return d


def hessian_eigenvalues(chart: RiemannChart, M: sp.ImmutableMatrix):
    """``mu_i = M^a_b R_{i,a} / R_{i,b}`` in R, for every valid beta (checked equal)."""
    n = chart.n
    MR = sp.ImmutableMatrix(n, n, lambda a, b: chart.to_R(M[a, b]))
    mus = []
    checks = []
    for i in range(n):
        cands = []
        for b in range(n):
            g = chart.grad[i][b]
            if zero_test(g, chart.rws).zero:
                continue
            num = sum((MR[a, b] * chart.grad[i][a] for a in range(n)), sp.S.Zero)
            cands.append((b, canonical(num / g)))
        if not cands:
            raise ChartError(f"gradient of R_{i + 1} vanishes identically")
        mu = cands[0][1]
        for b in range(n):
            res = sum((MR[a, b] * chart.grad[i][a] for a in range(n)), sp.S.Zero) - mu * chart.grad[i][b]
            checks.append(Check(f"M R_{i + 1} eigen relation beta={b + 1}",
                                zero_test(canonical(res), chart.rws)))
        mus.append(mu)
    return tuple(mus), checks


def check_conserved0(sys: HydroSystem, chart: RiemannChart | None, f0) -> Conserved0Report:
    """Commutation ``A M = M A`` of the velocity matrix with the mixed Hessian of f0."""
    f0 = canonical(sp.sympify(f0))
    v = sys.v
    n = sys.n
    degenerate = all(zero_test(sp.diff(f0, x), sys.ws).zero for x in v)
    M = _mixed_hessian(sys, f0)
    comm = (sys.A * M - M * sys.A)
    tests = [((a, b), zero_test(canonical(comm[a, b]), sys.ws))
             for a in range(n) for b in range(n)]
    conserved = all(t.zero for _, t in tests)
    rep = Conserved0Report(f0, conserved, degenerate, tests)
    if conserved and chart is not None:
        mus, checks = hessian_eigenvalues(chart, M)
        rep.mu = mus
        rep.mu_checks = checks
        rep.generic = all(not zero_test(mus[i] - mus[j], chart.rws).zero
                          for i, j in itertools.combinations(range(n), 2))
        R = chart.R
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                # division-free form of a_ij == b_ij
                res = sp.diff(mus[i], R[j]) - chart.a(i, j) * (mus[i] - mus[j])
                rep.in_chart.append(Check(f"a_{i + 1}{j + 1} = b_{i + 1}{j + 1}",
                                          zero_test(canonical(res), chart.rws)))
    return rep


@dataclass
class ClawCensus:
    basis: tuple
    densities: list  # conserved, non-degenerate densities
    degenerate: list
    coefficients: list  # per density, coefficient vector over the basis

    def to_dict(self, ws=None) -> dict:
        return {"basis": [render(b, ws) for b in self.basis],
                "count": len(self.densities),
                "densities": [render(d, ws) for d in self.densities],
                "degenerate_filtered": [render(d, ws) for d in self.degenerate]}


def solve_claws0(sys: HydroSystem, chart: RiemannChart | None, basis: Sequence) -> ClawCensus:
    """Conserved densities in ``span(basis)`` by exact linear algebra.

    Returns the reduced row-echelon basis of the solution space (in the
    given basis order, with constant-gradient elements moved first so that
    degenerate solutions separate cleanly), with degenerate ones removed.
    """
    basis = [canonical(sp.sympify(b)) for b in basis]
    if not basis:
        raise HamPerturbError("empty basis")
    v = sys.v
    flat = [all(zero_test(sp.diff(b, x), sys.ws).zero for x in v) for b in basis]
    order = [k for k in range(len(basis)) if flat[k]] + [k for k in range(len(basis)) if not flat[k]]
    basis = [basis[k] for k in order]
    cs = sp.symbols(f"c0:{len(basis)}", cls=sp.Dummy)
    f = sum((c * b for c, b in zip(cs, basis)), sp.S.Zero)
    M = _mixed_hessian(sys, f)
    comm = sys.A * M - M * sys.A
    eqs = identity_equations([comm[a, b] for a in range(sys.n) for b in range(sys.n)], cs)
    if eqs:
        mat, _ = sp.linear_eq_to_matrix(eqs, cs)
        null = mat.nullspace()
    else:
        null = [sp.Matrix([1 if k == j else 0 for k in range(len(cs))]) for j in range(len(cs))]
    if not null:
        return ClawCensus(tuple(basis), [], [], [])
    sol = sp.Matrix.hstack(*null).T.rref()[0]
    dens, degen, coeffs = [], [], []
    for r in range(sol.rows):
        row = sol.row(r)
        if all(x == 0 for x in row):
            continue
        d = canonical(sum((row[k] * basis[k] for k in range(len(basis))), sp.S.Zero))
        rep = check_conserved0(sys, None, d)
        if not rep.conserved:
            raise HamPerturbError(f"linear solve produced a non-conserved density {d}")
        if rep.degenerate:
            degen.append(d)
        else:
            dens.append(d)
            coeffs.append(tuple(row))
    return ClawCensus(tuple(basis), dens, degen, coeffs)
