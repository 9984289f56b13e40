"""Differential polynomials on the jet space of n dependent variables.

A density is a sympy expression in base variables ``u`` and jet variables
``u_x, u_xx, u_3, ...`` of a :class:`JetSpace`.  The total x-derivative,
Euler operator, jet-degree grading, local functionals and the Poisson
bracket of the constant operator ``eta^{ab} d/dx`` live here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import sympy as sp
from sympy.polys.rings import PolyRing

from .errors import HamPerturbError, UnsupportedExpressionError
from .kernel import (
    Workspace,
    ZeroTest,
    canonical,
    logs_independent,
    render,
    simplify_radicals,
    zero_test,
)

__all__ = [
    "Metric",
    "JetSpace",
    "LocalFunctional",
    "total_x_derivative",
    "variational_derivative",
    "jet_degree_decompose",
    "poisson_bracket",
    "hamiltonian_flow",
    "is_total_derivative",
    "transform_density",
]


class Metric:
    """Constant symmetric invertible matrix ``eta^{ab}`` and its inverse ``eta_{ab}``."""

    def __init__(self, eta):
        mat = sp.ImmutableMatrix(eta).applyfunc(sp.nsimplify)
        if not mat.is_square:
            raise HamPerturbError("eta must be square")
        if any(not x.is_Rational for x in mat):
            raise HamPerturbError("eta entries must be rational constants")
        if mat != mat.T:
            raise HamPerturbError("eta must be symmetric")
        if mat.det() == 0:
            raise HamPerturbError("eta must be invertible")
        self.eta = mat
        self.eta_inv = sp.ImmutableMatrix(mat.inv())

    @property
    def n(self) -> int:
        return self.eta.rows

    def delta(self, a: int, b: int, c: int, d: int) -> sp.Expr:
        """``eta^{ac} eta^{bd} - eta^{ad} eta^{bc}``."""
        e = self.eta
        return e[a, c] * e[b, d] - e[a, d] * e[b, c]

    def __eq__(self, other):
        return isinstance(other, Metric) and self.eta == other.eta

    def __hash__(self):
        return hash(self.eta)

    def __repr__(self):
        return f"Metric({self.eta.tolist()})"


def _is_polynomial_in_jets(e: sp.Expr, jets: set) -> bool:
    for node in sp.preorder_traversal(e):
        if node.is_Pow and not (node.exp.is_Integer and node.exp >= 0):
            if node.base.free_symbols & jets:
                return False
        elif isinstance(node, sp.log) and node.args[0].free_symbols & jets:
            return False
    return True


def _is_polynomial(e: sp.Expr) -> bool:
    for node in sp.preorder_traversal(e):
        if node.is_Pow and not (node.exp.is_Integer and node.exp >= 0):
            return False
        if isinstance(node, sp.log):
            return False
    return True


class _NoFrac(Exception):
    """Expression has radicals or nested atoms; use the generic route."""


def _has_radical(e: sp.Expr) -> bool:
    return any(p.exp.is_Rational and not p.exp.is_Integer for p in e.atoms(sp.Pow))


class _FracCalc:
    """Rational functions of jets and log atoms with factored denominators.

    An element is a pair ``(N, e)`` standing for ``N / prod f_k**e_k``:
    ``N`` is a polynomial in the jets and in one placeholder per log atom,
    the ``f_k`` are monic irreducible polynomials registered on first use
    and ``e`` maps factor index to exponent.  All operations stay
    polynomial and reduction is trial division by the known factors, so no
    gcd is ever taken.  A log atom has ``dL = d(arg)/arg`` expanded over the
    factors of its argument.
    """

    def __init__(self, space: "JetSpace", exprs: Sequence[sp.Expr], extra: int):
        logs = set()
        syms = set()
        for e in exprs:
            if _has_radical(e):
                raise _NoFrac
            logs |= e.atoms(sp.log)
            syms |= e.free_symbols
        for L in logs:
            if L.args[0].has(sp.log):
                raise _NoFrac
            syms |= L.args[0].free_symbols
        top = max((space.info(x)[1] for x in syms if space.info(x) is not None), default=0)
        for a in range(space.n):
            syms.update(space.jet(a, k) for k in range(top + extra + 1))
        gens = sorted(syms, key=space.ws.sort_key)
        self.space = space
        self.logs = sorted(logs, key=sp.default_sort_key)
        self.placeholders = [sp.Dummy(f"L{i}") for i in range(len(self.logs))]
        self.ring = PolyRing(gens + self.placeholders, sp.QQ)
        self.gens = self.ring.gens
        self.n_syms = len(gens)
        self.index = {g: i for i, g in enumerate(gens)}
        self.next = {}
        for i, g in enumerate(gens):
            info = space.info(g)
            if info is not None:
                j = self.index.get(space.jet(info[0], info[1] + 1))
                if j is not None:
                    self.next[i] = j
        self.dead = [i for i, g in enumerate(gens)
                     if space.info(g) is not None and i not in self.next]
        self.factors: list = []
        self.factor_key: dict = {}
        self._dcache: dict = {}
        self.sub = dict(zip(self.logs, self.placeholders))
        self.unsub = dict(zip(self.placeholders, self.logs))
        # d log(arg) = sum_k m_k f_k' / f_k
        self.log_parts = []
        for L in self.logs:
            N, e = self.to(L.args[0])
            c, fs = self._factor(N)
            parts = dict(fs)
            for k, m in e.items():
                parts[k] = parts.get(k, 0) - m
            self.log_parts.append({k: m for k, m in parts.items() if m})

    # -- construction -------------------------------------------------------
    def _factor(self, N):
        """``N = c * prod f_k**m_k`` with registered monic factors."""
        if N == 0:
            raise ZeroDivisionError("division by zero")
        c, fs = N.factor_list()
        out = {}
        for f, m in fs:
            lc = f.LC
            f = f.monic()
            c *= lc ** m
            if any(f.degree(self.gens[self.n_syms + k]) > 0 for k in range(len(self.logs))):
                raise _NoFrac
            k = self.factor_key.get(f)
            if k is None:
                k = len(self.factors)
                self.factors.append(f)
                self.factor_key[f] = k
            out[k] = out.get(k, 0) + m
        return c, out

    def _fpow(self, e: dict):
        out = self.ring.one
        for k, m in e.items():
            out *= self.factors[k] ** m
        return out

    def const(self, c):
        return (self.ring(c), {})

    def add(self, a, b):
        (Na, ea), (Nb, eb) = a, b
        if Na == 0:
            return b
        if Nb == 0:
            return a
        keys = set(ea) | set(eb)
        e = {k: max(ea.get(k, 0), eb.get(k, 0)) for k in keys}
        Na = Na * self._fpow({k: e[k] - ea.get(k, 0) for k in keys if e[k] > ea.get(k, 0)})
        Nb = Nb * self._fpow({k: e[k] - eb.get(k, 0) for k in keys if e[k] > eb.get(k, 0)})
        return (Na + Nb, e)

    def mul(self, a, b):
        (Na, ea), (Nb, eb) = a, b
        if Na == 0 or Nb == 0:
            return (self.ring.zero, {})
        e = dict(ea)
        for k, m in eb.items():
            e[k] = e.get(k, 0) + m
        return (Na * Nb, e)

    def inv(self, a):
        N, e = a
        c, fs = self._factor(N)
        return (self._fpow(e) * self.ring.ground_new(self.ring.domain.one / c), fs)

    def to(self, expr: sp.Expr):
        expr = sp.sympify(expr)
        if expr.is_Rational:
            return self.const(expr)
        if expr.is_Symbol:
            i = self.index.get(expr)
            if i is None:
                raise _NoFrac
            return (self.gens[i], {})
        if isinstance(expr, sp.log):
            return (self.gens[self.n_syms + self.logs.index(expr)], {})
        if expr.is_Add:
            out = (self.ring.zero, {})
            for t in expr.args:
                out = self.add(out, self.to(t))
            return out
        if expr.is_Mul:
            out = self.const(1)
            for t in expr.args:
                out = self.mul(out, self.to(t))
            return out
        if expr.is_Pow and expr.exp.is_Integer:
            base = self.to(expr.base)
            p = int(expr.exp)
            if p < 0:
                base, p = self.inv(base), -p
            N, e = base
            return (N ** p, {k: m * p for k, m in e.items()})
        raise _NoFrac

    def reduce(self, a):
        N, e = a
        if N == 0:
            return (N, {})
        e = dict(e)
        for k in list(e):
            f = self.factors[k]
            while e[k] > 0:
                q, r = N.div(f)
                if r != 0:
                    break
                N = q
                e[k] -= 1
            if e[k] == 0:
                del e[k]
        return (N, e)

    def back(self, a) -> sp.Expr:
        N, e = self.reduce(a)
        num = N.as_expr().xreplace(self.unsub)
        den = sp.Mul(*[self.factors[k].as_expr().xreplace(self.unsub) ** m
                       for k, m in sorted(e.items())])
        return num / den

    @staticmethod
    def is_zero(a) -> bool:
        return a[0] == 0

    # -- calculus -----------------------------------------------------------
    def _fd(self, k: int, i: int):
        key = (k, i)
        if key not in self._dcache:
            self._dcache[key] = self.factors[k].diff(self.gens[i])
        return self._dcache[key]

    def partial(self, a, i: int):
        N, e = a
        g = self.gens[i]
        out = (N.diff(g), e)
        for k, m in e.items():
            df = self._fd(k, i)
            if df:
                e2 = dict(e)
                e2[k] += 1
                out = self.add(out, (-m * N * df, e2))
        for l, parts in enumerate(self.log_parts):
            dN = N.diff(self.gens[self.n_syms + l])
            if dN == 0:
                continue
            for k, m in parts.items():
                df = self._fd(k, i)
                if df:
                    e2 = dict(e)
                    e2[k] = e2.get(k, 0) + 1
                    out = self.add(out, (m * dN * df, e2))
        return out

    def _uses(self, a, i: int) -> bool:
        g = self.gens[i]
        if a[0].degree(g) > 0:
            return True
        if any(self.factors[k].degree(g) > 0 for k in a[1]):
            return True
        return any(a[0].degree(self.gens[self.n_syms + l]) > 0
                   and any(self.factors[k].degree(g) > 0 for k in parts)
                   for l, parts in enumerate(self.log_parts))

    def D(self, a):
        for i in self.dead:
            if self._uses(a, i):
                raise _NoFrac
        out = (self.ring.zero, {})
        for i, j in self.next.items():
            if self._uses(a, i):
                out = self.add(out, self.mul(self.partial(a, i), (self.gens[j], {})))
        return self.reduce(out)

    def euler(self, a, beta: int, top: int):
        idx = self.index
        acc = self.partial(a, idx[self.space.jet(beta, top)])
        for order in range(top - 1, -1, -1):
            d = self.D(acc)
            acc = self.add(self.partial(a, idx[self.space.jet(beta, order)]),
                           (-d[0], d[1]))
        return self.reduce(acc)


class JetSpace:
    """Jet coordinates over the base variables of a workspace."""

    def __init__(self, ws: Workspace):
        self.ws = ws
        self.n = ws.n
        self.base = ws.symbols

    def __repr__(self):
        return f"JetSpace({list(self.ws.names)!r})"

    def __eq__(self, other):
        return isinstance(other, JetSpace) and self.ws.names == other.ws.names

    def __hash__(self):
        return hash(self.ws.names)

    def jet(self, alpha: int, order: int) -> sp.Symbol:
        return self.ws.jet(alpha, order)

    def info(self, sym) -> tuple[int, int] | None:
        return self.ws.jet_info(sym)

    def jets_in(self, e: sp.Expr, min_order: int = 0) -> list[sp.Symbol]:
        out = []
        for s in e.free_symbols:
            info = self.info(s)
            if info is not None and info[1] >= min_order:
                out.append(s)
        return sorted(out, key=self.ws.sort_key)

    def max_order(self, e: sp.Expr) -> int:
        orders = [self.info(s)[1] for s in self.jets_in(e)]
        return max(orders, default=0)

    def tidy(self, e: sp.Expr) -> sp.Expr:
        """Expanded polynomial, or reduced fraction (not necessarily canonical)."""
        e = sp.sympify(e)
        if _is_polynomial(e):
            return sp.expand(e)
        try:
            calc = _FracCalc(self, [e], 0)
        except _NoFrac:
            return canonical(e)
        return calc.back(calc.to(e))

    def check_ring(self, e: sp.Expr, extended: bool = False) -> None:
        """Polynomial jet dependence, or (extended) rational/log in first jets only."""
        high = set(self.jets_in(e, 2 if extended else 1))
        if not _is_polynomial_in_jets(e, high):
            what = "jets of order >= 2" if extended else "jet variables"
            raise UnsupportedExpressionError(f"non-polynomial dependence on {what} in {e}")
        if extended:
            for node in sp.preorder_traversal(e):
                if node.is_Pow and node.exp.is_Rational and not node.exp.is_Integer:
                    if set(self.jets_in(node.base, 1)):
                        raise UnsupportedExpressionError(f"sqrt of jet variables in {e}")

    # -- calculus --------------------------------------------------------

    def _ring(self, e: sp.Expr, top: int):
        """Sparse polynomial ring holding ``e`` and all jets up to order ``top``."""
        gens = set(e.free_symbols)
        for a in range(self.n):
            gens.update(self.jet(a, k) for k in range(top + 1))
        gens = sorted(gens, key=self.ws.sort_key)
        R, *_ = sp.ring(gens, sp.QQ)
        return R, gens

    def _ring_D(self, p, R, gens, nxt):
        out = R.zero
        for i, g in enumerate(gens):
            j = nxt.get(i)
            if j is not None and p.degree(R.gens[i]) > 0:
                out += p.diff(R.gens[i]) * R.gens[j]
        return out

    def _next_map(self, gens):
        pos = {g: i for i, g in enumerate(gens)}
        nxt = {}
        for i, g in enumerate(gens):
            info = self.info(g)
            if info is not None:
                j = pos.get(self.jet(info[0], info[1] + 1))
                if j is not None:
                    nxt[i] = j
        return nxt

    def D(self, e: sp.Expr, tidy: bool = True) -> sp.Expr:
        """Total x-derivative."""
        e = sp.sympify(e)
        if _is_polynomial(e):
            R, gens = self._ring(e, self.max_order(e) + 1)
            p = R(e)
            return self._ring_D(p, R, gens, self._next_map(gens)).as_expr()
        try:
            calc = _FracCalc(self, [e], 1)
            return calc.back(calc.D(calc.to(e)))
        except _NoFrac:
            pass
        out = sp.S.Zero
        for s in e.free_symbols:
            info = self.info(s)
            if info is None:
                continue
            alpha, order = info
            out += sp.diff(e, s) * self.jet(alpha, order + 1)
        return self.tidy(out) if tidy else out

    def Dn(self, e: sp.Expr, k: int) -> sp.Expr:
        for _ in range(k):
            e = self.D(e)
        return e

    def euler(self, e: sp.Expr, beta: int) -> sp.Expr:
        """``sum_l (-D)^l d e / d u^beta_l`` evaluated Horner-style."""
        e = sp.sympify(e)
        top = max((self.info(s)[1] for s in self.jets_in(e) if self.info(s)[0] == beta),
                  default=-1)
        if top < 0:
            return sp.S.Zero
        if _is_polynomial(e):
            R, gens = self._ring(e, 2 * self.max_order(e) + 1)
            nxt = self._next_map(gens)
            p = R(e)
            idx = {g: i for i, g in enumerate(gens)}
            acc = p.diff(R.gens[idx[self.jet(beta, top)]])
            for order in range(top - 1, -1, -1):
                acc = p.diff(R.gens[idx[self.jet(beta, order)]]) - self._ring_D(acc, R, gens, nxt)
            return acc.as_expr()
        try:
            calc = _FracCalc(self, [e], top + 1)
            return calc.back(calc.euler(calc.to(e), beta, top))
        except _NoFrac:
            pass
        acc = sp.diff(e, self.jet(beta, top))
        for order in range(top - 1, -1, -1):
            acc = self.tidy(sp.diff(e, self.jet(beta, order)) - self.D(acc, tidy=False))
        return self.tidy(acc)

    def degree_operator(self, e: sp.Expr) -> sp.Expr:
        """``sum_l l u_l d/du_l`` applied to ``e``."""
        out = sp.S.Zero
        for s in self.jets_in(e, 1):
            out += self.info(s)[1] * s * sp.diff(e, s)
        return self.tidy(out)

    def grade(self, e: sp.Expr) -> dict[int, sp.Expr]:
        """Split a polynomial-in-jets density into homogeneous jet-degree parts."""
        e = sp.expand(sp.sympify(e))
        jets = self.jets_in(e, 1)
        parts: dict[int, sp.Expr] = {}
        for term in sp.Add.make_args(e):
            if term == 0:
                continue
            deg = 0
            for s in jets:
                k = sp.degree(term, s) if term.has(s) else 0
                deg += self.info(s)[1] * k
            parts[deg] = parts.get(deg, sp.S.Zero) + term
        return {k: parts[k] for k in sorted(parts)}

    def total_derivative_test(self, e: sp.Expr, seed: int | None = None) -> ZeroTest:
        """Zero test of every Euler component; returns the first failure if any."""
        e = sp.sympify(e)
        if not _is_polynomial(e):
            try:
                return self._frac_total_derivative_test(e, seed)
            except _NoFrac:
                pass
        last = ZeroTest(True, "exact")
        for beta in range(self.n):
            zt = zero_test(self.euler(e, beta), self.ws, seed)
            if not zt.zero:
                return zt
            if zt.mode == "probabilistic":
                last = zt
        return last

    def _frac_total_derivative_test(self, e: sp.Expr, seed: int) -> ZeroTest:
        top = self.max_order(e)
        calc = _FracCalc(self, [e], top + 1)
        f = calc.to(e)
        independent = None
        last = ZeroTest(True, "exact")
        for beta in range(self.n):
            top_b = max((self.info(x)[1] for x in self.jets_in(e) if self.info(x)[0] == beta),
                        default=-1)
            if top_b < 0:
                continue
            g = calc.euler(f, beta, top_b)
            if calc.is_zero(g):
                continue
            if independent is None:
                independent = logs_independent([L.args[0] for L in calc.logs])
            expr = calc.back(g)
            if independent:
                return ZeroTest(False, "exact", render(expr, self.ws))
            zt = zero_test(expr, self.ws, seed)
            if not zt.zero:
                return zt
            last = zt
        return last

    def is_total_derivative(self, e: sp.Expr) -> bool:
        return self.total_derivative_test(e).zero

    # -- normal forms of low degree --------------------------------------

    def linear_form(self, e: sp.Expr) -> tuple[sp.Expr, ...]:
        """Coefficients ``p_a`` with ``e == sum p_a u^a_x`` (degree-1 density)."""
        e = self.tidy(e)
        coeffs = tuple(canonical(sp.diff(e, self.jet(a, 1))) for a in range(self.n))
        rest = e - sum(c * self.jet(a, 1) for a, c in enumerate(coeffs))
        if not zero_test(rest, self.ws).zero:
            raise HamPerturbError(f"density is not linear in first jets: {e}")
        return coeffs

    def quadratic_form(self, e: sp.Expr) -> sp.ImmutableMatrix:
        """Symmetric ``d`` with ``e == sum d_ab u^a_x u^b_x`` modulo total derivatives.

        Terms ``g_a u^a_xx`` are integrated by parts to ``-dg_a/du^b u^b_x u^a_x``.
        """
        e = self.tidy(e)
        n = self.n
        x1 = [self.jet(a, 1) for a in range(n)]
        x2 = [self.jet(a, 2) for a in range(n)]
        g = [canonical(sp.diff(e, x2[a])) for a in range(n)]
        rest = e - sum(g[a] * x2[a] for a in range(n))
        d = [[None] * n for _ in range(n)]
        for a in range(n):
            for b in range(n):
                q = sp.diff(rest, x1[a], x1[b]) / 2
                q -= (sp.diff(g[a], self.base[b]) + sp.diff(g[b], self.base[a])) / 2
                d[a][b] = canonical(q)
        check = rest - sum(sp.diff(g[a], self.base[b]) * x1[a] * x1[b]
                           for a in range(n) for b in range(n))
        check -= sum(d[a][b] * x1[a] * x1[b] for a in range(n) for b in range(n))
        if not zero_test(check, self.ws).zero:
            raise HamPerturbError(f"density is not a degree-2 quadratic form: {e}")
        return sp.ImmutableMatrix(d)


@dataclass(frozen=True)
class LocalFunctional:
    """``integral density dx`` on the circle, modulo total x-derivatives."""

    density: sp.Expr
    space: JetSpace
    extended: bool = False

    def __post_init__(self):
        object.__setattr__(self, "density", sp.sympify(self.density))
        self.space.check_ring(self.density, self.extended)

    def _same(self, other: "LocalFunctional"):
        if self.space != other.space:
            raise HamPerturbError("functionals live on different charts; transform first")

    def __add__(self, other):
        self._same(other)
        return LocalFunctional(self.space.tidy(self.density + other.density), self.space,
                               self.extended or other.extended)

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return LocalFunctional(self.space.tidy(-self.density), self.space, self.extended)

    def scale(self, c) -> "LocalFunctional":
        return LocalFunctional(self.space.tidy(c * self.density), self.space, self.extended)

    def variational_derivative(self, beta: int) -> sp.Expr:
        return self.space.euler(self.density, beta)

    def zero_test(self) -> ZeroTest:
        return self.space.total_derivative_test(self.density)

    def is_zero(self) -> bool:
        return self.zero_test().zero

    def equals(self, other: "LocalFunctional") -> bool:
        self._same(other)
        return (self - other).is_zero()


def total_x_derivative(p: sp.Expr, space: JetSpace) -> sp.Expr:
    return space.D(p)


def variational_derivative(F: LocalFunctional, beta: int) -> sp.Expr:
    if not 0 <= beta < F.space.n:
        raise HamPerturbError(f"index {beta} out of range")
    return F.variational_derivative(beta)


def jet_degree_decompose(p: sp.Expr, space: JetSpace) -> dict[int, sp.Expr]:
    return space.grade(p)


def is_total_derivative(p: sp.Expr, space: JetSpace) -> bool:
    return space.is_total_derivative(p)


def poisson_bracket(F: LocalFunctional, G: LocalFunctional, metric: Metric) -> LocalFunctional:
    """``{F,G} = integral dF/du^a eta^{ab} d/dx (dG/du^b) dx``."""
    F._same(G)
    space = F.space
    if metric.n != space.n:
        raise HamPerturbError("metric size does not match the jet space")
    dF = [F.variational_derivative(a) for a in range(space.n)]
    dG = [G.variational_derivative(b) for b in range(space.n)]
    dxG = [space.D(g) if g != 0 else sp.S.Zero for g in dG]
    density = sp.S.Zero
    for a in range(space.n):
        if dF[a] == 0:
            continue
        for b in range(space.n):
            if metric.eta[a, b] != 0 and dxG[b] != 0:
                density += dF[a] * metric.eta[a, b] * dxG[b]
    return LocalFunctional(space.tidy(density), space, F.extended or G.extended)


def hamiltonian_flow(H: Mapping[int, LocalFunctional], metric: Metric,
                     order: int) -> list[dict[int, sp.Expr]]:
    """Right-hand sides ``eta^{ab} d/dx dH/du^b`` per component, as eps-series.

    ``H`` maps a power of eps to the functional at that order; powers above
    ``order`` are dropped.
    """
    if order not in (0, 1, 2):
        raise HamPerturbError("order must be 0, 1 or 2")
    keys = sorted(k for k in H if k <= order)
    if not keys:
        raise HamPerturbError("Hamiltonian series is empty up to the requested order")
    space = H[keys[0]].space
    out: list[dict[int, sp.Expr]] = [dict() for _ in range(space.n)]
    for k in keys:
        grads = [H[k].variational_derivative(b) for b in range(space.n)]
        for a in range(space.n):
            rhs = sum((metric.eta[a, b] * grads[b] for b in range(space.n)), sp.S.Zero)
            out[a][k] = space.D(rhs)
    return out


def transform_density(e: sp.Expr, src: JetSpace, dst: JetSpace,
                      mapping: Sequence[sp.Expr]) -> sp.Expr:
    """Rewrite a density on ``src`` in the coordinates of ``dst``.

    ``mapping[a]`` expresses the a-th base variable of ``src`` as a function
    of the base variables of ``dst``; jets follow by total differentiation.
    Radicals are simplified under the assumptions of ``dst``.
    """
    e = sp.sympify(e)
    subs = {}
    top = src.max_order(e)
    for a in range(src.n):
        cur = sp.sympify(mapping[a])
        subs[src.jet(a, 0)] = cur
        for order in range(1, top + 1):
            cur = dst.D(cur)
            subs[src.jet(a, order)] = cur
    out = e.xreplace(subs)
    out = simplify_radicals(out, dst.ws.positives)
    return dst.tidy(out)
