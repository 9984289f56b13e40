"""Exact expressions over the rationals extended by square-root and logarithm atoms.

Expressions are plain sympy trees restricted to the class

    rational constants, symbols, +, *, integer powers, sqrt(.), log(.)

Every sqrt/log occurrence is treated as an opaque *atom*.  The canonical form
is a gcd-reduced ratio of two polynomials in the symbols and atoms, with
``sqrt(b)**2`` rewritten to ``b`` and denominators rationalized, so that
``is_zero`` reduces to "numerator is the zero polynomial" whenever the atoms
are algebraically independent (checked).  Otherwise the zero test falls back
to evaluation at seeded random points and says so.
"""

from __future__ import annotations

import contextlib
import contextvars
import functools
import os
import random
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import mpmath
import sympy as sp

from .errors import (
    HamPerturbError,
    InternalConsistencyError,
    NotIntegrableError,
    UnsupportedExpressionError,
    ZeroTestError,
)

__all__ = [
    "Workspace",
    "sampling_seed",
    "ZeroTest",
    "jet_name",
    "split_jet_name",
    "check_class",
    "canonical",
    "render",
    "diff",
    "zero_test",
    "is_zero",
    "logs_independent",
    "substitute",
    "simplify_radicals",
    "antiderivative",
    "identity_equations",
    "solve_identities",
]

SAMPLE_BOX_ENV = "HAMPERTURB_SAMPLE_BOX"
DEFAULT_BOX = (Fraction(1, 2), Fraction(5, 2))
ZERO_TOL = 1e-10
DEFAULT_SAMPLES = 8


# --------------------------------------------------------------------------
# jet naming
# --------------------------------------------------------------------------

def jet_name(base: str, order: int) -> str:
    """``r, 1 -> r_x``; ``r, 2 -> r_xx``; ``r, 3 -> r_3``."""
    if order == 0:
        return base
    if order <= 2:
        return f"{base}_{'x' * order}"
    return f"{base}_{order}"


_JET_RE = re.compile(r"^(?P<base>.+?)_(?P<suffix>x+|\d+)$")


def split_jet_name(name: str) -> tuple[str, int] | None:
    m = _JET_RE.match(name)
    if not m:
        return None
    suffix = m.group("suffix")
    order = len(suffix) if suffix[0] == "x" else int(suffix)
    if order < 1:
        return None
    return m.group("base"), order


# --------------------------------------------------------------------------
# workspace
# --------------------------------------------------------------------------

def _default_box() -> tuple[Fraction, Fraction]:
    raw = os.environ.get(SAMPLE_BOX_ENV)
    if not raw:
        return DEFAULT_BOX
    lo, hi = (Fraction(part.strip()) for part in raw.split(","))
    if not lo < hi:
        raise HamPerturbError(f"{SAMPLE_BOX_ENV}: empty box {raw!r}")
    return lo, hi


class Workspace:
    """Ordered variable declarations, positivity assumptions and a sample box.

    ``names`` are the base (jet order 0) variables; jet variables such as
    ``r_x`` or ``v_3`` are implied for every base name.  ``assumptions`` are
    strings ``"lhs > rhs"`` (or already-built sympy expressions meaning
    ``expr > 0``).  Instances are immutable.
    """

    def __init__(self, names: Sequence[str], assumptions: Iterable = (),
                 box: tuple | None = None, extra: Sequence[str] = ()):
        names = tuple(names)
        if len(set(names)) != len(names):
            raise HamPerturbError(f"duplicate variable names in {names}")
        for name in names:
            if not re.fullmatch(r"[A-Za-z][A-Za-z0-9]*", name):
                raise HamPerturbError(f"invalid variable name {name!r}")
        self.names = names
        self.symbols = tuple(sp.Symbol(n) for n in names)
        self.extra = tuple(extra)
        self._index = {s: i for i, s in enumerate(self.symbols)}
        self.box = tuple(Fraction(b) for b in box) if box is not None else _default_box()
        positives = []
        for a in assumptions:
            if isinstance(a, str):
                from .parsing import parse_assumption
                positives.append(parse_assumption(a, self))
            else:
                positives.append(sp.sympify(a))
        self.positives = tuple(positives)

    def __repr__(self):
        return f"Workspace({list(self.names)!r}, positives={[str(p) for p in self.positives]})"

    @property
    def n(self) -> int:
        return len(self.names)

    def with_assumptions(self, assumptions: Iterable) -> "Workspace":
        ws = Workspace(self.names, (), self.box, self.extra)
        ws.positives = self.positives + Workspace(self.names, assumptions, self.box, self.extra).positives
        return ws

    def jet(self, index: int, order: int) -> sp.Symbol:
        return sp.Symbol(jet_name(self.names[index], order))

    def jet_info(self, sym: sp.Symbol) -> tuple[int, int] | None:
        """(base index, order) for a declared base or jet symbol, else None."""
        if sym in self._index:
            return self._index[sym], 0
        parts = split_jet_name(sym.name)
        if parts is None:
            return None
        base, order = parts
        idx = self._index.get(sp.Symbol(base))
        if idx is None:
            return None
        if sym.name != jet_name(base, order):
            return None
        return idx, order

    def resolve(self, name: str) -> sp.Symbol | None:
        sym = sp.Symbol(name)
        if sym in self._index or name in self.extra:
            return sym
        parts = split_jet_name(name)
        if parts is not None and sp.Symbol(parts[0]) in self._index:
            return sp.Symbol(jet_name(*parts))
        return None

    def knows(self, sym: sp.Symbol) -> bool:
        return self.jet_info(sym) is not None or sym.name in self.extra

    def sort_key(self, sym: sp.Symbol):
        info = self.jet_info(sym)
        if info is None:
            return (1, 0, 0, sym.name)
        idx, order = info
        return (0, order, idx, "")

    def sample_point(self, symbols: Iterable[sp.Symbol], rng: random.Random,
                     tries: int = 2000) -> dict:
        """Random rational point in the box satisfying every positivity assumption."""
        symbols = sorted(set(symbols) | set().union(*(p.free_symbols for p in self.positives)),
                         key=self.sort_key)
        lo, hi = self.box
        for _ in range(tries):
            point = {s: sp.Rational(_rand_fraction(rng, lo, hi)) for s in symbols}
            if all(_positive_at(p, point) for p in self.positives):
                return point
        raise ZeroTestError("could not sample a point satisfying the declared assumptions")


def _rand_fraction(rng: random.Random, lo: Fraction, hi: Fraction) -> Fraction:
    den = rng.randint(7, 97)
    return lo + (hi - lo) * Fraction(rng.randint(1, den - 1), den)


def _positive_at(expr: sp.Expr, point: Mapping) -> bool:
    try:
        val = _eval(expr, point)
    except (ZeroDivisionError, ValueError):
        return False
    return val > 0


# --------------------------------------------------------------------------
# function-class check
# --------------------------------------------------------------------------

def check_class(e: sp.Expr) -> sp.Expr:
    """Raise UnsupportedExpressionError unless ``e`` is in the supported class."""
    for node in sp.preorder_traversal(e):
        if node.is_Symbol or node.is_Rational:
            continue
        if node.is_Add or node.is_Mul:
            continue
        if node.is_Pow:
            q = node.exp
            if q.is_Integer or (q.is_Rational and q.q == 2):
                continue
            raise UnsupportedExpressionError(f"exponent {q} not supported in {e}")
        if isinstance(node, sp.log):
            continue
        raise UnsupportedExpressionError(f"{type(node).__name__} node {node} not supported")
    return e


# --------------------------------------------------------------------------
# canonical form
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _Atom:
    placeholder: sp.Symbol
    kind: str  # "sqrt" | "log"
    arg: sp.Expr  # canonical argument in the original variables
    walked: sp.Expr | None = None  # radicand with inner atoms replaced (sqrt only)


@dataclass
class _Table:
    atoms: dict = field(default_factory=dict)  # (kind, arg) -> _Atom
    squares: dict = field(default_factory=dict)  # radicand symbol -> placeholder
    nested: bool = False

    def placeholder(self, kind, arg, walked=None):
        key = (kind, arg)
        if key not in self.atoms:
            ph = sp.Dummy(f"{kind}{len(self.atoms)}")
            self.atoms[key] = _Atom(ph, kind, arg, walked)
        return self.atoms[key].placeholder


def _walk(e: sp.Expr, table: _Table, depth: int = 0) -> sp.Expr:
    if e.is_Symbol:
        return e
    if e.is_Number:
        if not e.is_Rational:
            raise UnsupportedExpressionError(f"non-rational constant {e}")
        return e
    if e.is_Add:
        return sp.Add(*[_walk(a, table, depth) for a in e.args])
    if e.is_Mul:
        return sp.Mul(*[_walk(a, table, depth) for a in e.args])
    if e.is_Pow:
        b, q = e.args
        if q.is_Integer:
            return _walk(b, table, depth) ** q
        if q.is_Rational and q.q == 2:
            arg = canonical(b)
            if depth:
                table.nested = True
            if arg.is_Symbol:
                ph = table.placeholder("sqrt", arg)
                table.squares[arg] = ph
            else:
                walked = _walk(arg, table, depth + 1)
                ph = table.placeholder("sqrt", arg, walked)
            return ph ** q.p
        raise UnsupportedExpressionError(f"exponent {q} not supported")
    if isinstance(e, sp.log):
        arg = canonical(e.args[0])
        if depth:
            table.nested = True
        if arg.has(sp.log):
            table.nested = True
        return table.placeholder("log", arg)
    raise UnsupportedExpressionError(f"{type(e).__name__} node {e} not supported")


def _split_in(poly_expr: sp.Expr, t: sp.Symbol, b: sp.Expr) -> tuple[sp.Expr, sp.Expr]:
    """Write ``poly_expr`` (polynomial in t) as P0 + t*P1 using t**2 = b."""
    p = sp.Poly(poly_expr, t)
    p0 = sp.S.Zero
    p1 = sp.S.Zero
    for (k,), c in p.terms():
        term = c * b ** (k // 2)
        if k % 2:
            p1 += term
        else:
            p0 += term
    return p0, p1


def _gen_key(sym):
    name = getattr(sym, "name", str(sym))
    parts = split_jet_name(name)
    order = parts[1] if parts else 0
    return (isinstance(sym, sp.Dummy), order, name, getattr(sym, "dummy_index", 0))


@dataclass(frozen=True)
class _Reduced:
    num: sp.Expr
    den: sp.Expr
    atoms: tuple  # tuple[_Atom, ...]
    squares: tuple  # ((radicand symbol, placeholder), ...)
    nested: bool

    def back(self) -> dict:
        subs = {}
        for atom in self.atoms:
            if atom.kind == "sqrt":
                subs[atom.placeholder] = sp.sqrt(atom.arg)
            else:
                subs[atom.placeholder] = sp.log(atom.arg)
        return subs


@functools.lru_cache(maxsize=8192)
def _reduce(e: sp.Expr) -> _Reduced:
    table = _Table()
    walked = _walk(sp.sympify(e), table)
    sq = {r: ph**2 for r, ph in table.squares.items()}
    if sq:
        walked = walked.xreplace(sq)
    nonsym = [a for a in table.atoms.values() if a.kind == "sqrt" and a.walked is not None]
    nonsym = [(a.placeholder, sp.together(a.walked.xreplace(sq))) for a in nonsym]

    num, den = sp.fraction(sp.together(walked))
    num, den = sp.expand(num), sp.expand(den)
    for _ in range(8):
        changed = False
        for t, b in nonsym:
            if not (num.has(t) or den.has(t)):
                continue
            n0, n1 = _split_in(num, t, b)
            d0, d1 = _split_in(den, t, b)
            if d1 != 0:
                # rationalize the denominator with the conjugate
                n0, n1 = n0 * d0 - n1 * d1 * b, n1 * d0 - n0 * d1
                d0, d1 = d0**2 - d1**2 * b, sp.S.Zero
            num, den = sp.fraction(sp.together((n0 + t * n1) / d0))
            num, den = sp.expand(num), sp.expand(den)
            changed = True
        if not changed or all(_degree(num, t) <= 1 and not den.has(t) for t, _ in nonsym):
            break
    else:
        raise InternalConsistencyError(f"sqrt reduction did not converge for {e}")

    if num == 0:
        return _Reduced(sp.S.Zero, sp.S.One, tuple(table.atoms.values()),
                        tuple(table.squares.items()), table.nested)
    q = sp.cancel(num / den)
    num, den = sp.fraction(q)
    num, den = sp.expand(num), sp.expand(den)
    gens = sorted((num.free_symbols | den.free_symbols), key=_gen_key)
    if gens:
        pn = sp.Poly(num, *gens, domain="QQ")
        pd = sp.Poly(den, *gens, domain="QQ")
        # denominator: primitive integer polynomial with positive leading coefficient
        lc = pd.LC()
        monic = pd.quo_ground(lc)
        m = sp.ilcm(*[sp.Rational(c).q for c in monic.coeffs()]) if monic.length() > 1 else 1
        num = sp.expand(pn.as_expr() * (sp.Integer(m) / lc))
        den = sp.expand(monic.as_expr() * m)
    else:
        num, den = num / den, sp.S.One
    return _Reduced(num, den, tuple(table.atoms.values()), tuple(table.squares.items()),
                    table.nested)


def _degree(expr, t):
    return sp.Poly(expr, t).degree() if expr.has(t) else 0


@functools.lru_cache(maxsize=8192)
def canonical(e) -> sp.Expr:
    """Canonical representative: reduced ``num/den`` with atoms substituted back."""
    e = sp.sympify(e)
    if e.is_Rational or e.is_Symbol:
        return e
    red = _reduce(e)
    if red.num == 0:
        return sp.S.Zero
    back = red.back()
    num = red.num.xreplace(back)
    den = red.den.xreplace(back)
    return num / den if den != 1 else num


def canonical_parts(e) -> tuple[sp.Expr, sp.Expr]:
    """(numerator, denominator) of the canonical form, atoms substituted back."""
    red = _reduce(sp.sympify(e))
    back = red.back()
    return red.num.xreplace(back), red.den.xreplace(back)


def free_atoms(e) -> list[sp.Expr]:
    """The sqrt/log atoms occurring in the canonical form of ``e``."""
    red = _reduce(sp.sympify(e))
    out = []
    present = red.num.free_symbols | red.den.free_symbols
    for atom in red.atoms:
        if atom.placeholder in present:
            out.append(sp.sqrt(atom.arg) if atom.kind == "sqrt" else sp.log(atom.arg))
    return out


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

def _fmt_rational(c: sp.Rational) -> str:
    return str(c.p) if c.q == 1 else f"{c.p}/{c.q}"


def _render_poly(expr: sp.Expr, red: _Reduced, ws: Workspace | None, atom_strs: dict) -> str:
    if expr == 0:
        return "0"
    squares = dict(red.squares)  # radicand symbol -> placeholder
    sq_ph = {ph: r for r, ph in squares.items()}
    gens = sorted(expr.free_symbols, key=_gen_key)
    poly = sp.Poly(expr, *gens, domain="QQ") if gens else None
    if poly is None:
        return _fmt_rational(sp.Rational(expr))

    def sym_key(s):
        if ws is not None:
            return ws.sort_key(s)
        return (0, *_gen_key(s))

    terms = []
    for monom, coeff in poly.terms():
        powers: dict = {}
        for g, k in zip(gens, monom):
            if not k:
                continue
            if g in sq_ph:
                base = sq_ph[g]
                if k // 2:
                    powers[base] = powers.get(base, 0) + k // 2
                if k % 2:
                    powers[g] = powers.get(g, 0) + 1
            else:
                powers[g] = powers.get(g, 0) + k
        terms.append((powers, sp.Rational(coeff)))

    def fkey(g):
        if g in atom_strs:
            return (2, atom_strs[g])
        return (1, sym_key(g))

    order = sorted({g for powers, _ in terms for g in powers}, key=fkey)
    rank = {g: i for i, g in enumerate(order)}

    def term_key(item):
        powers, _ = item
        total = sum(powers.values())
        vec = [0] * len(order)
        for g, k in powers.items():
            vec[rank[g]] = k
        return (-total, [-x for x in vec])

    terms.sort(key=term_key)
    out = []
    for i, (powers, coeff) in enumerate(terms):
        factors = []
        for g in sorted(powers, key=lambda g: rank[g]):
            name = atom_strs.get(g, getattr(g, "name", str(g)))
            k = powers[g]
            factors.append(name if k == 1 else f"{name}^{k}")
        mono = "*".join(factors)
        mag = abs(coeff)
        if mono:
            body = mono if mag == 1 else f"{_fmt_rational(mag)}*{mono}"
        else:
            body = _fmt_rational(mag)
        if i == 0:
            out.append(("-" if coeff < 0 else "") + body)
        else:
            out.append((" - " if coeff < 0 else " + ") + body)
    return "".join(out)


def render(e, ws: Workspace | None = None) -> str:
    """Deterministic text rendering of the canonical form (parseable back)."""
    red = _reduce(sp.sympify(e))
    atom_strs = {}
    for atom in red.atoms:
        atom_strs[atom.placeholder] = f"{atom.kind}({render(atom.arg, ws)})"
    num = _render_poly(red.num, red, ws, atom_strs)
    if red.den == 1:
        return num
    den = _render_poly(red.den, red, ws, atom_strs)
    return f"({num})/({den})"


# --------------------------------------------------------------------------
# calculus
# --------------------------------------------------------------------------

def diff(e, x: sp.Symbol) -> sp.Expr:
    """Partial derivative, canonicalized.  Chain rule through sqrt/log is sympy's."""
    return canonical(sp.diff(sp.sympify(e), x))


# --------------------------------------------------------------------------
# zero testing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroTest:
    """Outcome of a zero test with its provenance."""

    zero: bool
    mode: str  # "exact" | "probabilistic"
    residual: str = "0"
    seed: int | None = None
    samples: int = 0

    def __bool__(self):
        return self.zero

    def to_dict(self) -> dict:
        d = {"zero": self.zero, "mode": self.mode, "residual": self.residual}
        if self.mode == "probabilistic":
            d["seed"] = self.seed
            d["samples"] = self.samples
        return d


def _odd_factor_set(expr: sp.Expr) -> frozenset | None:
    num, den = sp.fraction(sp.together(expr))
    out = set()
    for part in (num, den):
        c, factors = sp.factor_list(sp.expand(part))
        c = sp.Rational(c)
        if c < 0:
            out ^= {"-1"}
        for n in (c.p, c.q):
            for prime, mult in sp.factorint(abs(n)).items():
                if mult % 2:
                    out ^= {prime}
        for f, mult in factors:
            if mult % 2:
                out ^= {sp.srepr(sp.expand(f))}
    return frozenset(out)


def _gf2_rank(vectors: list[frozenset]) -> int:
    basis: list[set] = []
    pivots: list = []
    for v in vectors:
        v = set(v)
        for b, p in zip(basis, pivots):
            if p in v:
                v ^= b
        if v:
            p = min(v, key=str)
            basis.append(v)
            pivots.append(p)
    return len(basis)


def _atoms_independent(red: _Reduced) -> bool:
    present = red.num.free_symbols | red.den.free_symbols
    atoms = [a for a in red.atoms if a.placeholder in present]
    sqrt_args = [a.arg for a in red.atoms if a.kind == "sqrt"]
    if red.nested:
        return False
    vectors = []
    for arg in sqrt_args:
        v = _odd_factor_set(arg)
        if not v:
            return False
        vectors.append(v)
    if _gf2_rank(vectors) != len(vectors):
        return False
    return logs_independent([a.arg for a in atoms if a.kind == "log"])


def logs_independent(logs: Sequence[sp.Expr]) -> bool:
    """Whether log atoms with these (radical-free) arguments are algebraically
    independent over the rational functions: every argument is non-constant
    and the arguments are multiplicatively independent modulo constants."""
    logs = list(logs)
    if not logs:
        return True
    if any(not arg.free_symbols for arg in logs):
        return False
    if len(logs) == 1:
        return True
    if any(arg.has(sp.Pow) and any(p.exp.q == 2 for p in arg.atoms(sp.Pow) if p.exp.is_Rational)
           for arg in logs):
        return False
    # multiplicative independence of the log arguments modulo constants
    index: dict = {}
    rows = []
    for arg in logs:
        num, den = sp.fraction(sp.together(arg))
        row: dict = {}
        for part, sign in ((num, 1), (den, -1)):
            _, factors = sp.factor_list(sp.expand(part))
            for f, mult in factors:
                key = sp.srepr(sp.expand(f))
                index.setdefault(key, len(index))
                row[index[key]] = row.get(index[key], 0) + sign * mult
        rows.append(row)
    mat = sp.Matrix([[row.get(j, 0) for j in range(len(index))] for row in rows])
    return mat.rank() == len(logs)


def _eval(expr: sp.Expr, point: Mapping, dps: int = 40):
    """High-precision real evaluation.  Raises ValueError on a branch cut."""
    with mpmath.workdps(dps):
        return _ev(expr, point)


def _ev(e, point):
    if e.is_Symbol:
        val = point[e]
        return mpmath.mpf(int(val.p)) / int(val.q)
    if e.is_Rational:
        return mpmath.mpf(int(e.p)) / int(e.q)
    if e.is_Add:
        return mpmath.fsum(_ev(a, point) for a in e.args)
    if e.is_Mul:
        out = mpmath.mpf(1)
        for a in e.args:
            out *= _ev(a, point)
        return out
    if e.is_Pow:
        b = _ev(e.base, point)
        q = e.exp
        if q.is_Integer:
            if b == 0 and q < 0:
                raise ZeroDivisionError
            return b ** int(q)
        if b <= 0:
            raise ValueError("sqrt of non-positive value")
        return mpmath.sqrt(b) ** int(q.p)
    if isinstance(e, sp.log):
        a = _ev(e.args[0], point)
        if a <= 0:
            raise ValueError("log of non-positive value")
        return mpmath.log(a)
    raise UnsupportedExpressionError(f"cannot evaluate {e}")


def _magnitude(expr, point):
    return mpmath.fsum(abs(_ev(t, point)) for t in sp.Add.make_args(expr))


def _polynomial(e: sp.Expr) -> bool:
    for node in sp.preorder_traversal(e):
        if node.is_Pow and not (node.exp.is_Integer and node.exp >= 0):
            return False
        if isinstance(node, sp.log) or node.is_Float:
            return False
    return True


_SEED = contextvars.ContextVar("hamperturb_seed", default=0)


@contextlib.contextmanager
def sampling_seed(seed: int):
    """Default seed for every probabilistic zero test run inside the block."""
    token = _SEED.set(int(seed))
    try:
        yield
    finally:
        _SEED.reset(token)


def zero_test(e, ws: Workspace | None = None, seed: int | None = None,
              samples: int = DEFAULT_SAMPLES, max_tries: int = 200) -> ZeroTest:
    """Decide ``e == 0`` identically; exact when the atoms allow it."""
    e = sp.sympify(e)
    if seed is None:
        seed = _SEED.get()
    if _polynomial(e):
        ex = sp.expand(e)
        return ZeroTest(True, "exact") if ex == 0 else ZeroTest(False, "exact", render(ex, ws))
    red = _reduce(e)
    if red.num == 0:
        return ZeroTest(True, "exact")
    if _atoms_independent(red):
        return ZeroTest(False, "exact", render(e, ws))
    ws = ws or Workspace(())
    back = red.back()
    num = red.num.xreplace(back)
    den = red.den.xreplace(back)
    rng = random.Random(seed)
    syms = e.free_symbols
    good = 0
    tries = 0
    while good < samples:
        tries += 1
        if tries > max_tries:
            raise ZeroTestError(f"no admissible sample points for {e}")
        point = ws.sample_point(syms, rng)
        try:
            with mpmath.workdps(40):
                d = _ev(den, point)
                if abs(d) < mpmath.mpf(10) ** -30:
                    continue
                val = _ev(num, point)
                scale = max(mpmath.mpf(1), _magnitude(num, point))
        except (ValueError, ZeroDivisionError):
            continue
        good += 1
        if abs(val) > ZERO_TOL * scale:
            return ZeroTest(False, "probabilistic", render(e, ws), seed, good)
    return ZeroTest(True, "probabilistic", "0", seed, samples)


def is_zero(e, ws: Workspace | None = None, seed: int | None = None) -> bool:
    return zero_test(e, ws, seed).zero


# --------------------------------------------------------------------------
# substitution
# --------------------------------------------------------------------------

def _sign_from_assumptions(f: sp.Expr, positives: Sequence[sp.Expr]) -> int:
    """+1/-1 if ``f`` is a positive-constant multiple of (minus) a declared positive."""
    f = sp.expand(f)
    for p in positives:
        p = sp.expand(p)
        ratio = sp.cancel(f / p)
        if ratio.is_Rational and ratio != 0:
            return 1 if ratio > 0 else -1
    return 0


def simplify_radicals(e, positives: Sequence[sp.Expr] = ()) -> sp.Expr:
    """Pull square factors out of sqrt atoms when their sign is declared.

    ``sqrt(f**2 * g) -> s*f*sqrt(g)`` where ``s`` is the sign of ``f`` implied
    by ``positives`` (each meaning ``expr > 0``).  Factors of undetermined sign
    stay under the root.
    """
    e = sp.sympify(e)
    pos = tuple(positives)

    def fix(node):
        if node.is_Pow and node.exp.is_Rational and node.exp.q == 2:
            base = sp.factor(canonical(node.base))
            coeff, factors = sp.factor_list(sp.expand(sp.fraction(sp.together(base))[0]))
            dcoeff, dfactors = sp.factor_list(sp.expand(sp.fraction(sp.together(base))[1]))
            outside = sp.S.One
            inside = sp.Rational(coeff, 1) / sp.Rational(dcoeff, 1)
            for fs, sign in ((factors, 1), (dfactors, -1)):
                for f, mult in fs:
                    pulled = mult // 2
                    if pulled:
                        s = 1 if (f.is_Symbol and any(p == f for p in pos)) else _sign_from_assumptions(f, pos)
                        if s == 0:
                            inside *= f ** (sign * mult)
                            continue
                        outside *= (s * f) ** (sign * pulled)
                        inside *= f ** (sign * (mult % 2))
                    else:
                        inside *= f ** (sign * mult)
            if outside == 1:
                return node
            return (outside * sp.sqrt(inside)) ** node.exp.p
        return node

    def walk(node):
        if node.is_Atom:
            return node
        new = node.func(*[walk(a) for a in node.args])
        return fix(new)

    return walk(e)


def substitute(e, bindings: Mapping, ws: Workspace | None = None) -> sp.Expr:
    """Simultaneous substitution, radical simplification under ``ws`` assumptions,
    canonicalization.  Bindings may only introduce variables ``ws`` knows."""
    bindings = {(sp.Symbol(k) if isinstance(k, str) else k): sp.sympify(v)
                for k, v in bindings.items()}
    if ws is not None:
        for k, v in bindings.items():
            bad = [s for s in v.free_symbols if not ws.knows(s)]
            if bad:
                raise HamPerturbError(f"binding {k} -> {v} introduces undeclared {bad}")
    out = sp.sympify(e).xreplace(bindings)
    out = simplify_radicals(out, ws.positives if ws is not None else ())
    return canonical(out)


# --------------------------------------------------------------------------
# antiderivatives
# --------------------------------------------------------------------------

def _integrate_term(term: sp.Expr, x: sp.Symbol) -> sp.Expr:
    coeff, rest = term.as_independent(x, as_Add=False)
    if rest == 1:
        return term * x
    base, q = rest.as_base_exp()
    if not q.is_Rational or q.free_symbols:
        raise NotIntegrableError(f"cannot integrate {term} in {x}")
    poly = sp.Poly(base, x) if base.is_polynomial(x) else None
    if poly is None or poly.degree() != 1:
        raise NotIntegrableError(f"cannot integrate {term} in {x}")
    a, b = poly.all_coeffs()
    if base.has(sp.log) or a.has(x) or b.has(x):
        raise NotIntegrableError(f"cannot integrate {term} in {x}")
    if q == -1:
        if (a.is_Number and a < 0):
            return coeff * sp.log(sp.expand(-base)) / a
        return coeff * sp.log(base) / a
    return coeff * base ** (q + 1) / (a * (q + 1))


def antiderivative(e, x: sp.Symbol, ws: Workspace | None = None) -> sp.Expr:
    """F with dF/dx == e exactly, for sums of c * (a*x + b)**q terms.

    Rational functions of ``x`` are split into partial fractions first; only
    linear denominators are supported.  Anything else raises
    NotIntegrableError rather than returning a wrong answer.
    """
    e = canonical(e)
    if not e.has(x):
        return canonical(e * x)
    rational_in_x = not any(
        (p.exp.is_Rational and not p.exp.is_Integer and p.has(x)) for p in e.atoms(sp.Pow)
    ) and not any(lg.has(x) for lg in e.atoms(sp.log))
    if rational_in_x:
        masks = {}
        masked = e
        for atom in list(e.atoms(sp.Pow)) + list(e.atoms(sp.log)):
            if isinstance(atom, sp.log) or (atom.exp.is_Rational and not atom.exp.is_Integer):
                d = sp.Dummy("k")
                masks[d] = atom
        if masks:
            masked = e.xreplace({v: k for k, v in masks.items()})
        try:
            split = sp.apart(sp.together(masked), x)
        except (sp.PolynomialError, NotImplementedError) as exc:
            raise NotIntegrableError(f"cannot split {e} in {x}: {exc}") from exc
        split = split.xreplace(masks)
    else:
        split = sp.expand(e)
    pieces = [_integrate_term(t, x) for t in sp.Add.make_args(sp.expand(split))]
    result = canonical(sp.Add(*pieces))
    if not zero_test(sp.diff(result, x) - e, ws).zero:
        raise InternalConsistencyError(f"antiderivative check failed for {e}")
    return result


# --------------------------------------------------------------------------
# exact linear identities
# --------------------------------------------------------------------------

def identity_equations(exprs: Iterable, unknowns: Sequence[sp.Symbol]) -> list[sp.Expr]:
    """Linear equations in ``unknowns`` equivalent to ``expr == 0`` identically.

    Each expression must be affine in the unknowns.  Numerators are expanded
    over independent monomials in the remaining symbols and atoms; every
    coefficient must vanish.  When the atoms are algebraically dependent the
    equations are sufficient but may not be necessary (solutions are always
    verified by callers).
    """
    unknowns = list(unknowns)
    uset = set(unknowns)
    eqs: list[sp.Expr] = []
    for expr in exprs:
        table = _Table()
        walked = _walk(sp.sympify(expr), table)
        sq = {r: ph**2 for r, ph in table.squares.items()}
        walked = walked.xreplace(sq) if sq else walked
        num, _ = sp.fraction(sp.together(walked))
        num = sp.expand(num)
        for atom in table.atoms.values():
            if atom.kind == "sqrt" and atom.walked is not None:
                t = atom.placeholder
                if num.has(t):
                    b = sp.together(atom.walked.xreplace(sq))
                    n0, n1 = _split_in(num, t, b)
                    num = sp.expand(sp.fraction(sp.together(n0 + t * n1))[0])
        gens = sorted(num.free_symbols - uset, key=_gen_key)
        if not gens:
            eqs.append(num)
            continue
        poly = sp.Poly(num, *gens)
        eqs.extend(c for c in poly.coeffs() if c != 0)
    return [q for q in eqs if q != 0]


def solve_identities(exprs: Iterable, unknowns: Sequence[sp.Symbol]):
    """Particular solution (free parameters set to 0) or None if inconsistent."""
    unknowns = list(unknowns)
    eqs = identity_equations(exprs, unknowns)
    if not eqs:
        return {u: sp.S.Zero for u in unknowns}
    mat, rhs = sp.linear_eq_to_matrix(eqs, unknowns)
    try:
        sol, params = mat.gauss_jordan_solve(rhs)
    except ValueError:
        return None
    sol = sol.xreplace({p: 0 for p in params})
    return {u: sp.nsimplify(sol[i]) for i, u in enumerate(unknowns)}
