"""Recursive-descent parser for the expression grammar.

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("+" | "-") unary | power
    power   := primary (("^" | "**") unary)?
    primary := NUMBER | IDENT | FUNC "(" expr ")" | "(" expr ")"
    FUNC    := "sqrt" | "log"
    NUMBER  := DIGITS ("." DIGITS)?

Exponents must evaluate to integer constants (``sqrt`` is the only way to
write a half power).  Identifiers must be declared in the workspace: base
variables, their jets (``r_x``, ``r_xx``, ``r_3``) or extra parameters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

import sympy as sp

from .errors import ParseError
from .kernel import Workspace, canonical, check_class

__all__ = ["parse_expr", "parse_raw", "parse_assumption", "tokenize"]

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d+)?)|(?P<ident>[A-Za-z][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)
_FUNCS = {"sqrt": sp.sqrt, "log": sp.log}


@dataclass(frozen=True)
class Token:
    kind: str  # "num" | "ident" | "op" | "end"
    text: str
    pos: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(source, pos)
        if not m or m.end() == pos:
            col = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ParseError(f"unexpected character {source[col]!r}", source, col)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(Token(kind, m.group(kind), start))
        pos = m.end()
    tokens.append(Token("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, ws: Workspace):
        self.source = source
        self.ws = ws
        self.tokens = tokenize(source)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, message, tok=None):
        tok = tok or self.tok
        raise ParseError(message, self.source, tok.pos)

    def eat(self, text=None, kind=None) -> Token:
        tok = self.tok
        if (text is not None and tok.text != text) or (kind is not None and tok.kind != kind):
            want = repr(text) if text is not None else kind
            got = "end of input" if tok.kind == "end" else repr(tok.text)
            self.error(f"expected {want}, got {got}")
        self.i += 1
        return tok

    def parse(self) -> sp.Expr:
        if self.tok.kind == "end":
            self.error("empty expression")
        e = self.expr()
        if self.tok.kind != "end":
            self.error(f"unexpected {self.tok.text!r}")
        return e

    def expr(self):
        e = self.term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            op = self.eat().text
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self):
        e = self.unary()
        while self.tok.text in ("*", "/") and self.tok.kind == "op":
            op_tok = self.eat()
            rhs = self.unary()
            if op_tok.text == "/":
                if rhs == 0:
                    self.error("division by zero", op_tok)
                e = e / rhs
            else:
                e = e * rhs
        return e

    def unary(self):
        if self.tok.kind == "op" and self.tok.text in ("+", "-"):
            op = self.eat().text
            e = self.unary()
            return -e if op == "-" else e
        return self.power()

    def power(self):
        base = self.primary()
        if self.tok.kind == "op" and self.tok.text in ("^", "**"):
            self.eat()
            exp_tok = self.tok
            exponent = self.unary()
            if not exponent.is_Integer:
                self.error(f"non-integer exponent {exponent}", exp_tok)
            if base == 0 and exponent < 0:
                self.error("division by zero", exp_tok)
            return base ** exponent
        return base

    def primary(self):
        tok = self.tok
        if tok.kind == "num":
            self.eat()
            return sp.Rational(Fraction(tok.text))
        if tok.kind == "ident":
            self.eat()
            if tok.text in _FUNCS:
                self.eat("(")
                arg = self.expr()
                self.eat(")")
                return _FUNCS[tok.text](arg)
            sym = self.ws.resolve(tok.text)
            if sym is None:
                self.error(f"unknown identifier {tok.text!r}", tok)
            return sym
        if tok.text == "(":
            self.eat("(")
            e = self.expr()
            self.eat(")")
            return e
        if tok.kind == "end":
            self.error("unexpected end of input")
        self.error(f"unexpected {tok.text!r}")


def parse_raw(source: str, ws: Workspace) -> sp.Expr:
    """Parse without canonicalizing (sympy's automatic evaluation still applies)."""
    e = _Parser(source, ws).parse()
    return check_class(e)


def parse_expr(source: str, ws: Workspace) -> sp.Expr:
    """Parse ``source`` over the variables declared in ``ws`` and canonicalize."""
    return canonical(parse_raw(source, ws))


def parse_assumption(source: str, ws: Workspace) -> sp.Expr:
    """``"a > b"`` or ``"b < a"`` -> the expression ``a - b`` (declared positive)."""
    for op in (">", "<"):
        if op in source:
            lhs, rhs = source.split(op, 1)
            if ">" in rhs or "<" in rhs:
                break
            a = parse_expr(lhs.strip(), ws)
            b = parse_expr(rhs.strip(), ws)
            return canonical(a - b if op == ">" else b - a)
    raise ParseError(f"assumption must have the form 'lhs > rhs': {source!r}")
