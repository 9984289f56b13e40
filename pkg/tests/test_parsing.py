import pytest
import sympy as sp

from hamperturb.errors import ParseError
from hamperturb.kernel import Workspace, canonical, render
from hamperturb.parsing import parse_assumption, parse_expr, tokenize

r, v = sp.symbols("r v")


def test_water_wave_density(ww_ws):
    e = parse_expr("-(1/2)*r*v^2 - (1/2)*r^2", ww_ws)
    assert canonical(e - (-r * v ** 2 / 2 - r ** 2 / 2)) == 0


def test_cancellation_and_sqrt_square(ww_ws):
    assert parse_expr("r - r", ww_ws) == 0
    assert parse_expr("sqrt(r)^2", ww_ws) == r


def test_jet_identifiers(ww_ws):
    e = parse_expr("(1/6)*r^3*v_x^2 + r_xx + v_3", ww_ws)
    names = sorted(str(s) for s in e.free_symbols)
    assert names == ["r", "r_xx", "v_3", "v_x"]


def test_power_operator_spellings(ww_ws):
    assert parse_expr("r**3", ww_ws) == parse_expr("r^3", ww_ws)
    assert parse_expr("r^(-2)", ww_ws) == 1 / r ** 2
    assert parse_expr("-r^2", ww_ws) == -r ** 2


def test_decimal_literal_is_exact(ww_ws):
    assert parse_expr("0.25*r", ww_ws) == r / 4


@pytest.mark.parametrize("text,column", [("r + * v", 4), ("r $ v", 2), ("(r + v", 6)])
def test_syntax_errors_report_position(ww_ws, text, column):
    with pytest.raises(ParseError) as info:
        parse_expr(text, ww_ws)
    assert info.value.position == column


def test_unknown_identifier(ww_ws):
    with pytest.raises(ParseError, match="w"):
        parse_expr("r + w", ww_ws)


def test_non_integer_exponent(ww_ws):
    with pytest.raises(ParseError):
        parse_expr("r^(1/2)", ww_ws)


def test_assumption_forms(ww_rws):
    R1, R2 = ww_rws.symbols
    assert parse_assumption("R1 > R2", ww_rws) == R1 - R2
    assert parse_assumption("R2 < R1", ww_rws) == R1 - R2


def test_render_is_deterministic():
    ws = Workspace(["r", "v"])
    a = parse_expr("v^2*r + r^2 - 3*v + log(r)", ws)
    b = parse_expr("log(r) - 3*v + r^2 + r*v^2", ws)
    assert render(a, ws) == render(b, ws)


def test_tokenize_positions():
    toks = tokenize("r_x*2")
    assert [(t.kind, t.text, t.pos) for t in toks] == [
        ("ident", "r_x", 0), ("op", "*", 3), ("num", "2", 4), ("end", "", 5)]
