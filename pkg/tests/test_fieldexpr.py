import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conflab.fieldexpr import (
    ArityError,
    Bump,
    DomainError,
    ParseError,
    UnknownIdentifierError,
    eval_jet,
    parse,
    to_string,
)


def at(text, p, **params):
    return float(parse(text, params=tuple(params)).value(np.array([p]), params)[0])


@pytest.mark.parametrize("text, point, expected", [
    ("0", (0.3, -1.0, 2.0), 0.0),
    ("x^2+y^2+z^2", (1, 2, 3), 14.0),
    ("-2*exp(-50*((x-0.3)^2+y^2+z^2))", (0.3, 0, 0), -2.0),
    ("2^3^2", (0, 0, 0), 512.0),
    ("-x^2", (3, 0, 0), -9.0),
    ("8/2/2", (0, 0, 0), 2.0),
    ("1-2-3", (0, 0, 0), -4.0),
    ("2*-x", (1.5, 0, 0), -3.0),
    ("x^-1", (4, 0, 0), 0.25),
    ("sqrt(x)+log(y)+tanh(0)", (4, 1, 0), 2.0),
    ("1.5e2*z", (0, 0, 2), 300.0),
])
def test_evaluation(text, point, expected):
    assert at(text, point) == pytest.approx(expected, rel=1e-14, abs=1e-14)


def test_parameters_and_bind():
    e = parse("a*x+b", params=("a", "b"))
    assert e.free_params() == {"a", "b"}
    assert e.value(np.array([[2.0, 0, 0]]), {"a": 3.0, "b": 1.0})[0] == 7.0
    assert e.bind(a=3.0, b=1.0).free_params() == set()


@pytest.mark.parametrize("text, cls, offset", [
    ("x + * y", ParseError, 4),
    ("foo(x)", UnknownIdentifierError, 0),
    ("x + w", UnknownIdentifierError, 4),
    ("sin(x, y)", ArityError, 5),
    ("sin", ArityError, 0),
    ("(x", ParseError, 2),
    ("x $ 1", ParseError, 2),
])
def test_parse_errors_carry_offsets(text, cls, offset):
    with pytest.raises(cls) as info:
        parse(text)
    assert info.value.offset == offset


def test_offsets_are_bytes():
    with pytest.raises(ParseError) as info:
        parse("x+é")
    assert info.value.offset == 2
    with pytest.raises(ParseError) as info:
        parse("éé + 1")
    assert info.value.offset == 0


@pytest.mark.parametrize("text, p", [("log(x)", (0, 0, 0)), ("sqrt(x)", (-1, 0, 0)),
                                     ("1/x", (0, 0, 0)), ("x^-2", (0, 0, 0))])
def test_domain_errors(text, p):
    with pytest.raises(DomainError):
        parse(text).value(np.array([p], dtype=float))


def test_jet_of_known_field():
    v, g, h = eval_jet(parse("x^2*y+sin(z)"), (1.0, 2.0, 0.5))
    assert v == pytest.approx(2 + np.sin(0.5))
    np.testing.assert_allclose(g, [4.0, 1.0, np.cos(0.5)])
    np.testing.assert_allclose(h, [[4, 2, 0], [2, 0, 0], [0, 0, -np.sin(0.5)]])


def test_bump_is_compact_and_smooth():
    b = Bump([0.1, 0, 0], 0.5, 2.0)
    assert b([0.1, 0, 0]) == 2.0
    assert b([0.7, 0, 0]) == 0.0
    j = b.jet(np.array([[0.1 + 0.5, 0, 0], [0.1 + 0.6, 0, 0]]))
    assert np.all(j.g == 0) and np.all(j.h == 0)


# ---------------------------------------------------------------------------
# property tests

_leaf = st.one_of(st.sampled_from(["x", "y", "z"]),
                  st.floats(0.1, 3.0).map(lambda c: repr(round(c, 3))))


def _combine(children):
    binop = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(
        lambda t: f"({t[0]}{t[1]}{t[2]})")
    unary = children.map(lambda a: f"-{a}")
    call = st.tuples(st.sampled_from(["sin", "cos", "tanh", "exp"]), children).map(
        lambda t: f"{t[0]}(0.3*{t[1]})")
    power = st.tuples(children, st.integers(1, 3)).map(lambda t: f"({t[0]})^{t[1]}")
    return st.one_of(binop, unary, call, power)


expressions = st.recursive(_leaf, _combine, max_leaves=8)
points = st.tuples(*[st.floats(-0.9, 0.9)] * 3)


@settings(max_examples=60, deadline=None)
@given(expressions, points)
def test_jets_match_finite_differences(text, p):
    e = parse(text)
    p = np.array(p)
    v, g, h = eval_jet(e, p)
    eps = 1e-5
    fd_g = np.zeros(3)
    fd_h = np.zeros((3, 3))
    for i in range(3):
        d = np.zeros(3)
        d[i] = eps
        fd_g[i] = (e(p + d) - e(p - d)) / (2 * eps)
        gp = eval_jet(e, p + d)[1]
        gm = eval_jet(e, p - d)[1]
        fd_h[i] = (gp - gm) / (2 * eps)
    scale = 1.0 + np.abs(g).max() + np.abs(h).max()
    np.testing.assert_allclose(g, fd_g, atol=1e-6 * scale)
    np.testing.assert_allclose(h, fd_h, atol=1e-5 * scale)
    np.testing.assert_allclose(h, h.T, atol=0)


@settings(max_examples=80, deadline=None)
@given(expressions, points)
def test_print_parse_round_trip(text, p):
    e = parse(text)
    again = parse(to_string(e))
    assert to_string(again) == to_string(e)
    p = np.array([p])
    assert again.value(p)[0] == e.value(p)[0]
