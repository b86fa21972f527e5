"""Expression core: parsing, rendering, evaluation, differentiation."""

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirac_aa.expr import (Add, ArityError, Chart, Const, Div, ExpressionSyntaxError, Func, Mul, Neg,
                           Pow, UnknownIdentifierError, Var, diff, evaluate, is_zero, lambdify, parse,
                           render, simplify, substitute)

CHART = Chart(("x", "y", "z"))
CORPUS = Path(__file__).parent / "data" / "expr_corpus.txt"


def corpus() -> list[str]:
    lines = CORPUS.read_text(encoding="utf-8").splitlines()
    return [s for s in (ln.strip() for ln in lines) if s and not s.startswith("#")]


def test_corpus_has_fifty_expressions():
    assert len(corpus()) >= 50


@pytest.mark.parametrize("src", corpus())
def test_corpus_round_trip(src):
    e = parse(src, CHART)
    text = render(e)
    assert parse(text, CHART) == e
    assert render(parse(text, CHART)) == text


@pytest.mark.parametrize("src", corpus())
def test_corpus_compiled_matches_interpreter(src):
    e = parse(src, CHART)
    pts = np.array([[0.3, 1.7, -0.4], [1.1, -0.6, 0.9], [-2.0, 0.25, 1.5]])
    fast = lambdify([e], CHART)(pts)[:, 0]
    slow = np.array([evaluate(e, CHART, p) for p in pts])
    assert np.allclose(fast, slow, rtol=1e-13, atol=1e-13)


def test_precedence():
    assert evaluate(parse("-x^2", CHART), CHART, (3, 0, 0)) == -9
    assert evaluate(parse("2 * x^2", CHART), CHART, (3, 0, 0)) == 18
    assert evaluate(parse("x / y / z", CHART), CHART, (8, 2, 2)) == 2
    assert evaluate(parse("x - y - z", CHART), CHART, (1, 1, 1)) == -1


@pytest.mark.parametrize("src, error", [
    ("x +", ExpressionSyntaxError),
    ("(x", ExpressionSyntaxError),
    ("w + 1", UnknownIdentifierError),
    ("sin(x, y)", ArityError),
    ("x ^ y", ExpressionSyntaxError),
])
def test_parse_errors(src, error):
    with pytest.raises(error):
        parse(src, CHART)


# -- random trees ---------------------------------------------------------

leaves = st.one_of(
    st.sampled_from([Var("x"), Var("y"), Var("z")]),
    st.integers(0, 9).map(Const),
    st.sampled_from([0.5, 1.25, 3.0]).map(Const),
)


def _extend(children):
    return st.one_of(
        st.lists(children, min_size=2, max_size=3).map(Add),
        st.lists(children, min_size=2, max_size=3).map(Mul),
        st.tuples(children, children).map(lambda ab: Div(ab[0], Add([Const(3), Mul([ab[1], ab[1]])]))),
        st.tuples(children, st.integers(1, 3)).map(lambda ab: Pow(ab[0], ab[1])),
        children.map(Neg),
        st.tuples(st.sampled_from(["sin", "cos"]), children).map(lambda ab: Func(*ab)),
    )


trees = st.recursive(leaves, _extend, max_leaves=8)
points = st.tuples(*[st.floats(-1.5, 1.5) for _ in range(3)])


@settings(max_examples=200, deadline=None)
@given(trees)
def test_render_parse_round_trip(e):
    text = render(e)
    again = parse(text, CHART)
    assert render(again) == text
    pt = (0.3, -0.7, 1.1)
    assert np.isclose(evaluate(again, CHART, pt), evaluate(e, CHART, pt), rtol=1e-12, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(trees, points)
def test_simplify_preserves_value(e, pt):
    a, b = evaluate(e, CHART, pt), evaluate(simplify(e), CHART, pt)
    assert np.isclose(a, b, rtol=1e-9, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(trees, points, st.sampled_from(["x", "y", "z"]))
def test_derivative_matches_central_difference(e, pt, c):
    i = CHART.index(c)
    h = 1e-5
    up, dn = list(pt), list(pt)
    up[i] += h
    dn[i] -= h
    fd = (evaluate(e, CHART, up) - evaluate(e, CHART, dn)) / (2 * h)
    exact = evaluate(diff(e, c), CHART, pt)
    assert np.isclose(exact, fd, rtol=1e-5, atol=1e-5 * (1 + abs(fd)))


def test_symbolic_zero_and_numeric_zero():
    assert is_zero(parse("x * y - y * x", CHART), CHART).kind == "symbolic"
    assert is_zero(parse("sin(x)^2 + cos(x)^2 - 1", CHART), CHART).is_zero
    assert not is_zero(parse("x - y", CHART), CHART).is_zero


def test_substitute():
    e = substitute(parse("x * y + z", CHART), {"x": 2, "z": parse("y^2", CHART)})
    assert evaluate(e, CHART, (0, 3, 0)) == 15
