"""Parser, evaluator and symbolic derivative checks for rate expressions."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qedist import ratexpr
from qedist.errors import ExprEvalError, ExprSyntaxError, NonSmoothError
from qedist.ratexpr import Binary, Call, Name, Num, Unary

ZOO = [
    ("b*exp(-alpha*x)", {"b": 2.0, "alpha": 1.0}),
    ("b", {"b": 2.0}),
    ("d + c*x", {"d": 1.0, "c": 1.0}),
    ("b/(1 + x/m)", {"b": 2.0, "m": 1.0}),
    ("b/(1 + x/m)^c", {"b": 2.0, "m": 1.0, "c": 2.0}),
    ("b/(1 + (x/m)^c)", {"b": 2.0, "m": 1.0, "c": 2.0}),
    ("b*x1", {"b": 2.0}),
    ("x1*(d + c*x1)", {"d": 1.0, "c": 1.0}),
    ("x1*(d + c11*x1 + c12*x2)", {"d": 1.0, "c11": 0.75, "c12": 0.25}),
]


def test_parse_variable():
    assert ratexpr.parse("x") == Name(ident="x")


def test_parse_ricker_shape():
    # unary minus binds tighter than *, so -alpha*x is (-alpha)*x
    e = ratexpr.parse("b*exp(-alpha*x)")
    assert e == Binary(
        op="*",
        left=Name(ident="b"),
        right=Call(
            func="exp",
            args=(Binary(op="*", left=Unary(op="-", operand=Name(ident="alpha")), right=Name(ident="x")),),
        ),
    )
    same = ratexpr.parse("b*exp(-(alpha*x))")
    bindings = {"b": 2.0, "alpha": 1.0, "x": 0.5}
    assert ratexpr.evaluate(e, bindings) == ratexpr.evaluate(same, bindings)


def test_eval_maynard_smith_slatkin():
    e = ratexpr.parse("b/(1 + (x/m)^c)")
    val = ratexpr.evaluate(e, {"b": 2.0, "m": 1.0, "c": 2.0, "x": 1.0})
    assert val == 1.0  # 2/(1+1)


def test_eval_exp_zero():
    assert ratexpr.evaluate(ratexpr.parse("exp(0)"), {}) == 1.0


def test_precedence_and_associativity():
    assert ratexpr.evaluate(ratexpr.parse("2^3^2"), {}) == 512.0  # right assoc
    assert ratexpr.evaluate(ratexpr.parse("-2^2"), {}) == -4.0  # ^ binds tighter
    assert ratexpr.evaluate(ratexpr.parse("2 - 3 - 4"), {}) == -5.0
    assert ratexpr.evaluate(ratexpr.parse("12/3/2"), {}) == 2.0
    assert ratexpr.evaluate(ratexpr.parse("1 + 2*3"), {}) == 7.0


def test_diff_square():
    d = ratexpr.diff(ratexpr.parse("x^2"), "x")
    assert ratexpr.evaluate(d, {"x": 3.0}) == 6.0


def _central_diff(e, bindings, var, h=1e-6):
    up = dict(bindings)
    dn = dict(bindings)
    up[var] = bindings[var] + h
    dn[var] = bindings[var] - h
    return (ratexpr.evaluate(e, up) - ratexpr.evaluate(e, dn)) / (2 * h)


@pytest.mark.parametrize("text,params", ZOO)
def test_diff_matches_finite_difference(text, params):
    e = ratexpr.parse(text)
    names = sorted(ratexpr.free_names(e) - set(params))
    rng = np.random.default_rng(7)
    for var in names:
        d = ratexpr.diff(e, var)
        for _ in range(20):
            bindings = dict(params)
            for v in names:
                bindings[v] = float(rng.uniform(0.2, 3.0))
            exact = ratexpr.evaluate(d, bindings)
            approx = _central_diff(e, bindings, var)
            assert math.isclose(exact, approx, rel_tol=1e-7, abs_tol=1e-9)


@pytest.mark.parametrize("text,params", ZOO)
def test_round_trip_zoo(text, params):
    e = ratexpr.parse(text)
    assert ratexpr.parse(ratexpr.to_string(e)) == e


def test_round_trip_after_diff():
    for text, params in ZOO:
        e = ratexpr.parse(text)
        for var in sorted(ratexpr.free_names(e) - set(params)):
            d = ratexpr.diff(e, var)
            assert ratexpr.parse(ratexpr.to_string(d)) == d


_leaf = st.one_of(
    st.floats(min_value=0.0, max_value=100.0, allow_nan=False).map(lambda v: Num(value=v)),
    st.sampled_from(["x", "y", "b", "alpha"]).map(lambda s: Name(ident=s)),
)


def _branch(children):
    binary = st.builds(
        lambda op, a, b: Binary(op=op, left=a, right=b),
        st.sampled_from(["+", "-", "*", "/", "^"]),
        children,
        children,
    )
    unary = st.builds(lambda a: Unary(op="-", operand=a), children)
    call1 = st.builds(
        lambda f, a: Call(func=f, args=(a,)), st.sampled_from(["exp", "log"]), children
    )
    call2 = st.builds(
        lambda f, a, b: Call(func=f, args=(a, b)),
        st.sampled_from(["pow", "min", "max"]),
        children,
        children,
    )
    return st.one_of(binary, unary, call1, call2)


_exprs = st.recursive(_leaf, _branch, max_leaves=25)


@given(_exprs)
@settings(max_examples=300, deadline=None)
def test_round_trip_random_ast(e):
    assert ratexpr.parse(ratexpr.to_string(e)) == e


@given(_exprs)
@settings(max_examples=150, deadline=None)
def test_eval_agrees_across_reparse(e):
    bindings = {"x": 1.3, "y": 0.7, "b": 2.0, "alpha": 1.1}
    try:
        v1 = ratexpr.evaluate(e, bindings)
    except (ExprEvalError, OverflowError):
        return
    v2 = ratexpr.evaluate(ratexpr.parse(ratexpr.to_string(e)), bindings)
    assert v1 == v2 or (math.isnan(v1) and math.isnan(v2))


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as err:
        ratexpr.parse("b*(1 + ")
    assert "offset" in str(err.value)


def test_unknown_identifier_rejected_with_names():
    with pytest.raises(ExprSyntaxError, match="unknown identifier"):
        ratexpr.parse("b*zz", names={"b", "x"})
    ratexpr.parse("b*zz")  # unrestricted parse accepts any identifier


def test_unknown_function():
    with pytest.raises(ExprSyntaxError, match="unknown function"):
        ratexpr.parse("sinh(x)")


def test_empty_expression():
    with pytest.raises(ExprSyntaxError):
        ratexpr.parse("   ")


def test_eval_division_by_zero():
    with pytest.raises(ExprEvalError, match="division by zero"):
        ratexpr.evaluate(ratexpr.parse("1/(x-1)"), {"x": 1.0})


def test_eval_log_nonpositive():
    with pytest.raises(ExprEvalError, match="log"):
        ratexpr.evaluate(ratexpr.parse("log(x)"), {"x": 0.0})


def test_diff_minmax_rejected():
    with pytest.raises(NonSmoothError):
        ratexpr.diff(ratexpr.parse("min(x, 1)"), "x")
    assert ratexpr.contains_nonsmooth(ratexpr.parse("1 + max(x, 0)"))


def test_compile_matches_evaluate():
    rng = np.random.default_rng(3)
    for text, params in ZOO:
        e = ratexpr.parse(text)
        names = sorted(ratexpr.free_names(e) - set(params))
        f = ratexpr.compile_expr(e, names, params)
        for _ in range(5):
            vals = [float(rng.uniform(0.3, 2.0)) for _ in names]
            bindings = dict(params, **dict(zip(names, vals)))
            assert f(*vals) == ratexpr.evaluate(e, bindings)
