import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from finslerlab.autodiff import (
    Dual,
    collect_nonsmooth,
    fabs,
    fexp,
    flog,
    fsin,
    fsqrt,
    primal,
    value_and_grad,
    value_grad_hess,
)


def central_diff(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_basic_arithmetic_derivative():
    x = Dual(3.0, 1.0)
    y = x * x + 2 * x - 5
    assert primal(y) == pytest.approx(10.0)
    assert y.b == pytest.approx(8.0)


def test_division_and_reflected_ops():
    x = Dual(2.0, 1.0)
    y = 1.0 / x + (5 - x) / x
    # f = 1/x + 5/x - 1 => f' = -6/x^2
    assert y.b == pytest.approx(-6.0 / 4.0)


@given(st.floats(min_value=0.2, max_value=3.0), st.floats(min_value=-2.0, max_value=2.0))
@settings(max_examples=50, deadline=None)
def test_function_chain_matches_central_difference(x0, c):
    def f(x):
        return fsin(x) * fexp(c * x) + fsqrt(x + 0.5) - flog(x + 1.0)

    d = f(Dual(x0, 1.0))
    fd = central_diff(lambda t: f(t), x0)
    assert d.b == pytest.approx(fd, rel=1e-6, abs=1e-6)


def test_vector_seed_gradient():
    def f(xs):
        return xs[0] * xs[0] * xs[1] + fsin(xs[1])

    val, grad = value_and_grad(f, [2.0, 0.5])
    assert val == pytest.approx(4 * 0.5 + math.sin(0.5))
    assert grad == pytest.approx([2 * 2.0 * 0.5, 4.0 + math.cos(0.5)])


def test_nested_hessian():
    def f(xs):
        return xs[0] ** 3 * xs[1] + fexp(xs[0] * xs[1])

    x = [0.7, -0.4]
    val, grad, hess = value_grad_hess(f, x)
    e = math.exp(x[0] * x[1])
    expect = np.array(
        [
            [6 * x[0] * x[1] + x[1] ** 2 * e, 3 * x[0] ** 2 + e + x[0] * x[1] * e],
            [3 * x[0] ** 2 + e + x[0] * x[1] * e, x[0] ** 2 * e],
        ]
    )
    assert np.allclose(hess, expect, rtol=1e-12, atol=1e-12)
    assert np.allclose(hess, hess.T)


def test_constant_function_zero_grad():
    val, grad = value_and_grad(lambda xs: 7.5, [1.0, 2.0, 3.0])
    assert val == 7.5
    assert np.all(grad == 0)


def test_abs_kink_flagged_with_zero_derivative():
    with collect_nonsmooth() as log:
        y = fabs(Dual(0.0, 1.0))
    assert primal(y) == 0.0
    assert y.b == 0.0
    assert log


def test_abs_away_from_kink_not_flagged():
    with collect_nonsmooth() as log:
        y = fabs(Dual(-2.0, 1.0))
    assert y.b == -1.0
    assert not log


def test_numpy_defers_to_dual():
    v = np.array([1.0, 2.0])
    d = Dual(3.0, np.array([1.0, 0.0]))
    out = v[1] * d
    assert isinstance(out, Dual)
    assert primal(out) == pytest.approx(6.0)


def test_power_general_exponent():
    x = Dual(2.0, 1.0)
    y = x ** Dual(3.0, 0.0)
    assert primal(y) == pytest.approx(8.0)
    assert primal(y.b) == pytest.approx(3 * 4.0)
