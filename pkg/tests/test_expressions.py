import math

import numpy as np
import pytest

from canspec.expressions import ExpressionError, parse_coefficient


def test_inverse_power():
    f = parse_coefficient("x^(-1.5)")
    assert f(4.0) == pytest.approx(0.125)


def test_parameters():
    f = parse_coefficient("l*(l+1)/x^2", {"l": 1.0})
    assert f(1.0) == pytest.approx(2.0)


def test_log_product():
    f = parse_coefficient("(x*ln(x))^(-2)")
    assert f(math.e) == pytest.approx(math.e**-2)


def test_right_associative_power():
    f = parse_coefficient("2^3^2")
    assert f(0.0) == pytest.approx(512.0)


def test_unary_minus_and_scientific():
    f = parse_coefficient("-2.5e-1*x + 1")
    assert f(4.0) == pytest.approx(0.0)


def test_functions():
    f = parse_coefficient("sin(x)^2 + cos(x)^2")
    assert f(0.7) == pytest.approx(1.0)
    g = parse_coefficient("sqrt(abs(x))*exp(0*x)")
    assert g(-9.0) == pytest.approx(3.0)


def test_piecewise():
    f = parse_coefficient("piece(x < 1: 0; else: 5)")
    assert f(0.5) == 0.0
    assert f(2.0) == 5.0
    vals = f(np.array([0.25, 0.75, 1.0, 3.0]))
    assert vals.tolist() == [0.0, 0.0, 5.0, 5.0]


def test_piecewise_geq_condition():
    f = parse_coefficient("piece(x >= 2: x^2; x < 1: 1; else: 0)")
    assert f(3.0) == 9.0
    assert f(0.5) == 1.0
    assert f(1.5) == 0.0


def test_unknown_parameter_rejected():
    with pytest.raises(ExpressionError):
        parse_coefficient("a*x")


def test_unknown_function_rejected():
    with pytest.raises(ExpressionError):
        parse_coefficient("tan(x)")


def test_syntax_error_has_position():
    with pytest.raises(ExpressionError) as err:
        parse_coefficient("1 + * 2")
    assert err.value.position is not None


def test_domain_error_is_lazy():
    f = parse_coefficient("ln(x)")
    with np.errstate(invalid="ignore"):
        assert math.isnan(f(-1.0))


def test_vectorized_evaluation():
    f = parse_coefficient("x^(-0.5)")
    xs = np.array([1.0, 4.0, 16.0])
    assert np.allclose(f(xs), [1.0, 0.5, 0.25])


def test_hint_check():
    f = parse_coefficient("x^(-1.3)*(2+x)", hint=(-1.3, 0))
    assert f.check_hint(0.0, 1.0)
    g = parse_coefficient("x^(-2)", hint=(-1.0, 0))
    assert not g.check_hint(0.0, 1.0)
