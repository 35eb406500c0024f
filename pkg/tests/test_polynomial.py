import pytest
import torch
from scipy.integrate import quad

from fixtures import *
from pie_pytorch.exceptions import IntervalMismatchError, InvalidBoundError, MissingVariableError, \
    ShapeMismatchError
from pie_pytorch.polynomial import S, THETA, PolyMatrix, block, evaluate, integrate_theta, mul


def monomial(ds, dt, value=1.0, iv=interval):
    return PolyMatrix.monomial(ds, dt, [[value]], iv)


def test_constant_product_is_matrix_product(generator):
    A = torch.randn(2, 3, dtype=DTYPE, generator=generator)
    B = torch.randn(3, 4, dtype=DTYPE, generator=generator)
    product = mul(PolyMatrix.constant(A, interval), PolyMatrix.constant(B, interval))
    assert torch.allclose(product.evaluate(), A @ B, atol=1e-14)


def test_product_convolves_degrees():
    p = monomial(1, 0).add(PolyMatrix.constant([[2.0]], interval))  # s + 2
    q = monomial(2, 0, 3.0)  # 3 s^2
    product = p.mul(q)
    assert product.degree_s == 3
    assert abs(float(product.evaluate(0.5)) - (0.5 + 2) * 3 * 0.25) < 1e-14


def test_evaluate_bivariate():
    p = monomial(2, 1, 4.0)
    assert abs(float(evaluate(p, 0.5, 0.25)) - 4 * 0.25 * 0.25) < 1e-15


def test_evaluate_needs_theta():
    with pytest.raises(MissingVariableError):
        monomial(1, 1).evaluate(0.5)


def test_integrate_s_on_skewed_interval():
    p = monomial(2, 0, 1.0, skewed_interval)
    assert abs(float(p.integrate_s().evaluate()) - 3.0) < 1e-14


def test_integrate_theta_bounds():
    p = monomial(0, 1, 1.0, skewed_interval)  # theta
    lower = integrate_theta(p, "a", "s")
    upper = integrate_theta(p, "s", "b")
    s = 0.5
    assert abs(float(lower.evaluate(s)) - (s * s - 1.0) / 2) < 1e-14
    assert abs(float(upper.evaluate(s)) - (4.0 - s * s) / 2) < 1e-14


def test_integrate_theta_rejects_bad_input():
    with pytest.raises(InvalidBoundError):
        monomial(0, 1).integrate_theta("a", "theta")
    with pytest.raises(MissingVariableError):
        monomial(1, 0).integrate_theta("a", "s")


def test_subs_diagonal_and_derivative():
    p = monomial(1, 2, 2.0)  # 2 s theta^2
    diagonal = p.subs_diagonal()
    assert abs(float(diagonal.evaluate(0.7)) - 2 * 0.7 ** 3) < 1e-14
    derivative = monomial(3, 0, 1.0).derivative_s()
    assert abs(float(derivative.evaluate(0.5)) - 3 * 0.25) < 1e-14


@pytest.mark.parametrize("lower,upper", [("a", "s"), ("s", "b"), ("a", "theta"), ("theta", "b"),
                                         ("s", "theta"), ("theta", "s"), ("a", "b")])
def test_integrate_product_matches_quadrature(generator, lower, upper):
    p = PolyMatrix.random(1, 1, 2, 2, skewed_interval, generator)
    q = PolyMatrix.random(1, 1, 2, 2, skewed_interval, generator)
    s, theta = 0.3, 1.4
    bounds = dict(a=skewed_interval[0], b=skewed_interval[1], s=s, theta=theta)
    value, _ = quad(lambda eta: float(p.evaluate(s, eta)) * float(q.evaluate(eta, theta)),
                    bounds[lower], bounds[upper], epsabs=1e-13, epsrel=1e-13)
    result = p.integrate_product(q, lower, upper)
    assert abs(float(result.evaluate(s, theta)) - value) <= 1e-10 * max(1.0, abs(value))


def test_sum_pads_degrees_and_channels():
    affine = PolyMatrix(torch.tensor([1.0, 2.0, 3.0], dtype=DTYPE).reshape(1, 1, 1, 1, 3), interval, ())
    total = affine.add(monomial(2, 0, 5.0))
    assert total.channels == 3 and total.degree_s == 2
    contracted = total.contract(torch.tensor([10.0, 100.0], dtype=DTYPE))
    assert abs(float(contracted.evaluate(1.0)) - (1 + 20 + 300 + 5)) < 1e-12
    assert total.channel(2).allclose(PolyMatrix.constant([[3.0]], interval))


def test_shape_and_interval_errors():
    with pytest.raises(ShapeMismatchError):
        PolyMatrix.zeros(2, 3, interval).mul(PolyMatrix.zeros(2, 3, interval))
    with pytest.raises(IntervalMismatchError):
        PolyMatrix.zeros(1, 1, interval).add(PolyMatrix.zeros(1, 1, skewed_interval))


def test_block_assembly():
    one = PolyMatrix.constant([[1.0]], interval)
    s = monomial(1, 0)
    assembled = block([[one, s], [s, one]])
    value = assembled.evaluate(0.25)
    assert torch.allclose(value, torch.tensor([[1.0, 0.25], [0.25, 1.0]], dtype=DTYPE))


def test_triples_and_trim():
    p = PolyMatrix.from_triples([[[[0, 0, 1.5], [2, 1, -0.5]]]], interval, (S, THETA))
    assert p.degree_s == 2 and p.degree_theta == 1
    assert p.to_triples() == [[[[0, 0, 1.5], [2, 1, -0.5]]]]
    padded = PolyMatrix(torch.zeros(4, 3, 1, 1, 1, dtype=DTYPE), interval, (S, THETA))
    assert padded.trim().degree_s == 0 and padded.trim().degree_theta == 0
