import pytest
import torch
from scipy.integrate import quad

from fixtures import *
from pie_pytorch.exceptions import IntervalMismatchError, ShapeMismatchError
from pie_pytorch.pi_operator import PIOperator, ZFunction, adjoint, apply, block, compose, inner_product, norm, \
    parts_max_difference, random_operator, random_zfunction, stack_inputs, to_finite
from pie_pytorch.polynomial import vstack


def relative(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def test_apply_matches_quadrature(generator):
    iv = skewed_interval
    op = random_operator((1, 1), (1, 1), 2, iv, generator)
    f = random_zfunction((1, 1), 3, iv, generator)
    a, b = iv
    y = lambda t: float(f.y.evaluate(t))
    x = float(f.x[0])
    image = op.apply(f)

    finite, _ = quad(lambda t: float(op.Q1.evaluate(t)) * y(t), a, b, epsabs=1e-13)
    assert relative(float(image.x[0]), float(op.P.evaluate()) * x + finite) < 1e-10

    for s in (-0.7, 0.2, 1.9):
        lower, _ = quad(lambda t: float(op.R1.evaluate(s, t)) * y(t), a, s, epsabs=1e-13)
        upper, _ = quad(lambda t: float(op.R2.evaluate(s, t)) * y(t), s, b, epsabs=1e-13)
        expected = float(op.Q2.evaluate(s)) * x + float(op.R0.evaluate(s)) * y(s) + lower + upper
        assert relative(float(image.y.evaluate(s)), expected) < 1e-10


def test_adjoint_inner_product_identity(generator):
    for _ in range(50):
        op = random_operator((2, 1), (1, 2), 2, interval, generator)
        f = random_zfunction((2, 1), 3, interval, generator)
        g = random_zfunction((1, 2), 3, interval, generator)
        assert relative(inner_product(g, apply(op, f)), inner_product(apply(adjoint(op), g), f)) < 1e-10


def test_composition_matches_repeated_application(generator):
    for _ in range(50):
        op_a = random_operator((1, 2), (2, 1), 2, skewed_interval, generator)
        op_b = random_operator((1, 1), (1, 2), 2, skewed_interval, generator)
        f = random_zfunction((1, 1), 2, skewed_interval, generator)
        direct = op_a.apply(op_b.apply(f))
        composed = compose(op_a, op_b).apply(f)
        assert norm(direct.add(composed.scale(-1.0))) <= 1e-10 * max(1.0, norm(direct))


@pytest.mark.slow
def test_algebra_oracles_at_scale(generator):
    for _ in range(200):
        op_a = random_operator((1, 1), (1, 1), 2, interval, generator)
        op_b = random_operator((1, 1), (1, 1), 2, interval, generator)
        f = random_zfunction((1, 1), 2, interval, generator)
        g = random_zfunction((1, 1), 2, interval, generator)
        assert relative(inner_product(g, op_a.apply(f)), inner_product(op_a.adjoint().apply(g), f)) < 1e-10
        direct = op_a.apply(op_b.apply(f))
        assert norm(direct.add(op_a.compose(op_b).apply(f).scale(-1.0))) <= 1e-10 * max(1.0, norm(direct))


def test_adjoint_is_an_involution(generator):
    op = random_operator((2, 2), (1, 3), 3, skewed_interval, generator)
    assert parts_max_difference(op.adjoint().adjoint(), op) <= 1e-12


def test_composition_reverses_under_adjoint(generator):
    op_a = random_operator((1, 1), (2, 1), 2, interval, generator)
    op_b = random_operator((2, 2), (1, 1), 2, interval, generator)
    left = op_a.compose(op_b).adjoint()
    right = op_b.adjoint().compose(op_a.adjoint())
    assert parts_max_difference(left, right) <= 1e-11


def test_identity_is_neutral(generator):
    op = random_operator((1, 2), (2, 1), 2, interval, generator)
    assert parts_max_difference(op.compose(PIOperator.identity((1, 2), interval)), op) <= 1e-14
    assert parts_max_difference(PIOperator.identity((2, 1), interval).compose(op), op) <= 1e-14


def test_self_adjoint_construction(generator):
    op = random_operator((1, 1), (1, 1), 2, interval, generator)
    symmetric = op.add(op.adjoint())
    assert symmetric.is_self_adjoint(1e-12)
    assert not op.is_self_adjoint(1e-12)


def test_block_matches_componentwise_application(generator):
    op_a = random_operator((1, 1), (1, 1), 2, interval, generator)
    op_b = random_operator((2, 1), (1, 1), 2, interval, generator)
    f1 = random_zfunction((1, 1), 2, interval, generator)
    f2 = random_zfunction((2, 1), 2, interval, generator)
    stacked = ZFunction(torch.cat([f1.x, f2.x]), vstack([f1.y, f2.y]))
    expected = op_a.apply(f1).add(op_b.apply(f2))
    image = stack_inputs([op_a, op_b]).apply(stacked)
    assert norm(image.add(expected.scale(-1.0))) <= 1e-12 * max(1.0, norm(expected))


def test_block_rejects_inconsistent_rows(generator):
    op_a = random_operator((1, 1), (1, 1), 1, interval, generator)
    op_b = random_operator((1, 1), (2, 1), 1, interval, generator)
    with pytest.raises(ShapeMismatchError):
        block([[op_a, op_b]])


def test_compose_errors(generator):
    op_a = random_operator((1, 1), (1, 1), 1, interval, generator)
    op_b = random_operator((2, 1), (2, 1), 1, interval, generator)
    with pytest.raises(ShapeMismatchError):
        op_a.compose(op_b)
    with pytest.raises(IntervalMismatchError):
        op_a.compose(random_operator((1, 1), (1, 1), 1, skewed_interval, generator))


def test_finite_operators_are_matrices(generator):
    A = torch.randn(2, 3, dtype=DTYPE, generator=generator)
    B = torch.randn(3, 2, dtype=DTYPE, generator=generator)
    product = PIOperator.multiplier(A, interval).compose(PIOperator.multiplier(B, interval))
    assert torch.allclose(to_finite(product), A @ B, atol=1e-14)
    assert torch.allclose(to_finite(PIOperator.multiplier(A, interval).adjoint()), A.T)


def test_serialisation_round_trip(generator):
    op = random_operator((1, 2), (2, 1), 2, skewed_interval, generator)
    restored = PIOperator.from_dict(op.to_dict())
    assert parts_max_difference(op, restored) <= 1e-15
