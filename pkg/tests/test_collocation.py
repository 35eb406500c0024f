import pytest
import torch

from fixtures import *
from pie_pytorch.collocation import chebyshev_grid, discretize, grid_for, operator_norm_estimate, weighted_adjoint
from pie_pytorch.exceptions import CollocationError, IntervalMismatchError
from pie_pytorch.pi_operator import PIOperator, random_operator, random_zfunction


def test_weights_integrate_polynomials_exactly():
    grid = chebyshev_grid(12, *skewed_interval)
    a, b = skewed_interval
    for k in range(11):
        exact = (b ** (k + 1) - a ** (k + 1)) / (k + 1)
        assert abs(float((grid.weights * grid.nodes ** k).sum()) - exact) < 1e-12


def test_integration_matrix_is_exact_below_grid_degree():
    grid = chebyshev_grid(10, *interval)
    for k in range(8):
        integral = grid.integration @ grid.nodes ** k
        assert torch.allclose(integral, grid.nodes ** (k + 1) / (k + 1), atol=1e-12)


def test_grids_are_cached():
    assert chebyshev_grid(16, 0.0, 1.0) is chebyshev_grid(16, 0.0, 1.0)
    assert grid_for(interval, 16) is chebyshev_grid(16, 0.0, 1.0)


def test_grid_size_is_checked():
    with pytest.raises(CollocationError):
        chebyshev_grid(3, 0.0, 1.0)


def test_discretisation_reproduces_polynomial_images(generator):
    grid = chebyshev_grid(16, *skewed_interval)
    op = random_operator((2, 1), (1, 2), 2, skewed_interval, generator)
    f = random_zfunction((2, 1), 2, skewed_interval, generator)
    image = discretize(op, grid) @ grid.sample(f)
    assert torch.allclose(image, grid.sample(op.apply(f)), atol=1e-10)


def test_discretisation_checks_intervals(generator):
    op = random_operator((1, 1), (1, 1), 1, skewed_interval, generator)
    with pytest.raises(IntervalMismatchError):
        discretize(op, chebyshev_grid(8, *interval))


def test_weighted_adjoint_is_the_discrete_adjoint(generator):
    grid = chebyshev_grid(12, *interval)
    dims_in, dims_out = (1, 2), (2, 1)
    M = discretize(random_operator(dims_in, dims_out, 2, interval, generator), grid)
    u = torch.randn(M.size(1), dtype=DTYPE, generator=generator)
    v = torch.randn(M.size(0), dtype=DTYPE, generator=generator)
    adjoint = weighted_adjoint(M, grid, dims_in, dims_out)
    left = grid.inner(v, M @ u, dims_out)
    right = grid.inner(adjoint @ v, u, dims_in)
    assert abs(float(left - right)) <= 1e-12 * max(1.0, abs(float(left)))


def test_norm_estimates():
    identity = PIOperator.identity((1, 2), interval)
    assert abs(operator_norm_estimate(identity) - 1.0) < 1e-8
    doubled = PIOperator.multiplier(torch.tensor([[2.0, 0.0], [0.0, -3.0]], dtype=DTYPE), interval)
    assert abs(operator_norm_estimate(doubled) - 3.0) < 1e-6


@pytest.mark.parametrize("dims_in, dims_out", [((0, 1), (0, 2)), ((2, 0), (1, 0)), ((0, 2), (1, 0)), ((2, 0), (0, 1))])
def test_discretisation_of_pure_blocks(generator, dims_in, dims_out):
    grid = chebyshev_grid(12, *interval)
    op = random_operator(dims_in, dims_out, 2, interval, generator)
    f = random_zfunction(dims_in, 2, interval, generator)
    matrix = discretize(op, grid)
    assert matrix.shape == (dims_out[0] + dims_out[1] * grid.size, dims_in[0] + dims_in[1] * grid.size)
    assert torch.allclose(matrix @ grid.sample(f), grid.sample(op.apply(f)), atol=1e-10)
