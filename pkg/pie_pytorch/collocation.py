"""
Chebyshev collocation of PI operators.

Distributed functions are sampled at Chebyshev-Gauss-Lobatto nodes mapped to
[a, b]. Sampled elements of Z^{m,n} are vectors of length m + n*N: the finite
part first, then the samples of each distributed component in turn.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch
from einops import rearrange, repeat
from numpy.polynomial import chebyshev
from torch import Tensor

from pie_pytorch.caching import cache_by_key_fn
from pie_pytorch.common import DTYPE, default, make_generator
from pie_pytorch.exceptions import CollocationError, IntervalMismatchError
from pie_pytorch.pi_operator import Dims, PIOperator, ZFunction

logger = logging.getLogger(__name__)

MIN_NODES = 4


@dataclass(frozen=True)
class CollocationGrid:
    size: int
    interval: Tuple[float, float]
    nodes: Tensor
    weights: Tensor
    # integration[i, j] integrates the j-th Lagrange basis function from a to nodes[i].
    integration: Tensor

    def z_weights(self, dims: Dims) -> Tensor:
        """Diagonal of the discretised Z inner product on Z^{m,n}."""
        m, n = dims
        return torch.cat([torch.ones(m, dtype=DTYPE), repeat(self.weights, "j -> (b j)", b=n)])

    def inner(self, u: Tensor, v: Tensor, dims: Dims) -> Tensor:
        return (u * self.z_weights(dims) * v).sum(dim=0)

    def norm(self, u: Tensor, dims: Dims) -> Tensor:
        return self.inner(u, u, dims).clamp_min(0).sqrt()

    def sample(self, f: ZFunction) -> Tensor:
        if f.interval != self.interval:
            raise IntervalMismatchError(f"function lives on {f.interval}, grid on {self.interval}")
        return f.sample(self.nodes)


def clenshaw_curtis(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Ascending Chebyshev-Gauss-Lobatto points on [-1, 1] and their weights (n + 1 points)."""
    theta = np.pi * np.arange(n + 1) / n
    x = np.sort(np.cos(theta))
    w = np.zeros(n + 1)
    inner = np.arange(1, n)
    v = np.ones(n - 1)
    if n % 2 == 0:
        w[0] = 1.0 / (n * n - 1)
        for k in range(1, n // 2):
            v = v - 2 * np.cos(2 * k * theta[inner]) / (4 * k * k - 1)
        v = v - np.cos(n * theta[inner]) / (n * n - 1)
    else:
        w[0] = 1.0 / (n * n)
        for k in range(1, (n - 1) // 2 + 1):
            v = v - 2 * np.cos(2 * k * theta[inner]) / (4 * k * k - 1)
    w[-1] = w[0]
    w[inner] = 2 * v / n
    return x, w


@cache_by_key_fn
def chebyshev_grid(size: int, a: float, b: float) -> CollocationGrid:
    if size < MIN_NODES:
        raise CollocationError(f"a collocation grid needs at least {MIN_NODES} nodes, got {size}")
    assert a < b, f"interval must satisfy a < b, got [{a}, {b}]"
    x, w = clenshaw_curtis(size - 1)
    half = (b - a) / 2
    # interpolate node values in the Chebyshev basis, integrate from -1, evaluate at the nodes.
    to_coeffs = np.linalg.solve(chebyshev.chebvander(x, size - 1), np.eye(size))
    antiderivative = chebyshev.chebint(to_coeffs, lbnd=-1, axis=0)
    integration = chebyshev.chebvander(x, size) @ antiderivative * half
    return CollocationGrid(
        size=size,
        interval=(float(a), float(b)),
        nodes=torch.as_tensor(a + half * (x + 1), dtype=DTYPE),
        weights=torch.as_tensor(w * half, dtype=DTYPE),
        integration=torch.as_tensor(integration, dtype=DTYPE),
    )


def grid_for(op_or_interval, size: int) -> CollocationGrid:
    interval = getattr(op_or_interval, "interval", op_or_interval)
    return chebyshev_grid(size, float(interval[0]), float(interval[1]))


def discretize(op: PIOperator, grid: CollocationGrid) -> Tensor:
    """
    Collocation matrix of op, of size (m_out + n_out*N) x (m_in + n_in*N).
    Integral terms use the spectral integration matrix, so polynomial data
    whose products stay below degree N are reproduced exactly.
    """
    if op.interval != grid.interval:
        raise IntervalMismatchError(f"operator lives on {op.interval}, grid on {grid.interval}")
    assert op.channels == 1, "only numeric operators can be discretised"
    (m_in, n_in), (m_out, n_out) = op.dims_in, op.dims_out
    nodes, w, S = grid.nodes, grid.weights, grid.integration

    top_left = op.P.evaluate().reshape(m_out, m_in)
    q1 = op.Q1.evaluate(nodes).reshape(grid.size, m_out, n_in) * w.reshape(-1, 1, 1)
    top_right = rearrange(q1, "j a b -> a (b j)")
    bottom_left = rearrange(op.Q2.evaluate(nodes).reshape(grid.size, n_out, m_in), "i a b -> (a i) b")

    s_grid, t_grid = torch.meshgrid(nodes, nodes, indexing="ij")
    r1 = op.R1.evaluate(s_grid, t_grid).reshape(grid.size, grid.size, n_out, n_in)
    r2 = op.R2.evaluate(s_grid, t_grid).reshape(grid.size, grid.size, n_out, n_in)
    upper = w.reshape(1, -1) - S
    kernel = S[..., None, None] * r1 + upper[..., None, None] * r2
    diagonal = torch.arange(grid.size)
    kernel[diagonal, diagonal] += op.R0.evaluate(nodes).reshape(grid.size, n_out, n_in)
    bottom_right = rearrange(kernel, "i j a b -> (a i) (b j)")

    return torch.cat([torch.cat([top_left, top_right], dim=1),
                      torch.cat([bottom_left, bottom_right], dim=1)], dim=0)


def weighted_adjoint(matrix: Tensor, grid: CollocationGrid, dims_in: Dims, dims_out: Dims) -> Tensor:
    """W_in^{-1} M^T W_out, the adjoint of M in the discretised Z inner products."""
    w_in = grid.z_weights(dims_in)
    w_out = grid.z_weights(dims_out)
    return matrix.transpose(0, 1) * w_out.reshape(1, -1) / w_in.reshape(-1, 1)


def operator_norm_estimate(op: PIOperator, size: int = 32, iterations: int = 200,
                           generator: torch.Generator = None) -> float:
    """Power iteration on M* M for the collocation matrix M, in the discretised Z norm."""
    grid = grid_for(op, size)
    matrix = discretize(op, grid)
    adjoint = weighted_adjoint(matrix, grid, op.dims_in, op.dims_out)
    if matrix.numel() == 0:
        return 0.0
    generator = default(generator, make_generator(0))
    v = torch.randn(matrix.size(1), dtype=DTYPE, generator=generator)
    v = v / grid.norm(v, op.dims_in)
    estimate = 0.0
    for _ in range(iterations):
        u = adjoint @ (matrix @ v)
        size_u = float(grid.norm(u, op.dims_in))
        if size_u == 0.0:
            return 0.0
        converged = abs(size_u - estimate) <= 1e-10 * size_u
        estimate = size_u
        v = u / size_u
        if converged:
            break
    logger.debug("norm estimate %.6g for %s", estimate ** 0.5, op)
    return estimate ** 0.5
