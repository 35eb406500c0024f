import math

import torch
from pytest import fixture

from pie_pytorch.common import DTYPE, make_generator

# every randomised suite draws from this seed.
SEED = 20210317
interval = (0.0, 1.0)
skewed_interval = (-1.0, 2.0)
PI2 = math.pi ** 2


@fixture()
def generator():
    return make_generator(SEED)


def random_stable_matrix(n: int, generator: torch.Generator) -> torch.Tensor:
    """A random Hurwitz matrix: a random matrix shifted left of its spectral abscissa."""
    M = torch.randn(n, n, dtype=DTYPE, generator=generator)
    shift = float(torch.linalg.eigvals(M).real.max())
    return M - (shift + 0.5) * torch.eye(n, dtype=DTYPE)
