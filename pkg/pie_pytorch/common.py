from typing import Optional

import torch

# every tensor in the package is float64 on the CPU.
DTYPE = torch.float64


def exists(val):
    return val is not None


def default(val, d):
    return val if exists(val) else d


def as_tensor(value, rows: Optional[int] = None, cols: Optional[int] = None) -> torch.Tensor:
    """
    Convert scalars, nested lists, numpy arrays or tensors to a float64 matrix.
    Scalars become 1x1 matrices unless rows/cols request a broadcast shape.
    :param value: data to convert.
    :param rows: expected number of rows, or None.
    :param cols: expected number of columns, or None.
    :return: float64 tensor of rank 2.
    """
    t = torch.as_tensor(value, dtype=DTYPE)
    if t.dim() == 0:
        t = t.reshape(1, 1)
        if exists(rows) and exists(cols) and (rows, cols) != (1, 1):
            t = t * torch.ones(rows, cols, dtype=DTYPE)
    elif t.dim() == 1:
        t = t.reshape(-1, 1) if exists(cols) and cols == 1 else t.reshape(1, -1)
    if exists(rows) and exists(cols) and t.numel() == 0:
        t = t.reshape(rows, cols)
    assert t.dim() == 2, f"expected a matrix, got a tensor with {t.dim()} dimensions"
    if exists(rows):
        assert t.size(0) == rows, f"expected {rows} rows, got {t.size(0)}"
    if exists(cols):
        assert t.size(1) == cols, f"expected {cols} columns, got {t.size(1)}"
    return t


def make_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator
