"""
4-PI operators between spaces Z^{m,n}[a,b] = R^m x L2^n[a,b].

An operator with parts (P, Q1, Q2, R0, R1, R2) acts on (x, y) as

    top    = P x + int_a^b Q1(s) y(s) ds
    bottom = Q2(s) x + R0(s) y(s) + int_a^s R1(s, t) y(t) dt + int_s^b R2(s, t) y(t) dt

Parts are PolyMatrix values. P carries no variable, Q1, Q2 and R0 are
polynomials in s and R1, R2 are kernels in (s, theta). Parts may carry affine
channels, in which case the operator is an affine expression in decision
scalars (see polynomial.py).
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import torch
from torch import Tensor

from pie_pytorch.common import DTYPE, as_tensor, exists
from pie_pytorch.exceptions import IntervalMismatchError, ShapeMismatchError
from pie_pytorch.polynomial import S, THETA, PolyMatrix, block as poly_block

Dims = Tuple[int, int]

PART_NAMES = ("P", "Q1", "Q2", "R0", "R1", "R2")
PART_VARS = {"P": (), "Q1": (S,), "Q2": (S,), "R0": (S,), "R1": (S, THETA), "R2": (S, THETA)}


def _as_part(p: PolyMatrix, name: str, rows: int, cols: int, interval) -> PolyMatrix:
    if p.shape != (rows, cols):
        raise ShapeMismatchError(f"part {name} must be {rows}x{cols}, got {p.rows}x{p.cols}")
    if p.interval != interval:
        raise IntervalMismatchError(f"part {name} lives on {p.interval}, operator on {interval}")
    return PolyMatrix(p.coeffs, interval, PART_VARS[name])


def _univariate(p: PolyMatrix) -> PolyMatrix:
    """Reinterpret a kernel whose theta-degree is zero as a polynomial in s."""
    p = p.trim()
    assert p.degree_theta == 0, "expected a kernel constant in theta"
    return PolyMatrix(p.coeffs, p.interval, (S,))


@dataclass
class ZFunction:
    """Element (x, y) of Z^{m,n}: x a vector of length m, y an n x 1 PolyMatrix in s."""
    x: Tensor
    y: PolyMatrix

    def __post_init__(self):
        self.x = torch.as_tensor(self.x, dtype=DTYPE).reshape(-1)
        assert self.y.cols == 1, "the distributed part must be a column"
        self.y = PolyMatrix(self.y.coeffs, self.y.interval, (S,))

    @property
    def dims(self) -> Dims:
        return self.x.numel(), self.y.rows

    @property
    def interval(self):
        return self.y.interval

    @staticmethod
    def zeros(dims: Dims, interval) -> "ZFunction":
        return ZFunction(torch.zeros(dims[0], dtype=DTYPE), PolyMatrix.zeros(dims[1], 1, interval, (S,)))

    @staticmethod
    def random(dims: Dims, degree: int, interval, generator: torch.Generator = None) -> "ZFunction":
        x = torch.randn(dims[0], dtype=DTYPE, generator=generator)
        return ZFunction(x, PolyMatrix.random(dims[1], 1, degree, 0, interval, generator).with_vars((S,)))

    def add(self, other: "ZFunction") -> "ZFunction":
        return ZFunction(self.x + other.x, self.y.add(other.y))

    def scale(self, c: float) -> "ZFunction":
        return ZFunction(self.x * c, self.y.scale(c))

    def sample(self, nodes: Tensor) -> Tensor:
        """Values at collocation nodes, stacked component-major after the finite part."""
        values = self.y.evaluate(nodes)[..., 0]
        return torch.cat([self.x, values.transpose(0, 1).reshape(-1)])


class PIOperator:
    def __init__(self, P: PolyMatrix, Q1: PolyMatrix, Q2: PolyMatrix, R0: PolyMatrix,
                 R1: PolyMatrix, R2: PolyMatrix):
        interval = R0.interval
        m_out, m_in = P.shape
        n_out, n_in = R0.shape
        self.interval = interval
        self.dims_in: Dims = (m_in, n_in)
        self.dims_out: Dims = (m_out, n_out)
        self.P = _as_part(P, "P", m_out, m_in, interval)
        self.Q1 = _as_part(Q1, "Q1", m_out, n_in, interval)
        self.Q2 = _as_part(Q2, "Q2", n_out, m_in, interval)
        self.R0 = _as_part(R0, "R0", n_out, n_in, interval)
        self.R1 = _as_part(R1, "R1", n_out, n_in, interval)
        self.R2 = _as_part(R2, "R2", n_out, n_in, interval)

    # construction

    @staticmethod
    def from_parts(dims_in: Dims, dims_out: Dims, interval, P=None, Q1=None, Q2=None, R0=None,
                   R1=None, R2=None) -> "PIOperator":
        """
        Build an operator from any subset of parts; missing parts are zero.
        Matrices and scalars are accepted for constant parts.
        """
        (m_in, n_in), (m_out, n_out) = dims_in, dims_out
        shapes = {"P": (m_out, m_in), "Q1": (m_out, n_in), "Q2": (n_out, m_in),
                  "R0": (n_out, n_in), "R1": (n_out, n_in), "R2": (n_out, n_in)}
        given = dict(P=P, Q1=Q1, Q2=Q2, R0=R0, R1=R1, R2=R2)
        parts = {}
        for name in PART_NAMES:
            rows, cols = shapes[name]
            value = given[name]
            if not exists(value):
                parts[name] = PolyMatrix.zeros(rows, cols, interval, PART_VARS[name])
            elif isinstance(value, PolyMatrix):
                parts[name] = value
            else:
                parts[name] = PolyMatrix.constant(as_tensor(value, rows, cols), interval, PART_VARS[name])
        return PIOperator(**parts)

    @staticmethod
    def zero(dims_in: Dims, dims_out: Dims, interval) -> "PIOperator":
        return PIOperator.from_parts(dims_in, dims_out, interval)

    @staticmethod
    def identity(dims: Dims, interval) -> "PIOperator":
        m, n = dims
        return PIOperator.from_parts(dims, dims, interval, P=torch.eye(m, dtype=DTYPE),
                                     R0=torch.eye(n, dtype=DTYPE))

    @staticmethod
    def multiplier(matrix, interval) -> "PIOperator":
        """Finite-dimensional map R^m -> R^k given by a constant matrix."""
        matrix = as_tensor(matrix)
        return PIOperator.from_parts((matrix.size(1), 0), (matrix.size(0), 0), interval, P=matrix)

    @staticmethod
    def random(dims_in: Dims, dims_out: Dims, degree: int, interval,
               generator: torch.Generator = None) -> "PIOperator":
        (m_in, n_in), (m_out, n_out) = dims_in, dims_out
        return PIOperator(
            P=PolyMatrix.random(m_out, m_in, 0, 0, interval, generator).with_vars(()),
            Q1=PolyMatrix.random(m_out, n_in, degree, 0, interval, generator),
            Q2=PolyMatrix.random(n_out, m_in, degree, 0, interval, generator),
            R0=PolyMatrix.random(n_out, n_in, degree, 0, interval, generator),
            R1=PolyMatrix.random(n_out, n_in, degree, degree, interval, generator),
            R2=PolyMatrix.random(n_out, n_in, degree, degree, interval, generator),
        )

    @property
    def parts(self) -> Dict[str, PolyMatrix]:
        return {name: getattr(self, name) for name in PART_NAMES}

    @property
    def channels(self) -> int:
        return max(p.channels for p in self.parts.values())

    @property
    def is_square(self) -> bool:
        return self.dims_in == self.dims_out

    def map_parts(self, fn) -> "PIOperator":
        return PIOperator(**{name: fn(p) for name, p in self.parts.items()})

    def _check_compatible(self, other: "PIOperator"):
        if self.interval != other.interval:
            raise IntervalMismatchError(f"operators live on {self.interval} and {other.interval}")

    # algebra

    def add(self, other: "PIOperator") -> "PIOperator":
        self._check_compatible(other)
        if self.dims_in != other.dims_in or self.dims_out != other.dims_out:
            raise ShapeMismatchError(f"cannot add operators {self.dims_in}->{self.dims_out} "
                                     f"and {other.dims_in}->{other.dims_out}")
        return PIOperator(**{name: p.add(getattr(other, name)) for name, p in self.parts.items()})

    def scale(self, c: float) -> "PIOperator":
        return self.map_parts(lambda p: p.scale(c))

    def neg(self) -> "PIOperator":
        return self.scale(-1.0)

    def sub(self, other: "PIOperator") -> "PIOperator":
        return self.add(other.neg())

    def compose(self, other: "PIOperator") -> "PIOperator":
        """The operator f -> self(other(f))."""
        self._check_compatible(other)
        if self.dims_in != other.dims_out:
            raise ShapeMismatchError(f"cannot compose {self.dims_in}->{self.dims_out} "
                                     f"after {other.dims_in}->{other.dims_out}")
        A, B = self, other
        Q1_eta = A.Q1.swap()

        P = A.P.mul(B.P).add(A.Q1.mul(B.Q2).integrate_s())

        Q1 = A.P.mul(B.Q1).add(A.Q1.mul(B.R0))
        Q1 = Q1.add(_univariate(Q1_eta.integrate_product(B.R1, "theta", "b").swap()))
        Q1 = Q1.add(_univariate(Q1_eta.integrate_product(B.R2, "a", "theta").swap()))

        Q2 = A.Q2.mul(B.P).add(A.R0.mul(B.Q2))
        Q2 = Q2.add(_univariate(A.R1.integrate_product(B.Q2, "a", "s")))
        Q2 = Q2.add(_univariate(A.R2.integrate_product(B.Q2, "s", "b")))

        R0 = A.R0.mul(B.R0)

        cross = A.Q2.mul(B.Q1.as_theta())
        R1 = cross.add(A.R0.mul(B.R1)).add(A.R1.mul(B.R0.as_theta()))
        R1 = R1.add(A.R1.integrate_product(B.R1, "theta", "s"))
        R1 = R1.add(A.R1.integrate_product(B.R2, "a", "theta"))
        R1 = R1.add(A.R2.integrate_product(B.R1, "s", "b"))

        R2 = cross.add(A.R0.mul(B.R2)).add(A.R2.mul(B.R0.as_theta()))
        R2 = R2.add(A.R1.integrate_product(B.R2, "a", "s"))
        R2 = R2.add(A.R2.integrate_product(B.R1, "theta", "b"))
        R2 = R2.add(A.R2.integrate_product(B.R2, "s", "theta"))

        return PIOperator(P=P, Q1=Q1, Q2=Q2, R0=R0, R1=R1, R2=R2)

    def adjoint(self) -> "PIOperator":
        return PIOperator(P=self.P.T, Q1=self.Q2.T, Q2=self.Q1.T, R0=self.R0.T,
                          R1=self.R2.swap().T, R2=self.R1.swap().T)

    def apply(self, f: ZFunction) -> ZFunction:
        if f.interval != self.interval:
            raise IntervalMismatchError(f"function lives on {f.interval}, operator on {self.interval}")
        if f.dims != self.dims_in:
            raise ShapeMismatchError(f"operator expects {self.dims_in}, got {f.dims}")
        assert self.channels == 1, "only numeric operators can be applied"
        x = PolyMatrix.constant(f.x.reshape(-1, 1), self.interval)
        y = f.y
        top = self.P.mul(x).add(self.Q1.mul(y).integrate_s())
        y_theta = y.as_theta()
        bottom = self.Q2.mul(x).add(self.R0.mul(y))
        bottom = bottom.add(self.R1.mul(y_theta).integrate_theta("a", "s"))
        bottom = bottom.add(self.R2.mul(y_theta).integrate_theta("s", "b"))
        return ZFunction(top.evaluate().reshape(-1), bottom)

    # decision channels

    def contract(self, values: Tensor) -> "PIOperator":
        return self.map_parts(lambda p: p.contract(values))

    def channel(self, k: int) -> "PIOperator":
        return self.map_parts(lambda p: p.channel(k))

    # comparisons

    def allclose(self, other: "PIOperator", atol: float = 1e-12) -> bool:
        return all(p.allclose(getattr(other, name), atol) for name, p in self.parts.items())

    def is_self_adjoint(self, atol: float = 1e-9) -> bool:
        return self.is_square and self.allclose(self.adjoint(), atol)

    def trim(self, atol: float = 0.0) -> "PIOperator":
        return self.map_parts(lambda p: p.trim(atol))

    def to_dict(self) -> dict:
        return {
            "dims_in": list(self.dims_in),
            "dims_out": list(self.dims_out),
            "interval": list(self.interval),
            "parts": {name: p.trim().to_triples() for name, p in self.parts.items()},
        }

    @staticmethod
    def from_dict(data: dict) -> "PIOperator":
        interval = tuple(data["interval"])
        (m_in, n_in), (m_out, n_out) = data["dims_in"], data["dims_out"]
        shapes = {"P": (m_out, m_in), "Q1": (m_out, n_in), "Q2": (n_out, m_in),
                  "R0": (n_out, n_in), "R1": (n_out, n_in), "R2": (n_out, n_in)}
        parts = {}
        for name in PART_NAMES:
            rows, cols = shapes[name]
            entries = data["parts"][name]
            if rows == 0 or cols == 0:
                parts[name] = PolyMatrix.zeros(rows, cols, interval, PART_VARS[name])
            else:
                parts[name] = PolyMatrix.from_triples(entries, interval, PART_VARS[name])
        return PIOperator(**parts)

    def __add__(self, other):
        return self.add(other)

    def __sub__(self, other):
        return self.sub(other)

    def __neg__(self):
        return self.neg()

    def __matmul__(self, other):
        return self.compose(other)

    def __mul__(self, c):
        return self.scale(c)

    __rmul__ = __mul__

    def __repr__(self):
        return (f"PIOperator({self.dims_in} -> {self.dims_out}, interval={self.interval}, "
                f"channels={self.channels})")


def compose(op_a: PIOperator, op_b: PIOperator) -> PIOperator:
    return op_a.compose(op_b)


def adjoint(op: PIOperator) -> PIOperator:
    return op.adjoint()


def apply(op: PIOperator, f: ZFunction) -> ZFunction:
    return op.apply(f)


def add(op_a: PIOperator, op_b: PIOperator) -> PIOperator:
    return op_a.add(op_b)


def scale(op: PIOperator, c: float) -> PIOperator:
    return op.scale(c)


def inner_product(f: ZFunction, g: ZFunction) -> float:
    """<f, g>_Z = x_f . x_g + int_a^b y_f(s) . y_g(s) ds, computed exactly."""
    if f.interval != g.interval:
        raise IntervalMismatchError(f"functions live on {f.interval} and {g.interval}")
    if f.dims != g.dims:
        raise ShapeMismatchError(f"cannot pair {f.dims} with {g.dims}")
    finite = torch.dot(f.x, g.x) if f.x.numel() else torch.zeros((), dtype=DTYPE)
    if f.y.rows == 0:
        return float(finite)
    distributed = f.y.T.mul(g.y).integrate_s().evaluate().reshape(())
    return float(finite + distributed)


def norm(f: ZFunction) -> float:
    return max(inner_product(f, f), 0.0) ** 0.5


def block(rows: Sequence[Sequence[PIOperator]]) -> PIOperator:
    """
    Block operator on product spaces. rows[i][j] maps the j-th input space to the
    i-th output space; in the assembled operator finite components of every
    block come first, then the distributed ones, each in block order.
    """
    assert rows and rows[0], "block needs at least one operator"
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ShapeMismatchError(f"block row {i} has {len(row)} operators, expected {width}")
    for j in range(width):
        if len({rows[i][j].dims_in for i in range(len(rows))}) != 1:
            raise ShapeMismatchError(f"operators in block column {j} disagree on their input space")
    for i, row in enumerate(rows):
        if len({op.dims_out for op in row}) != 1:
            raise ShapeMismatchError(f"operators in block row {i} disagree on their output space")
    return PIOperator(**{name: poly_block([[getattr(op, name) for op in row] for row in rows])
                         for name in PART_NAMES})


def stack_inputs(ops: Sequence[PIOperator]) -> PIOperator:
    return block([list(ops)])


def stack_outputs(ops: Sequence[PIOperator]) -> PIOperator:
    return block([[op] for op in ops])


def to_finite(op: PIOperator) -> Tensor:
    """The matrix of an operator between purely finite-dimensional spaces."""
    assert op.dims_in[1] == 0 and op.dims_out[1] == 0, "operator has distributed components"
    return op.P.evaluate()


def random_operator(dims_in: Dims, dims_out: Dims, degree: int, interval,
                    generator: torch.Generator = None) -> PIOperator:
    return PIOperator.random(dims_in, dims_out, degree, interval, generator)


def random_zfunction(dims: Dims, degree: int, interval, generator: torch.Generator = None) -> ZFunction:
    return ZFunction.random(dims, degree, interval, generator)


def parts_max_difference(op_a: PIOperator, op_b: PIOperator) -> float:
    worst = 0.0
    for name, p in op_a.parts.items():
        worst = max(worst, p.add(getattr(op_b, name).neg()).max_abs_coefficient())
    return worst


def zero_like(op: PIOperator) -> PIOperator:
    return PIOperator.zero(op.dims_in, op.dims_out, op.interval)


def finite_dims(op: Optional[PIOperator]) -> List[int]:
    return [op.dims_in[0], op.dims_out[0]] if exists(op) else [0, 0]
