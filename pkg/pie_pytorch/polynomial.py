"""
Matrix-valued polynomials in the spatial variables s and theta.

A PolyMatrix stores its coefficients in a dense tensor of shape
(ds + 1, dtheta + 1, rows, cols, channels). Entry [i, j] is the matrix
multiplying s**i * theta**j. The trailing channel axis makes the same type
carry affine expressions in decision scalars: channel 0 is the constant term
and channel k >= 1 is the coefficient of decision scalar k. Ordinary numeric
polynomials have a single channel.
"""
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import torch
from einops import rearrange
from torch import Tensor

from pie_pytorch.common import DTYPE, as_tensor, default, exists
from pie_pytorch.exceptions import (IntervalMismatchError, InvalidBoundError, MissingVariableError,
                                    ShapeMismatchError)

S = "s"
THETA = "theta"
BOUNDS = ("a", "s", "b")
PRODUCT_BOUNDS = ("a", "s", "theta", "b")

Interval = Tuple[float, float]


def _check_interval(interval) -> Interval:
    a, b = float(interval[0]), float(interval[1])
    assert a < b, f"interval must satisfy a < b, got [{a}, {b}]"
    return a, b


def _pad_to(coeffs: Tensor, ds: int, dt: int, channels: int) -> Tensor:
    """Zero-pad degree axes to (ds, dt) entries and the channel axis to `channels`."""
    pad_s = ds - coeffs.size(0)
    pad_t = dt - coeffs.size(1)
    pad_k = channels - coeffs.size(4)
    if pad_s == 0 and pad_t == 0 and pad_k == 0:
        return coeffs
    out = coeffs.new_zeros(ds, dt, coeffs.size(2), coeffs.size(3), channels)
    out[:coeffs.size(0), :coeffs.size(1), :, :, :coeffs.size(4)] = coeffs
    return out


def _product_channels(kp: int, kq: int) -> int:
    assert kp == 1 or kq == 1, "the product of two affine expressions is not affine"
    return max(kp, kq)


class PolyMatrix:
    __slots__ = ("coeffs", "interval", "vars")

    def __init__(self, coeffs: Tensor, interval, vars: Iterable[str] = (S,)):
        vars = frozenset(vars)
        assert vars <= {S, THETA}, f"unknown variables {set(vars) - {S, THETA}}"
        coeffs = torch.as_tensor(coeffs, dtype=DTYPE)
        if coeffs.dim() == 4:
            coeffs = coeffs.unsqueeze(-1)
        assert coeffs.dim() == 5, "coefficients must have shape (ds, dtheta, rows, cols, channels)"
        assert coeffs.size(0) >= 1 and coeffs.size(1) >= 1 and coeffs.size(4) >= 1
        assert S in vars or coeffs.size(0) == 1, "polynomial without s has s-degree 0"
        assert THETA in vars or coeffs.size(1) == 1, "polynomial without theta has theta-degree 0"
        self.coeffs = coeffs
        self.interval = _check_interval(interval)
        self.vars: FrozenSet[str] = vars

    # construction

    @staticmethod
    def zeros(rows: int, cols: int, interval, vars: Iterable[str] = (), channels: int = 1) -> "PolyMatrix":
        return PolyMatrix(torch.zeros(1, 1, rows, cols, channels, dtype=DTYPE), interval, vars)

    @staticmethod
    def constant(matrix, interval, vars: Iterable[str] = ()) -> "PolyMatrix":
        m = matrix if torch.is_tensor(matrix) and matrix.dim() == 3 else as_tensor(matrix).unsqueeze(-1)
        return PolyMatrix(m.to(DTYPE).reshape(1, 1, *m.shape), interval, vars)

    @staticmethod
    def identity(n: int, interval, vars: Iterable[str] = ()) -> "PolyMatrix":
        return PolyMatrix.constant(torch.eye(n, dtype=DTYPE), interval, vars)

    @staticmethod
    def monomial(ds: int, dt: int, matrix, interval) -> "PolyMatrix":
        """matrix * s**ds * theta**dt."""
        m = as_tensor(matrix)
        coeffs = torch.zeros(ds + 1, dt + 1, *m.shape, 1, dtype=DTYPE)
        coeffs[ds, dt, :, :, 0] = m
        vars = ({S} if ds > 0 else set()) | ({THETA} if dt > 0 else set())
        return PolyMatrix(coeffs, interval, vars)

    @staticmethod
    def from_dict(terms: Dict[Tuple[int, int], object], rows: int, cols: int, interval,
                  vars: Optional[Iterable[str]] = None) -> "PolyMatrix":
        """Build from {(ds, dtheta): matrix}; absent multi-degrees are zero."""
        ds = max([k[0] for k in terms] + [0])
        dt = max([k[1] for k in terms] + [0])
        coeffs = torch.zeros(ds + 1, dt + 1, rows, cols, 1, dtype=DTYPE)
        for (i, j), m in terms.items():
            coeffs[i, j, :, :, 0] = as_tensor(m, rows, cols)
        if vars is None:
            vars = ({S} if ds > 0 else set()) | ({THETA} if dt > 0 else set())
        return PolyMatrix(coeffs, interval, vars)

    @staticmethod
    def from_triples(entries: Sequence[Sequence[Sequence[Sequence[float]]]], interval,
                     vars: Optional[Iterable[str]] = None) -> "PolyMatrix":
        """
        Inverse of to_triples: entries[r][c] is a list of [ds, dtheta, value].
        """
        rows = len(entries)
        cols = len(entries[0]) if rows else 0
        terms: Dict[Tuple[int, int], Tensor] = {}
        for r, row in enumerate(entries):
            if len(row) != cols:
                raise ShapeMismatchError(f"row {r} has {len(row)} entries, expected {cols}")
            for c, triples in enumerate(row):
                for ds, dt, value in triples:
                    key = (int(ds), int(dt))
                    if key not in terms:
                        terms[key] = torch.zeros(rows, cols, dtype=DTYPE)
                    terms[key][r, c] += float(value)
        return PolyMatrix.from_dict(terms, rows, cols, interval, vars)

    @staticmethod
    def random(rows: int, cols: int, deg_s: int, deg_theta: int, interval,
               generator: torch.Generator = None) -> "PolyMatrix":
        coeffs = torch.randn(deg_s + 1, deg_theta + 1, rows, cols, 1, dtype=DTYPE, generator=generator)
        vars = ({S} if deg_s > 0 else set()) | ({THETA} if deg_theta > 0 else set())
        return PolyMatrix(coeffs, interval, vars)

    # shape

    @property
    def rows(self) -> int:
        return self.coeffs.size(2)

    @property
    def cols(self) -> int:
        return self.coeffs.size(3)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rows, self.cols

    @property
    def channels(self) -> int:
        return self.coeffs.size(4)

    @property
    def degree_s(self) -> int:
        return self.coeffs.size(0) - 1

    @property
    def degree_theta(self) -> int:
        return self.coeffs.size(1) - 1

    @property
    def is_bivariate(self) -> bool:
        return self.vars == {S, THETA}

    def with_vars(self, vars: Iterable[str]) -> "PolyMatrix":
        return PolyMatrix(self.coeffs, self.interval, frozenset(vars) | self.vars)

    def trim(self, atol: float = 0.0) -> "PolyMatrix":
        """Drop trailing degrees whose coefficients are all within atol of zero."""
        c = self.coeffs
        mags = c.abs()
        row_mag = mags.amax(dim=(1, 2, 3, 4)) if c.numel() else torch.zeros(c.size(0), dtype=DTYPE)
        col_mag = mags.amax(dim=(0, 2, 3, 4)) if c.numel() else torch.zeros(c.size(1), dtype=DTYPE)
        ds = int((row_mag > atol).nonzero().max().item()) + 1 if (row_mag > atol).any() else 1
        dt = int((col_mag > atol).nonzero().max().item()) + 1 if (col_mag > atol).any() else 1
        return PolyMatrix(c[:ds, :dt], self.interval, self.vars)

    def _check_compatible(self, other: "PolyMatrix"):
        if self.interval != other.interval:
            raise IntervalMismatchError(f"intervals differ: {self.interval} vs {other.interval}")

    # algebra

    def add(self, other: "PolyMatrix") -> "PolyMatrix":
        self._check_compatible(other)
        if self.shape != other.shape:
            raise ShapeMismatchError(f"cannot add {self.shape} and {other.shape} polynomial matrices")
        ds = max(self.coeffs.size(0), other.coeffs.size(0))
        dt = max(self.coeffs.size(1), other.coeffs.size(1))
        k = max(self.channels, other.channels)
        coeffs = _pad_to(self.coeffs, ds, dt, k) + _pad_to(other.coeffs, ds, dt, k)
        return PolyMatrix(coeffs, self.interval, self.vars | other.vars)

    def scale(self, c: float) -> "PolyMatrix":
        return PolyMatrix(self.coeffs * float(c), self.interval, self.vars)

    def neg(self) -> "PolyMatrix":
        return self.scale(-1.0)

    def mul(self, other: "PolyMatrix") -> "PolyMatrix":
        """Matrix product with polynomial-coefficient convolution."""
        self._check_compatible(other)
        if self.cols != other.rows:
            raise ShapeMismatchError(f"cannot multiply {self.shape} by {other.shape} polynomial matrices")
        k = _product_channels(self.channels, other.channels)
        p = self.coeffs.expand(-1, -1, -1, -1, k)
        q = other.coeffs.expand(-1, -1, -1, -1, k)
        ds = p.size(0) + q.size(0) - 1
        dt = p.size(1) + q.size(1) - 1
        out = torch.zeros(ds, dt, self.rows, other.cols, k, dtype=DTYPE)
        for i in range(p.size(0)):
            for j in range(p.size(1)):
                out[i:i + q.size(0), j:j + q.size(1)] += torch.einsum("abk,ijbck->ijack", p[i, j], q)
        return PolyMatrix(out, self.interval, self.vars | other.vars)

    def transpose(self) -> "PolyMatrix":
        return PolyMatrix(self.coeffs.transpose(2, 3), self.interval, self.vars)

    @property
    def T(self) -> "PolyMatrix":
        return self.transpose()

    def __add__(self, other):
        return self.add(other)

    def __sub__(self, other):
        return self.add(other.neg())

    def __neg__(self):
        return self.neg()

    def __matmul__(self, other):
        return self.mul(other)

    def __mul__(self, c):
        return self.scale(c)

    __rmul__ = __mul__

    # calculus and substitutions

    def swap(self) -> "PolyMatrix":
        """Exchange s and theta in every monomial."""
        vars = {THETA if v == S else S for v in self.vars}
        return PolyMatrix(self.coeffs.transpose(0, 1), self.interval, vars)

    def as_theta(self) -> "PolyMatrix":
        """A polynomial in s re-expressed in theta."""
        assert THETA not in self.vars, "as_theta expects a polynomial in s only"
        return self.swap()

    def as_s(self) -> "PolyMatrix":
        """A polynomial in theta re-expressed in s."""
        assert S not in self.vars, "as_s expects a polynomial in theta only"
        return self.swap()

    def subs_diagonal(self) -> "PolyMatrix":
        """p(s, s)."""
        c = self.coeffs
        out = torch.zeros(c.size(0) + c.size(1) - 1, 1, self.rows, self.cols, self.channels, dtype=DTYPE)
        for j in range(c.size(1)):
            out[j:j + c.size(0), 0] += c[:, j]
        return PolyMatrix(out, self.interval, {S} if out.size(0) > 1 or self.vars else ())

    def derivative_s(self) -> "PolyMatrix":
        c = self.coeffs
        if c.size(0) == 1:
            return PolyMatrix(torch.zeros_like(c), self.interval, self.vars)
        powers = torch.arange(1, c.size(0), dtype=DTYPE).reshape(-1, 1, 1, 1, 1)
        return PolyMatrix(c[1:] * powers, self.interval, self.vars)

    def integrate_theta(self, lower: str, upper: str) -> "PolyMatrix":
        """
        Definite integral over theta between bounds chosen from {a, s, b}.
        The result is a polynomial in s only.
        """
        for bound in (lower, upper):
            if bound not in BOUNDS:
                raise InvalidBoundError(f"bound must be one of {BOUNDS}, got {bound!r}")
        if THETA not in self.vars:
            raise MissingVariableError("integrate_theta needs a polynomial in theta")
        return self._antiderivative_at(upper).add(self._antiderivative_at(lower).neg())

    def _antiderivative_at(self, bound: str) -> "PolyMatrix":
        c = self.coeffs
        ds, dt = c.size(0), c.size(1)
        scales = 1.0 / torch.arange(1, dt + 1, dtype=DTYPE)
        if bound == "s":
            out = torch.zeros(ds + dt, 1, self.rows, self.cols, self.channels, dtype=DTYPE)
            for j in range(dt):
                out[j + 1:j + 1 + ds, 0] += c[:, j] * scales[j]
        else:
            value = self.interval[0] if bound == "a" else self.interval[1]
            weights = scales * value ** torch.arange(1, dt + 1, dtype=DTYPE)
            out = torch.einsum("ijabk,j->iabk", c, weights).unsqueeze(1)
        return PolyMatrix(out, self.interval, {S})

    def integrate_s(self) -> "PolyMatrix":
        """Definite integral over s from a to b; the result is constant in s."""
        assert THETA not in self.vars, "integrate_s expects a polynomial in s only"
        a, b = self.interval
        powers = torch.arange(1, self.coeffs.size(0) + 1, dtype=DTYPE)
        weights = (b ** powers - a ** powers) / powers
        out = torch.einsum("ijabk,i->jabk", self.coeffs, weights).unsqueeze(0)
        return PolyMatrix(out, self.interval, ())

    def integrate_product(self, other: "PolyMatrix", lower: str, upper: str) -> "PolyMatrix":
        """
        int p(s, eta) q(eta, theta) d eta, with self = p (theta slot read as eta),
        other = q (s slot read as eta) and bounds chosen from {a, s, theta, b}.
        """
        self._check_compatible(other)
        if self.cols != other.rows:
            raise ShapeMismatchError(f"cannot multiply {self.shape} by {other.shape} kernels")
        for bound in (lower, upper):
            if bound not in PRODUCT_BOUNDS:
                raise InvalidBoundError(f"bound must be one of {PRODUCT_BOUNDS}, got {bound!r}")
        k = _product_channels(self.channels, other.channels)
        p = self.coeffs.expand(-1, -1, -1, -1, k)
        q = other.coeffs.expand(-1, -1, -1, -1, k)
        dps, dpe = p.size(0), p.size(1)
        dqe, dqt = q.size(0), q.size(1)
        top = dpe + dqe
        out = torch.zeros(dps + top, dqt + top, self.rows, other.cols, k, dtype=DTYPE)
        a, b = self.interval
        for e1 in range(dpe):
            for e2 in range(dqe):
                m = e1 + e2 + 1
                term = torch.einsum("iabk,jbck->ijack", p[:, e1], q[e2]) / m
                for bound, sign in ((upper, 1.0), (lower, -1.0)):
                    if bound == "s":
                        out[m:m + dps, :dqt] += sign * term
                    elif bound == "theta":
                        out[:dps, m:m + dqt] += sign * term
                    else:
                        value = a if bound == "a" else b
                        out[:dps, :dqt] += sign * value ** m * term
        result_vars = {S, THETA}
        return PolyMatrix(out, self.interval, result_vars).trim()

    # evaluation

    def evaluate(self, s=None, theta=None) -> Tensor:
        """
        Numeric value at (s, theta). s and theta may be floats or equally
        shaped tensors of points; the result has shape (*points, rows, cols),
        with a trailing channel axis only for affine expressions.
        """
        if THETA in self.vars and theta is None:
            raise MissingVariableError("theta must be supplied for a polynomial in theta")
        if S in self.vars and s is None:
            raise MissingVariableError("s must be supplied for a polynomial in s")
        c = self.coeffs
        th = torch.as_tensor(default(theta, 0.0), dtype=DTYPE)
        sv = torch.as_tensor(default(s, 0.0), dtype=DTYPE)
        th, sv = torch.broadcast_tensors(th, sv)
        batch = th.shape
        th = th.reshape(-1, 1, 1, 1)
        sv = sv.reshape(-1, 1, 1, 1)
        # Horner in theta for every s-degree, then Horner in s.
        acc_s = None
        for i in reversed(range(c.size(0))):
            acc_t = c[i, -1].unsqueeze(0).expand(th.size(0), -1, -1, -1)
            for j in reversed(range(c.size(1) - 1)):
                acc_t = acc_t * th + c[i, j]
            acc_s = acc_t if acc_s is None else acc_s * sv + acc_t
        out = acc_s.reshape(*batch, self.rows, self.cols, self.channels)
        return out.squeeze(-1) if self.channels == 1 else out

    def contract(self, values: Tensor) -> "PolyMatrix":
        """Substitute decision values: returns sum_k channel_k * [1, values]_k."""
        full = torch.cat([torch.ones(1, dtype=DTYPE), torch.as_tensor(values, dtype=DTYPE).reshape(-1)])
        full = full[:self.channels]
        if full.numel() < self.channels:
            raise ShapeMismatchError(f"expected {self.channels - 1} decision values, got {full.numel() - 1}")
        coeffs = torch.einsum("ijabk,k->ijab", self.coeffs, full)
        return PolyMatrix(coeffs, self.interval, self.vars)

    def channel(self, k: int) -> "PolyMatrix":
        """Coefficient polynomial of channel k (zero if the channel is absent)."""
        if k >= self.channels:
            return PolyMatrix(torch.zeros_like(self.coeffs[..., :1]), self.interval, self.vars)
        return PolyMatrix(self.coeffs[..., k:k + 1], self.interval, self.vars)

    def with_channels(self, channels: int) -> "PolyMatrix":
        assert channels >= self.channels, "cannot drop channels"
        return PolyMatrix(_pad_to(self.coeffs, self.coeffs.size(0), self.coeffs.size(1), channels),
                          self.interval, self.vars)

    # comparisons and serialisation

    def allclose(self, other: "PolyMatrix", atol: float = 1e-12) -> bool:
        if self.shape != other.shape or self.interval != other.interval:
            return False
        ds = max(self.coeffs.size(0), other.coeffs.size(0))
        dt = max(self.coeffs.size(1), other.coeffs.size(1))
        k = max(self.channels, other.channels)
        diff = _pad_to(self.coeffs, ds, dt, k) - _pad_to(other.coeffs, ds, dt, k)
        return diff.numel() == 0 or bool(diff.abs().max() <= atol)

    def max_abs_coefficient(self) -> float:
        return float(self.coeffs.abs().max()) if self.coeffs.numel() else 0.0

    def to_triples(self) -> List[List[List[List[float]]]]:
        """Each entry becomes a list of [ds, dtheta, value] for its nonzero coefficients."""
        assert self.channels == 1, "only numeric polynomials can be serialised"
        flat = rearrange(self.coeffs[..., 0], "i j r c -> r c i j")
        entries = []
        for r in range(self.rows):
            row = []
            for c in range(self.cols):
                nz = flat[r, c].nonzero().tolist()
                row.append([[i, j, float(flat[r, c, i, j])] for i, j in nz])
            entries.append(row)
        return entries

    def __repr__(self):
        return (f"PolyMatrix({self.rows}x{self.cols}, vars={sorted(self.vars)}, "
                f"degree=({self.degree_s}, {self.degree_theta}), channels={self.channels}, "
                f"interval={self.interval})")


def add(p: PolyMatrix, q: PolyMatrix) -> PolyMatrix:
    return p.add(q)


def mul(p: PolyMatrix, q: PolyMatrix) -> PolyMatrix:
    return p.mul(q)


def integrate_theta(p: PolyMatrix, lower: str, upper: str) -> PolyMatrix:
    return p.integrate_theta(lower, upper)


def evaluate(p: PolyMatrix, s, theta=None) -> Tensor:
    return p.evaluate(s, theta)


def substitute_swap(p: PolyMatrix) -> PolyMatrix:
    return p.swap()


def block(rows: Sequence[Sequence[PolyMatrix]]) -> PolyMatrix:
    """Assemble a block polynomial matrix; blocks in a row share their row count."""
    assert rows and rows[0], "block needs at least one block"
    interval = rows[0][0].interval
    ds = max(p.coeffs.size(0) for row in rows for p in row)
    dt = max(p.coeffs.size(1) for row in rows for p in row)
    k = max(p.channels for row in rows for p in row)
    vars = frozenset().union(*[p.vars for row in rows for p in row])
    stacked = []
    for row in rows:
        heights = {p.rows for p in row}
        if len(heights) != 1:
            raise ShapeMismatchError(f"blocks in a row must share their row count, got {sorted(heights)}")
        for p in row:
            if p.interval != interval:
                raise IntervalMismatchError("blocks must share their interval")
        stacked.append(torch.cat([_pad_to(p.coeffs, ds, dt, k) for p in row], dim=3))
    widths = {t.size(3) for t in stacked}
    if len(widths) != 1:
        raise ShapeMismatchError(f"block rows must share their column count, got {sorted(widths)}")
    return PolyMatrix(torch.cat(stacked, dim=2), interval, vars)


def hstack(blocks: Sequence[PolyMatrix]) -> PolyMatrix:
    return block([list(blocks)])


def vstack(blocks: Sequence[PolyMatrix]) -> PolyMatrix:
    return block([[p] for p in blocks])
