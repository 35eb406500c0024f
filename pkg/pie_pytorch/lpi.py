"""
Linear PI inequalities compiled to semidefinite programs.

Decision scalars live in one global vector x. Affine PI expressions carry
them through the channel axis of their PolyMatrix parts (channel k + 1 is
scalar k). Positive operators are parameterised as

    P = Z_d* M Z_d + delta I,    M >= 0,

where Z_d is the fixed monomial basis operator below, and an inequality
E <= 0 becomes the coefficient-matching equality E + Z'* M' Z' = 0 for a fresh
Gram block M' >= 0. Compilation eliminates the equalities through a null-space
basis, x = x0 + N z, leaving a pure LMI in z with one block per Gram matrix.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from einops import rearrange
from torch import Tensor

from pie_pytorch.common import DTYPE, default, exists
from pie_pytorch.exceptions import DegreeBudgetError, InfeasibleError, ShapeMismatchError, SolverFailureError
from pie_pytorch.pi_operator import PART_NAMES, Dims, PIOperator
from pie_pytorch.polynomial import S, THETA, PolyMatrix, vstack
from pie_pytorch.sdp_solver import INFEASIBLE, NUMERICAL_FAILURE, SdpProblem, SdpSolution, SolverOptions, solve

logger = logging.getLogger(__name__)

# a degree-d P composed with T on both sides needs slack degree about 2 d.
SLACK_DEGREE_HEADROOM = 4


def slack_degree_for(degree: int) -> int:
    return 2 * degree + SLACK_DEGREE_HEADROOM


@dataclass(frozen=True)
class LpiOptions:
    degree: int = 2
    max_degree: int = 8
    # slack Gram degree budget; 2 * max_degree + SLACK_DEGREE_HEADROOM unless given.
    max_slack_degree: Optional[int] = None
    # epsilon = epsilon_scale * ||T T*|| unless an absolute epsilon is given.
    epsilon_scale: float = 1e-4
    epsilon: Optional[float] = None
    delta: float = 1e-4
    controller_degree: Optional[int] = None
    warn_degree: int = 5
    norm_grid: int = 32
    rank_tolerance: float = 1e-10
    equality_tolerance: float = 1e-9
    solver: SolverOptions = field(default_factory=SolverOptions)

    @property
    def resolved_controller_degree(self) -> int:
        return default(self.controller_degree, self.degree + 1)

    @property
    def resolved_max_slack_degree(self) -> int:
        return default(self.max_slack_degree, slack_degree_for(self.max_degree))

    def replace(self, **changes) -> "LpiOptions":
        return replace(self, **changes)


# decision variables

@dataclass
class ScalarVariable:
    name: str
    index: int

    def value(self, x: Tensor) -> float:
        return float(x[self.index])

    def times(self, matrix, interval) -> PIOperator:
        """The finite-dimensional operator x_index * matrix."""
        matrix = torch.as_tensor(matrix, dtype=DTYPE)
        rows, cols = matrix.shape
        coeffs = torch.zeros(1, 1, rows, cols, self.index + 2, dtype=DTYPE)
        coeffs[0, 0, :, :, self.index + 1] = matrix
        return PIOperator.from_parts((cols, 0), (rows, 0), interval, P=PolyMatrix(coeffs, interval, ()))


@dataclass
class DecisionPI:
    """A PI operator whose kernel coefficients are affine in decision scalars."""
    name: str
    op: PIOperator
    degree: int
    scalars: Tuple[int, int]

    @property
    def dims_in(self) -> Dims:
        return self.op.dims_in

    @property
    def dims_out(self) -> Dims:
        return self.op.dims_out

    def value(self, x: Tensor) -> PIOperator:
        return self.op.contract(x).trim()


@dataclass
class GramBlock:
    name: str
    offset: int
    size: int
    # layout of the basis Z_d behind the block, see monomial_basis_operator.
    dims: Dims = (0, 0)
    degree: int = 0
    multiplier: Optional[Tuple[int, ...]] = None

    @property
    def count(self) -> int:
        return self.size * (self.size + 1) // 2

    def matrix(self, x: Tensor) -> Tensor:
        upper = x[self.offset:self.offset + self.count]
        return upper[_gram_index(self.size)]


@dataclass
class PosPIVariable:
    name: str
    dims: Dims
    degree: int
    gram: GramBlock
    delta: float
    decision: DecisionPI

    @property
    def op(self) -> PIOperator:
        return self.decision.op

    def value(self, x: Tensor) -> PIOperator:
        return self.decision.value(x)


@dataclass
class EqualityConstraint:
    name: str
    expr: PIOperator
    # self-adjoint expressions only need P, R0 upper triangles, Q1 and R1.
    symmetric: bool


Variable = Union[ScalarVariable, DecisionPI, PosPIVariable]


def _gram_index(size: int) -> Tensor:
    """index[i, j] of the upper-triangle scalar holding M[i, j] = M[j, i]."""
    rows, cols = torch.triu_indices(size, size)
    index = torch.zeros(size, size, dtype=torch.long)
    positions = torch.arange(rows.numel())
    index[rows, cols] = positions
    index[cols, rows] = positions
    return index


def _fresh_channels(shape: Sequence[int], offset: int) -> Tensor:
    """Coefficients whose entries are the scalars offset, offset + 1, ... in row-major order."""
    count = math.prod(shape)
    fresh = torch.eye(count, dtype=DTYPE).reshape(*shape, count)
    return torch.cat([torch.zeros(*shape, offset + 1, dtype=DTYPE), fresh], dim=-1)


def _shift_channels(op: PIOperator, offset: int) -> PIOperator:
    """Move local decision channels 1.. to global channels offset + 1.."""
    def shift(p: PolyMatrix) -> PolyMatrix:
        c = p.coeffs
        gap = torch.zeros(*c.shape[:-1], offset, dtype=DTYPE)
        return PolyMatrix(torch.cat([c[..., :1], gap, c[..., 1:]], dim=-1), p.interval, p.vars)
    return op.map_parts(shift)


def monomial_basis(n: int, degree: int, interval) -> PolyMatrix:
    """[I; s I; ...; s^d I] as an n(d+1) x n polynomial in s."""
    coeffs = torch.zeros(degree + 1, 1, n * (degree + 1), n, 1, dtype=DTYPE)
    for i in range(degree + 1):
        coeffs[i, 0, i * n:(i + 1) * n, :, 0] = torch.eye(n, dtype=DTYPE)
    return PolyMatrix(coeffs, interval, (S,))


def _multiplier_rows(n: int, degree: int, multiplier: Sequence[int]) -> List[int]:
    return [k * n + j for k in range(degree + 1) for j in multiplier]


def monomial_basis_operator(dims: Dims, degree: int, interval,
                            multiplier: Optional[Sequence[int]] = None) -> PIOperator:
    """
    Z_d: (x, y) -> (x, [Z(s) y(s); int_a^s Z(t) y(t) dt; int_s^b Z(t) y(t) dt])
    with Z = monomial_basis(n, d). Maps Z^{m,n} to Z^{m,3n(d+1)}. When
    multiplier lists components, the Z(s) y(s) rows keep only those.
    """
    m, n = dims
    basis = monomial_basis(n, degree, interval)
    rows = _multiplier_rows(n, degree, default(multiplier, range(n)))
    pointwise = PolyMatrix(basis.coeffs[:, :, torch.tensor(rows, dtype=torch.long)], interval, (S,))
    zero = PolyMatrix.zeros(basis.rows, n, interval, (S,))
    zero_pointwise = PolyMatrix.zeros(len(rows), n, interval, (S,))
    kernel = basis.swap()
    out = (m, len(rows) + 2 * basis.rows)
    return PIOperator.from_parts(dims, out, interval, P=torch.eye(m, dtype=DTYPE),
                                 R0=vstack([pointwise, zero, zero]),
                                 R1=vstack([zero_pointwise.with_vars((THETA,)), kernel, zero.with_vars((THETA,))]),
                                 R2=vstack([zero_pointwise.with_vars((THETA,)), zero.with_vars((THETA,)), kernel]))


def legendre_expansion(degree: int, interval) -> Tensor:
    """
    E with s^k = sum_l E[k, l] phi_l(s), phi_l the Legendre polynomials
    orthonormal on the interval.
    """
    a, b = interval
    half, middle = (b - a) / 2, (a + b) / 2
    out = np.zeros((degree + 1, degree + 1))
    for k in range(degree + 1):
        # s = middle + half u with u on [-1, 1]
        power = np.polynomial.Polynomial([middle, half]) ** k
        coef = np.polynomial.legendre.poly2leg(power.coef)
        out[k, :coef.size] = coef
    norms = np.sqrt((b - a) / (2 * np.arange(degree + 1) + 1))
    return torch.as_tensor(out * norms, dtype=DTYPE)


def gram_scaling(gram: GramBlock, interval) -> Tensor:
    """
    W with M = W^-T M_leg W^-1: the Gram matrix of the same form in the
    orthonormal Legendre basis is M_leg = W^T M W.
    """
    m, n = gram.dims
    E = legendre_expansion(gram.degree, interval)
    pointwise = len(default(gram.multiplier, range(n)))
    blocks = [torch.eye(m, dtype=DTYPE), torch.kron(E, torch.eye(pointwise, dtype=DTYPE)),
              torch.kron(E, torch.eye(n, dtype=DTYPE)), torch.kron(E, torch.eye(n, dtype=DTYPE))]
    W = torch.block_diag(*blocks)
    assert W.size(0) == gram.size, f"Gram block {gram.name} does not match its basis layout"
    return W


def gram_multiplier(m: int, gram: Tensor, interval) -> PIOperator:
    """
    The multiplier (x, g) -> ((b - a) M11 x + int M12 g, M21 x + M22 g(s)) for a
    symmetric (possibly affine) Gram tensor of shape (size, size, channels).
    Nonnegative whenever M is.
    """
    a, b = interval
    size = gram.size(0)
    n = size - m

    def part(t: Tensor, vars) -> PolyMatrix:
        return PolyMatrix(t.reshape(1, 1, *t.shape), interval, vars)
    return PIOperator.from_parts((m, n), (m, n), interval, P=part((b - a) * gram[:m, :m], ()),
                                 Q1=part(gram[:m, m:], (S,)), Q2=part(gram[m:, :m], (S,)),
                                 R0=part(gram[m:, m:], (S,)))


def _gram_operator(dims: Dims, degree: int, interval,
                   multiplier: Optional[Sequence[int]] = None) -> Tuple[PIOperator, int]:
    """Z_d* M Z_d with M a symmetric matrix of fresh local scalars; returns (op, size)."""
    basis = monomial_basis_operator(dims, degree, interval, multiplier)
    size = basis.dims_out[0] + basis.dims_out[1]
    count = size * (size + 1) // 2
    # one-hot channels: M[i, j] is local scalar index[i, j], channel 0 stays empty.
    gram = torch.eye(count + 1, dtype=DTYPE)[_gram_index(size) + 1]
    multiplier = gram_multiplier(dims[0], gram, interval)
    return basis.adjoint().compose(multiplier.compose(basis)), size


def pointwise_components(expr: PIOperator) -> List[int]:
    """Components j with R0[j, j] not identically zero in some channel."""
    n = expr.dims_in[1]
    diagonal = torch.diagonal(expr.R0.coeffs, dim1=2, dim2=3)
    return [j for j in range(n) if bool((diagonal[..., j] != 0).any())]


def required_slack_degree(expr: PIOperator) -> int:
    """Smallest d whose Gram slack Z_d* M Z_d reaches the degrees of expr."""
    if expr.dims_in[1] == 0:
        return 0
    q1 = expr.Q1.trim()
    r0 = expr.R0.trim()
    r1 = expr.R1.trim()
    r2 = expr.R2.trim()
    return max(0, q1.degree_s - 1, math.ceil(r0.degree_s / 2), r1.degree_s - 1, r1.degree_theta - 1,
               r2.degree_s - 1, r2.degree_theta - 1)


class LpiProgram:
    """Builder for an LPI: decision variables, operator constraints and a linear objective."""

    def __init__(self, interval, options: Optional[LpiOptions] = None):
        self.interval = (float(interval[0]), float(interval[1]))
        self.options = default(options, LpiOptions())
        self.num_scalars = 0
        self.grams: List[GramBlock] = []
        self.equalities: List[EqualityConstraint] = []
        self.variables: Dict[str, Variable] = {}
        self.objective: List[Tuple[int, float]] = []

    def _claim(self, count: int) -> int:
        offset = self.num_scalars
        self.num_scalars += count
        return offset

    def _register(self, name: str, variable: Variable) -> Variable:
        assert name not in self.variables, f"variable {name!r} is already declared"
        self.variables[name] = variable
        return variable

    def _unique(self, prefix: str) -> str:
        k = len(self.variables) + len(self.grams)
        return f"{prefix}{k}"

    def declare_scalar(self, name: Optional[str] = None) -> ScalarVariable:
        name = default(name, self._unique("scalar"))
        return self._register(name, ScalarVariable(name, self._claim(1)))

    def declare_free_pi(self, dims_in: Dims, dims_out: Dims, degree: int, name: Optional[str] = None) -> DecisionPI:
        """Every kernel coefficient up to the given degree is an independent scalar."""
        assert degree >= 0, "degree must be non-negative"
        name = default(name, self._unique("free"))
        (m_in, n_in), (m_out, n_out) = dims_in, dims_out
        shapes = {"P": (1, 1, m_out, m_in), "Q1": (degree + 1, 1, m_out, n_in),
                  "Q2": (degree + 1, 1, n_out, m_in), "R0": (degree + 1, 1, n_out, n_in),
                  "R1": (degree + 1, degree + 1, n_out, n_in), "R2": (degree + 1, degree + 1, n_out, n_in)}
        vars = {"P": (), "Q1": (S,), "Q2": (S,), "R0": (S,), "R1": (S, THETA), "R2": (S, THETA)}
        start = self.num_scalars
        parts = {}
        for name_part in PART_NAMES:
            shape = shapes[name_part]
            count = math.prod(shape)
            if count == 0:
                parts[name_part] = PolyMatrix.zeros(shape[2], shape[3], self.interval, vars[name_part])
                continue
            offset = self._claim(count)
            parts[name_part] = PolyMatrix(_fresh_channels(shape, offset), self.interval, vars[name_part])
        op = PIOperator(**parts)
        logger.debug("free PI variable %s: %s, %d scalars", name, op, self.num_scalars - start)
        return self._register(name, DecisionPI(name, op, degree, (start, self.num_scalars)))

    def _declare_gram(self, dims: Dims, degree: int, name: str,
                      multiplier: Optional[Sequence[int]] = None) -> Tuple[PIOperator, GramBlock]:
        local, size = _gram_operator(dims, degree, self.interval, multiplier)
        gram = GramBlock(name, self.num_scalars, size, dims, degree,
                         tuple(multiplier) if exists(multiplier) else None)
        self._claim(gram.count)
        self.grams.append(gram)
        return _shift_channels(local, gram.offset), gram

    def declare_pos_pi(self, dims: Dims, degree: Optional[int] = None, coercive: bool = True,
                       name: Optional[str] = None) -> PosPIVariable:
        """P = Z_d* M Z_d (+ delta I when coercive), self-adjoint by construction."""
        degree = default(degree, self.options.degree)
        assert degree >= 0, "degree must be non-negative"
        if degree > self.options.warn_degree:
            logger.warning("degree %d uses the raw monomial basis and may be ill-conditioned", degree)
        name = default(name, self._unique("pos"))
        start = self.num_scalars
        op, gram = self._declare_gram(dims, degree, f"{name}_gram")
        delta = self.options.delta if coercive else 0.0
        if delta:
            op = op.add(PIOperator.identity(dims, self.interval).scale(delta))
        decision = DecisionPI(name, op, degree, (start, self.num_scalars))
        return self._register(name, PosPIVariable(name, dims, degree, gram, delta, decision))

    def set_objective(self, terms: Union[ScalarVariable, Sequence[Tuple[ScalarVariable, float]]]):
        """Minimise a linear combination of decision scalars."""
        if isinstance(terms, ScalarVariable):
            terms = [(terms, 1.0)]
        self.objective = [(var.index, float(weight)) for var, weight in terms]

    def constrain_equal(self, expr: PIOperator, name: Optional[str] = None):
        self.equalities.append(EqualityConstraint(default(name, f"eq{len(self.equalities)}"), expr, False))

    def constrain_negative(self, expr: PIOperator, epsilon_op: Optional[PIOperator] = None,
                           name: Optional[str] = None) -> GramBlock:
        """
        Enforce expr + epsilon_op <= 0 through -(expr + epsilon_op) = Z_d'* M' Z_d' with a
        fresh Gram block M' >= 0. The slack degree d' is the smallest that reaches
        the degrees of the expression. Components whose multiplier diagonal
        vanishes identically get no pointwise rows in Z_d', since any Gram
        representation must be zero there.
        """
        if not expr.is_square:
            raise ShapeMismatchError(f"operator inequality needs a square expression, got {expr}")
        if exists(epsilon_op):
            expr = expr.add(epsilon_op)
        name = default(name, f"ineq{len(self.equalities)}")
        scale = max([p.max_abs_coefficient() for p in expr.parts.values()] + [1.0])
        expr = expr.trim(1e-13 * scale)
        degree = required_slack_degree(expr)
        budget = self.options.resolved_max_slack_degree
        if degree > budget:
            raise DegreeBudgetError(f"inequality {name} needs slack degree {degree}, above the budget {budget}",
                                    degree)
        if degree > slack_degree_for(self.options.warn_degree):
            logger.warning("inequality %s needs slack degree %d; the monomial basis may be ill-conditioned",
                           name, degree)
        multiplier = pointwise_components(expr)
        slack, gram = self._declare_gram(expr.dims_in, degree, f"{name}_slack", multiplier)
        self.equalities.append(EqualityConstraint(name, expr.add(slack), True))
        logger.debug("inequality %s on %s: slack degree %d, Gram size %d, pointwise components %s",
                     name, expr.dims_in, degree, gram.size, multiplier)
        return gram

    def constrain_positive(self, expr: PIOperator, name: Optional[str] = None) -> GramBlock:
        return self.constrain_negative(expr.neg(), name=name)


# compilation

def _coefficient_rows(constraint: EqualityConstraint, width: int) -> Tensor:
    """Rows [const, coefficients of x] of every coefficient that must vanish."""
    rows = []
    for name, p in constraint.expr.parts.items():
        if constraint.symmetric and name in ("Q2", "R2"):
            continue
        c = p.with_channels(max(width, p.channels)).coeffs
        if constraint.symmetric and name in ("P", "R0"):
            upper = torch.ones(p.rows, p.cols, dtype=torch.bool).triu()
            selected = c[:, :, upper]
        else:
            selected = c
        rows.append(selected.reshape(-1, c.size(-1)))
    table = torch.cat(rows) if rows else torch.zeros(0, width, dtype=DTYPE)
    return table[table.abs().amax(dim=1) > 0] if table.numel() else table


@dataclass
class CompiledLpi:
    problem: SdpProblem
    x0: Tensor
    nullspace: Tensor
    # x-space objective before elimination.
    objective: Tensor
    consistent: bool
    equality_residual: float
    equality_rows: int
    # (name, start, stop) row ranges of each equality constraint.
    row_ranges: List[Tuple[str, int, int]]
    equality_matrix: Tensor
    equality_rhs: Tensor
    # False when the objective is unbounded below along directions no Gram block sees.
    bounded: bool = True

    def expand(self, z: Tensor) -> Tensor:
        return self.x0 + self.nullspace @ z

    @property
    def block_sizes(self) -> List[int]:
        return self.problem.block_sizes


def compile(prog: LpiProgram) -> CompiledLpi:
    """Flatten an LPI program into an SdpProblem in the eliminated variables z."""
    p = prog.num_scalars
    width = p + 1
    tables, ranges, start = [], [], 0
    for constraint in prog.equalities:
        table = _coefficient_rows(constraint, width)
        if table.size(1) != width:
            raise ShapeMismatchError(f"constraint {constraint.name} refers to undeclared decision scalars")
        tables.append(table)
        ranges.append((constraint.name, start, start + table.size(0)))
        start += table.size(0)
    table = torch.cat(tables) if tables else torch.zeros(0, width, dtype=DTYPE)
    A, rhs = table[:, 1:], -table[:, 0]

    objective = torch.zeros(p, dtype=DTYPE)
    for index, weight in prog.objective:
        objective[index] += weight

    consistent, residual = True, 0.0
    if A.size(0) and p:
        U, sigma, Vh = torch.linalg.svd(A, full_matrices=True)
        rank = int((sigma > prog.options.rank_tolerance * sigma.max()).sum()) if sigma.numel() else 0
        x0 = Vh[:rank].T @ ((U[:, :rank].T @ rhs) / sigma[:rank])
        nullspace = Vh[rank:].T.contiguous()
        residual = float((A @ x0 - rhs).abs().max())
        consistent = residual <= prog.options.equality_tolerance * max(1.0, float(rhs.abs().max()))
    else:
        x0 = torch.zeros(p, dtype=DTYPE)
        nullspace = torch.eye(p, dtype=DTYPE)
        if A.size(0):
            residual = float(rhs.abs().max())
            consistent = residual <= prog.options.equality_tolerance

    scalings = [gram_scaling(gram, prog.interval) for gram in prog.grams]

    def gram_images(directions: Tensor) -> List[Tensor]:
        """Legendre-basis Gram matrices W^T M W of x0 (first slice) and of every direction."""
        images = []
        for gram, W in zip(prog.grams, scalings):
            index = _gram_index(gram.size) + gram.offset
            stacked = torch.cat([-x0[index].unsqueeze(0), rearrange(directions[index], "a b q -> q a b")])
            images.append(torch.einsum("ak,qab,bl->qkl", W, stacked, W))
        return images

    # keep the directions that move some Gram block, whitened so their images are orthonormal.
    bounded = True
    if prog.grams and nullspace.size(1):
        images = torch.cat([image[1:].reshape(image.size(0) - 1, -1) for image in gram_images(nullspace)], dim=1)
        _, sigma, Vh = torch.linalg.svd(images.T, full_matrices=True)
        kept = int((sigma > prog.options.rank_tolerance * sigma.max()).sum()) if sigma.numel() else 0
        dropped = nullspace @ Vh[kept:].T
        bounded = not dropped.numel() or \
            float((objective @ dropped).abs().max()) <= prog.options.rank_tolerance * max(1.0, float(objective.norm()))
        nullspace = nullspace @ (Vh[:kept].T / sigma[:kept])
    elif not prog.grams:
        bounded = not nullspace.size(1) or float((objective @ nullspace).abs().max()) == 0.0
        nullspace = nullspace[:, :0]

    blocks = gram_images(nullspace)
    problem = SdpProblem(c=nullspace.T @ objective, blocks=blocks, diagonal=tuple(b.size(1) == 1 for b in blocks),
                         objective_offset=float(objective @ x0))
    logger.info("compiled LPI: %d scalars, %d equalities, %d free directions, Gram blocks %s",
                p, A.size(0), nullspace.size(1), [g.size for g in prog.grams])
    if not consistent:
        logger.info("coefficient-matching equalities are inconsistent (residual %.3g)", residual)
    if not bounded:
        logger.info("the objective decreases along a direction no constraint sees")
    return CompiledLpi(problem=problem, x0=x0, nullspace=nullspace, objective=objective, consistent=consistent,
                       equality_residual=residual, equality_rows=A.size(0), row_ranges=ranges,
                       equality_matrix=A, equality_rhs=rhs, bounded=bounded)


@dataclass
class LpiResult:
    status: str
    x: Tensor
    values: Dict[str, object]
    equality_residuals: Dict[str, float]
    gram_min_eigenvalues: Dict[str, float]
    objective: Optional[float]
    solution: SdpSolution
    compiled: CompiledLpi

    @property
    def max_equality_residual(self) -> float:
        return max(list(self.equality_residuals.values()) + [0.0])

    @property
    def min_gram_eigenvalue(self) -> float:
        return min(list(self.gram_min_eigenvalues.values()) + [math.inf])


def recover(prog: LpiProgram, compiled: CompiledLpi, solution: SdpSolution) -> LpiResult:
    """Substitute the solved decision scalars back into every declared variable."""
    if solution.status == NUMERICAL_FAILURE:
        raise SolverFailureError(f"the SDP solver failed: {solution.message}", solution.diagnostics())
    if not solution.succeeded:
        raise InfeasibleError("the LPI has no solution", solution.status, solution)
    x = compiled.expand(solution.x)
    violation = (compiled.equality_matrix @ x - compiled.equality_rhs).abs() \
        if compiled.equality_rows else torch.zeros(0, dtype=DTYPE)
    residuals = {name: float(violation[lo:hi].max()) if hi > lo else 0.0 for name, lo, hi in compiled.row_ranges}
    eigenvalues = {gram.name: float(torch.linalg.eigvalsh(gram.matrix(x))[0]) for gram in prog.grams}
    values = {name: var.value(x) for name, var in prog.variables.items()}
    objective = float(compiled.objective @ x) if prog.objective else None
    logger.info("recovered LPI solution: status %s, max coefficient mismatch %.3g, min Gram eigenvalue %.3g",
                solution.status, max(list(residuals.values()) + [0.0]),
                min(list(eigenvalues.values()) + [math.inf]))
    return LpiResult(status=solution.status, x=x, values=values, equality_residuals=residuals,
                     gram_min_eigenvalues=eigenvalues, objective=objective, solution=solution, compiled=compiled)


def solve_program(prog: LpiProgram) -> LpiResult:
    """compile, solve and recover; raises InfeasibleError when no solution exists."""
    compiled = compile(prog)
    if not compiled.consistent:
        raise InfeasibleError("coefficient-matching equalities are inconsistent", INFEASIBLE)
    if not compiled.bounded:
        raise SolverFailureError("the LPI objective is unbounded below", {"bounded": False})
    solution = solve(compiled.problem, prog.options.solver)
    return recover(prog, compiled, solution)


# functional aliases

def declare_pos_pi(prog: LpiProgram, dims: Dims, degree: Optional[int] = None, coercive: bool = True,
                   name: Optional[str] = None) -> PosPIVariable:
    return prog.declare_pos_pi(dims, degree, coercive, name)


def declare_free_pi(prog: LpiProgram, dims_in: Dims, dims_out: Dims, degree: int,
                    name: Optional[str] = None) -> DecisionPI:
    return prog.declare_free_pi(dims_in, dims_out, degree, name)


def declare_scalar(prog: LpiProgram, name: Optional[str] = None) -> ScalarVariable:
    return prog.declare_scalar(name)


def set_objective(prog: LpiProgram, terms) -> None:
    prog.set_objective(terms)


def constrain_negative(prog: LpiProgram, expr: PIOperator, epsilon_op: Optional[PIOperator] = None,
                       name: Optional[str] = None) -> GramBlock:
    return prog.constrain_negative(expr, epsilon_op, name)
