"""
Dense primal-dual interior point solver for block-diagonal SDPs in SDPA form

    minimise    c^T x
    subject to  X = sum_i x_i F_i - F0 >= 0          (primal)

    maximise    F0 . Y
    subject to  F_i . Y = c_i,  Y >= 0               (dual)

Each block b stores its data as one tensor of shape (p + 1, n_b, n_b) whose
slice 0 is F0 and slice i is F_i. Blocks flagged diagonal hold diagonal
matrices only and are handled entrywise.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
from torch import Tensor

from pie_pytorch.common import DTYPE, default, exists, make_generator
from pie_pytorch.exceptions import ShapeMismatchError

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"
STATUSES = (OPTIMAL, FEASIBLE, INFEASIBLE, NUMERICAL_FAILURE)

# phase one keeps going this many iterations past the first feasible point when there is an objective.
PHASE_ONE_EXTRA = 5
APPROXIMATE_DUAL_TOLERANCE = 1e-6


@dataclass
class SdpProblem:
    c: Tensor
    blocks: List[Tensor]
    # diagonal blocks are written with negative sizes in SDPA files.
    diagonal: Tuple[bool, ...] = ()
    objective_offset: float = 0.0

    def __post_init__(self):
        self.c = torch.as_tensor(self.c, dtype=DTYPE).reshape(-1)
        p = self.c.numel()
        self.blocks = [torch.as_tensor(F, dtype=DTYPE) for F in self.blocks]
        for k, F in enumerate(self.blocks):
            if F.dim() != 3 or F.size(0) != p + 1 or F.size(1) != F.size(2):
                raise ShapeMismatchError(f"block {k} must have shape ({p + 1}, n, n), got {tuple(F.shape)}")
            if F.size(1) == 0:
                raise ShapeMismatchError(f"block {k} is empty")
            if not torch.isfinite(F).all():
                raise ShapeMismatchError(f"block {k} has non-finite entries")
        if not self.diagonal:
            self.diagonal = tuple(False for _ in self.blocks)
        self.diagonal = tuple(bool(d) for d in self.diagonal)
        if len(self.diagonal) != len(self.blocks):
            raise ShapeMismatchError(f"{len(self.diagonal)} diagonal flags for {len(self.blocks)} blocks")
        for k, (F, diagonal) in enumerate(zip(self.blocks, self.diagonal)):
            if diagonal and bool((F - torch.diag_embed(torch.diagonal(F, dim1=1, dim2=2)) != 0).any()):
                raise ShapeMismatchError(f"block {k} is flagged diagonal but has off-diagonal entries")

    @property
    def num_vars(self) -> int:
        return self.c.numel()

    @property
    def block_sizes(self) -> List[int]:
        return [F.size(1) for F in self.blocks]

    def constraint_value(self, x: Tensor) -> List[Tensor]:
        """sum_i x_i F_i - F0, per block."""
        return [torch.einsum("i,iab->ab", x, F[1:]) - F[0] for F in self.blocks]

    @staticmethod
    def empty() -> "SdpProblem":
        return SdpProblem(c=torch.zeros(0, dtype=DTYPE), blocks=[])


@dataclass(frozen=True)
class SolverOptions:
    gap_tolerance: float = 1e-8
    feasibility_tolerance: float = 1e-8
    infeasibility_tolerance: float = 1e-8
    max_iterations: int = 200
    stall_window: int = 20
    step_fraction: float = 0.95
    initial_scale: Optional[float] = None
    # stop as soon as a strictly feasible point is found when there is no objective.
    stop_when_feasible: bool = True
    seed: Optional[int] = None


@dataclass
class SdpSolution:
    status: str
    x: Tensor
    X: List[Tensor]
    Y: List[Tensor]
    primal_objective: float
    dual_objective: float
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    message: str = ""
    history: List[dict] = field(default_factory=list)

    @property
    def succeeded(self) -> bool:
        return self.status in (OPTIMAL, FEASIBLE)

    def diagnostics(self) -> dict:
        return dict(status=self.status, iterations=self.iterations, gap=self.gap,
                    primal_residual=self.primal_residual, dual_residual=self.dual_residual,
                    primal_objective=self.primal_objective, dual_objective=self.dual_objective,
                    message=self.message)


def _inner(A: Tensor, B: Tensor) -> Tensor:
    return (A * B).sum()


def _sym(A: Tensor) -> Tensor:
    return (A + A.transpose(-1, -2)) / 2


def _inverse(X: Tensor, diagonal: bool) -> Tensor:
    if diagonal:
        d = torch.diagonal(X)
        if not bool((d > 0).all()):
            raise RuntimeError("diagonal block is not positive definite")
        return torch.diag(1.0 / d)
    return torch.cholesky_inverse(torch.linalg.cholesky(X))


def _max_step(X: Tensor, dX: Tensor, diagonal: bool = False) -> float:
    """Largest alpha with X + alpha dX positive semidefinite."""
    if diagonal:
        smallest = float((torch.diagonal(dX) / torch.diagonal(X)).min())
    else:
        L = torch.linalg.cholesky(X)
        inner = torch.linalg.solve_triangular(L, dX, upper=False)
        inner = torch.linalg.solve_triangular(L, inner.transpose(0, 1), upper=False)
        smallest = float(torch.linalg.eigvalsh(_sym(inner))[0])
    return math.inf if smallest >= 0 else -1.0 / smallest


def _positive_definite(blocks: List[Tensor]) -> bool:
    return all(int(torch.linalg.cholesky_ex(_sym(B))[1]) == 0 for B in blocks)


def _smallest_eigenvalue(blocks: List[Tensor]) -> float:
    return min([float(torch.linalg.eigvalsh(_sym(B))[0]) for B in blocks] + [math.inf])


@dataclass
class _Scales:
    primal: float
    dual: float

    @staticmethod
    def of(problem: SdpProblem) -> "_Scales":
        return _Scales(primal=max([float(F[0].abs().max()) for F in problem.blocks] + [0.0]),
                       dual=float(problem.c.abs().max()) if problem.num_vars else 0.0)


class _Iterate:
    def __init__(self, problem: SdpProblem, x: Tensor, X: List[Tensor], Y: List[Tensor], scales: _Scales):
        self.problem = problem
        self.x, self.X, self.Y = x, X, Y
        self.scales = scales
        self.values = problem.constraint_value(x)
        self.primal_residual_blocks = [value - X_b for value, X_b in zip(self.values, X)]
        self.dual_residual = problem.c - self.dual_map(Y)
        self.primal_objective = float(problem.c @ x) if problem.num_vars else 0.0
        self.dual_objective = float(sum(_inner(F[0], Y_b) for F, Y_b in zip(problem.blocks, Y))) \
            if problem.blocks else 0.0
        self.dimension = sum(problem.block_sizes)
        self.mu = float(sum(_inner(X_b, Y_b) for X_b, Y_b in zip(X, Y))) / max(self.dimension, 1)

    def dual_map(self, Y: List[Tensor]) -> Tensor:
        out = torch.zeros(self.problem.num_vars, dtype=DTYPE)
        for F, Y_b in zip(self.problem.blocks, Y):
            out = out + torch.einsum("iab,ab->i", F[1:], Y_b)
        return out

    @property
    def primal_infeasibility(self) -> float:
        worst = max([float(R.abs().max()) for R in self.primal_residual_blocks] + [0.0])
        return worst / (1.0 + self.scales.primal)

    @property
    def dual_infeasibility(self) -> float:
        worst = float(self.dual_residual.abs().max()) if self.problem.num_vars else 0.0
        return worst / (1.0 + self.scales.dual)

    @property
    def relative_gap(self) -> float:
        p, d = self.primal_objective, self.dual_objective
        return abs(p - d) / max(1.0, abs(p), abs(d))

    @property
    def merit(self) -> float:
        return max(self.primal_infeasibility, self.dual_infeasibility, self.relative_gap)

    def converged(self, options: "SolverOptions") -> bool:
        return self.primal_infeasibility <= options.feasibility_tolerance and \
            self.dual_infeasibility <= options.feasibility_tolerance and self.relative_gap <= options.gap_tolerance


class _Newton:
    """Schur complement system of the HKM direction at one iterate."""

    def __init__(self, it: _Iterate):
        self.it = it
        problem = it.problem
        p = problem.num_vars
        self.X_inv = [_inverse(X_b, diagonal) for X_b, diagonal in zip(it.X, problem.diagonal)]
        schur = torch.zeros(p, p, dtype=DTYPE)
        for F, X_inv, Y_b, diagonal in zip(problem.blocks, self.X_inv, it.Y, problem.diagonal):
            if diagonal:
                F_d = torch.diagonal(F[1:], dim1=1, dim2=2)
                schur = schur + (F_d * (torch.diagonal(X_inv) * torch.diagonal(Y_b))) @ F_d.T
            else:
                G = X_inv @ F[1:] @ Y_b
                schur = schur + torch.einsum("iab,jba->ij", F[1:], G)
        self.schur = _sym(schur)
        self.factor = None
        if p:
            self.factor, info = torch.linalg.cholesky_ex(self.schur)
            if int(info) != 0:
                shift = 1e-12 * max(float(torch.diagonal(self.schur).abs().max()), 1.0)
                self.factor, info = torch.linalg.cholesky_ex(self.schur + shift * torch.eye(p, dtype=DTYPE))
                if int(info) != 0:
                    raise RuntimeError("Schur complement is not positive definite")

    def direction(self, complementarity: List[Tensor]):
        it = self.it
        problem = it.problem
        p = problem.num_vars
        rhs = -it.dual_residual.clone()
        for F, X_inv, R_c, R_p, Y_b in zip(problem.blocks, self.X_inv, complementarity,
                                           it.primal_residual_blocks, it.Y):
            rhs = rhs + torch.einsum("iab,ba->i", F[1:], X_inv @ (R_c - R_p @ Y_b))
        dx = torch.cholesky_solve(rhs.reshape(-1, 1), self.factor).reshape(-1) if p else rhs
        dX, dY = [], []
        for F, X_inv, R_c, R_p, Y_b in zip(problem.blocks, self.X_inv, complementarity,
                                           it.primal_residual_blocks, it.Y):
            dX_b = R_p + torch.einsum("i,iab->ab", dx, F[1:])
            dX.append(_sym(dX_b))
            dY.append(_sym(X_inv @ (R_c - dX_b @ Y_b)))
        return dx, dX, dY


def _max_steps(it: _Iterate, dX: List[Tensor], dY: List[Tensor]) -> Tuple[float, float]:
    diagonal = it.problem.diagonal
    alpha_p = min([_max_step(X_b, dX_b, d) for X_b, dX_b, d in zip(it.X, dX, diagonal)] + [math.inf])
    alpha_d = min([_max_step(Y_b, dY_b, d) for Y_b, dY_b, d in zip(it.Y, dY, diagonal)] + [math.inf])
    return alpha_p, alpha_d


def _step(it: _Iterate, options: SolverOptions):
    """One Mehrotra predictor-corrector step; returns the next iterate, the direction dx and step data."""
    problem = it.problem
    newton = _Newton(it)
    identity = [torch.eye(n, dtype=DTYPE) for n in problem.block_sizes]
    # predictor
    xy = [X_b @ Y_b for X_b, Y_b in zip(it.X, it.Y)]
    _, dX_a, dY_a = newton.direction([-m for m in xy])
    alpha_p, alpha_d = (min(1.0, a) for a in _max_steps(it, dX_a, dY_a))
    mu_aff = float(sum(_inner(X_b + alpha_p * dXb, Y_b + alpha_d * dYb)
                       for X_b, dXb, Y_b, dYb in zip(it.X, dX_a, it.Y, dY_a))) / it.dimension
    sigma = min(1.0, max(0.0, mu_aff / it.mu)) ** 3 if it.mu > 0 else 0.0
    # corrector
    target = [sigma * it.mu * I - m - dXb @ dYb for I, m, dXb, dYb in zip(identity, xy, dX_a, dY_a)]
    dx, dX, dY = newton.direction(target)
    reach_p, reach_d = _max_steps(it, dX, dY)
    alpha_p = min(1.0, options.step_fraction * reach_p)
    alpha_d = min(1.0, options.step_fraction * reach_d)
    following = _Iterate(problem, it.x + alpha_p * dx,
                         [X_b + alpha_p * dXb for X_b, dXb in zip(it.X, dX)],
                         [Y_b + alpha_d * dYb for Y_b, dYb in zip(it.Y, dY)], it.scales)
    record = dict(mu=it.mu, sigma=sigma, alpha_p=alpha_p, alpha_d=alpha_d, primal=it.primal_infeasibility,
                  dual=it.dual_infeasibility, gap=it.relative_gap)
    return following, dx, math.isinf(reach_p), record


def _start_x(problem: SdpProblem, options: SolverOptions) -> Tuple[Tensor, float]:
    """Starting x and the margin added to its constraint value for phase one."""
    data_scale = max([float(F[0].abs().max()) for F in problem.blocks] + [1.0])
    margin = default(options.initial_scale, data_scale)
    x = torch.zeros(problem.num_vars, dtype=DTYPE)
    if exists(options.seed):
        generator = make_generator(options.seed)
        x = torch.randn(problem.num_vars, dtype=DTYPE, generator=generator)
        margin = margin * float(1.0 + torch.rand((), dtype=DTYPE, generator=generator))
    return x, margin


def _centred_dual(X: List[Tensor], diagonal: Sequence[bool], weight: float) -> List[Tensor]:
    """Y = mu X^-1, scaled so that the total trace of Y is weight."""
    inverses = [_inverse(X_b, d) for X_b, d in zip(X, diagonal)]
    trace = sum(float(torch.trace(Y_b)) for Y_b in inverses)
    return [weight / trace * Y_b for Y_b in inverses]


def margin_problem(problem: SdpProblem) -> SdpProblem:
    """minimise t subject to sum_i x_i F_i + t I - F0 >= 0, with t the last variable."""
    blocks = [torch.cat([F, torch.eye(F.size(1), dtype=DTYPE).unsqueeze(0)]) for F in problem.blocks]
    c = torch.cat([torch.zeros(problem.num_vars, dtype=DTYPE), torch.ones(1, dtype=DTYPE)])
    return SdpProblem(c=c, blocks=blocks, diagonal=problem.diagonal)


@dataclass
class _PhaseOne:
    status: Optional[str]
    x: Optional[Tensor]
    iterate: _Iterate
    iterations: int
    message: str


def _phase_one(problem: SdpProblem, options: SolverOptions, has_objective: bool, history: List[dict]) -> _PhaseOne:
    """
    Minimise the margin t. A truly positive definite constraint value with
    t < 0 gives a strictly feasible x; a dual point with F0 . Y > 0 proves
    that none exists.
    """
    augmented = margin_problem(problem)
    x, margin = _start_x(problem, options)
    values = problem.constraint_value(x)
    t = max(0.0, -_smallest_eigenvalue(values)) + margin
    X = [value + t * torch.eye(value.size(0), dtype=DTYPE) for value in values]
    Y = _centred_dual(X, problem.diagonal, 1.0)
    it = _Iterate(augmented, torch.cat([x, torch.tensor([t], dtype=DTYPE)]), X, Y, _Scales.of(augmented))
    found: Optional[Tensor] = None
    found_at, best_merit, best_at = 0, math.inf, 0
    extra = 0 if not has_objective and options.stop_when_feasible else PHASE_ONE_EXTRA

    for iteration in range(options.max_iterations):
        t = float(it.x[-1])
        if t < 0 and _positive_definite(problem.constraint_value(it.x[:-1])):
            if found is None:
                found_at = iteration
                logger.info("sdp strictly feasible after %d iterations (margin %.3g)", iteration, -t)
            found = it.x[:-1]
            if iteration - found_at >= extra or -t >= margin:
                return _PhaseOne(FEASIBLE, found, it, iteration, "strictly feasible point found")
        if found is None:
            dual_certified = it.dual_infeasibility <= options.infeasibility_tolerance
            if dual_certified and it.dual_objective > options.infeasibility_tolerance * (1.0 + it.scales.primal):
                logger.info("sdp infeasible after %d iterations (margin bound %.3g)", iteration, it.dual_objective)
                return _PhaseOne(INFEASIBLE, None, it, iteration, "dual certificate of primal infeasibility")
            if it.converged(options):
                logger.info("sdp has no strictly feasible point: optimal margin %.3g", t)
                return _PhaseOne(INFEASIBLE, None, it, iteration, f"optimal margin {t:.3g} is not negative")
        merit = it.merit
        if merit < 0.999 * best_merit:
            best_merit, best_at = merit, iteration
        elif iteration - best_at >= options.stall_window:
            return _phase_one_stopped(found, it, iteration, f"no progress over {options.stall_window} iterations")
        try:
            it, _, _, record = _step(it, options)
        except RuntimeError as e:
            logger.warning("sdp phase one iteration %d failed: %s", iteration, e)
            return _phase_one_stopped(found, it, iteration, f"linear algebra failure: {e}")
        history.append(dict(record, phase=1, iteration=iteration, margin=t))
        logger.debug("phase 1 it %3d t %.3e mu %.3e ap %.3f ad %.3f dinf %.2e", iteration, t, record["mu"],
                     record["alpha_p"], record["alpha_d"], record["dual"])
    return _phase_one_stopped(found, it, options.max_iterations, "iteration limit reached")


def _phase_one_stopped(found: Optional[Tensor], it: _Iterate, iteration: int, reason: str) -> _PhaseOne:
    if exists(found):
        return _PhaseOne(FEASIBLE, found, it, iteration, "strictly feasible point found")
    # the dual bound is valid up to its residual.
    if it.dual_infeasibility <= APPROXIMATE_DUAL_TOLERANCE and it.dual_objective > 0:
        logger.info("sdp phase one stopped (%s) with margin bound %.3g > 0", reason, it.dual_objective)
        return _PhaseOne(INFEASIBLE, None, it, iteration, f"{reason}; approximate dual certificate")
    return _PhaseOne(NUMERICAL_FAILURE, None, it, iteration, reason)


def _phase_two(problem: SdpProblem, x: Tensor, options: SolverOptions, history: List[dict], start: int):
    """Predictor-corrector from a strictly feasible x, keeping the best truly feasible iterate."""
    X = [_sym(value) for value in problem.constraint_value(x)]
    scales = _Scales.of(problem)
    Y = _centred_dual(X, problem.diagonal, (1.0 + scales.dual) * sum(problem.block_sizes))
    it = _Iterate(problem, x, X, Y, scales)
    best = it
    best_merit, best_at = math.inf, 0

    for iteration in range(start, start + options.max_iterations):
        if it.converged(options):
            logger.info("sdp optimal after %d iterations, objective %.10g", iteration, it.primal_objective)
            return it, OPTIMAL, iteration, "converged"
        if it.primal_objective < -1e10 * (1.0 + scales.dual):
            return it, NUMERICAL_FAILURE, iteration, "primal objective unbounded below"
        merit = it.merit
        if merit < 0.999 * best_merit:
            best_merit, best_at = merit, iteration
        elif iteration - best_at >= options.stall_window:
            logger.info("sdp stopped after %d iterations without progress, keeping objective %.10g",
                        iteration, best.primal_objective)
            return best, FEASIBLE, iteration, f"no progress over {options.stall_window} iterations"
        try:
            following, dx, ray, record = _step(it, options)
        except RuntimeError as e:
            logger.warning("sdp iteration %d failed: %s", iteration, e)
            return best, FEASIBLE, iteration, f"linear algebra failure: {e}"
        if ray and it.primal_infeasibility <= options.feasibility_tolerance and float(problem.c @ dx) < 0:
            return it, NUMERICAL_FAILURE, iteration, "primal objective unbounded below along a ray"
        history.append(dict(record, phase=2, iteration=iteration))
        logger.debug("phase 2 it %3d mu %.3e sigma %.2e ap %.3f ad %.3f pinf %.2e dinf %.2e gap %.2e", iteration,
                     record["mu"], record["sigma"], record["alpha_p"], record["alpha_d"], record["primal"],
                     record["dual"], record["gap"])
        it = following
        if it.primal_objective <= best.primal_objective and _positive_definite(it.values):
            best = it
    return best, FEASIBLE, start + options.max_iterations, "iteration limit reached"


def _solution(it: _Iterate, status: str, iterations: int, message: str, history: List[dict]) -> SdpSolution:
    return SdpSolution(status=status, x=it.x, X=it.X, Y=it.Y, primal_objective=it.primal_objective
                       + it.problem.objective_offset, dual_objective=it.dual_objective + it.problem.objective_offset,
                       gap=it.relative_gap, primal_residual=it.primal_infeasibility,
                       dual_residual=it.dual_infeasibility, iterations=iterations, message=message,
                       history=history)


def solve(problem: SdpProblem, options: Optional[SolverOptions] = None) -> SdpSolution:
    """
    Two phases of Mehrotra predictor-corrector steps on the HKM-symmetrised
    Newton system. Phase one minimises a margin t with sum_i x_i F_i + t I - F0
    >= 0 from a strictly feasible start; phase two minimises c^T x from the
    strictly feasible point phase one finds.
    """
    options = default(options, SolverOptions())
    history: List[dict] = []
    has_objective = problem.num_vars > 0 and bool((problem.c != 0).any())

    if not problem.blocks:
        empty = _Iterate(problem, torch.zeros(problem.num_vars, dtype=DTYPE), [], [], _Scales.of(problem))
        if has_objective:
            return _solution(empty, NUMERICAL_FAILURE, 0, "objective is unbounded without constraints", history)
        return _solution(empty, OPTIMAL, 0, "no constraints", history)

    first = _phase_one(problem, options, has_objective, history)
    if first.status != FEASIBLE:
        it = first.iterate
        # report the margin problem's x without its margin.
        reported = _Iterate(problem, it.x[:-1], it.X, it.Y, _Scales.of(problem))
        return _solution(reported, first.status, first.iterations, first.message, history)
    if not has_objective and options.stop_when_feasible:
        x = first.x
        X = [_sym(value) for value in problem.constraint_value(x)]
        it = _Iterate(problem, x, X, [torch.zeros_like(X_b) for X_b in X], _Scales.of(problem))
        return _solution(it, FEASIBLE, first.iterations, first.message, history)

    it, status, iterations, message = _phase_two(problem, first.x, options, history, first.iterations)
    return _solution(it, status, iterations, message, history)


@dataclass
class ResidualReport:
    primal_residual: float
    dual_residual: float
    gap: float
    min_eigenvalue_X: float
    min_eigenvalue_Y: float


def residuals(problem: SdpProblem, solution: SdpSolution) -> ResidualReport:
    """Recompute the residuals of a returned solution from its variables alone."""
    it = _Iterate(problem, solution.x, solution.X, solution.Y, _Scales.of(problem))
    eig_x = min([float(torch.linalg.eigvalsh(X_b)[0]) for X_b in solution.X] + [math.inf])
    eig_y = min([float(torch.linalg.eigvalsh(Y_b)[0]) for Y_b in solution.Y] + [math.inf])
    return ResidualReport(primal_residual=it.primal_infeasibility, dual_residual=it.dual_infeasibility,
                          gap=it.relative_gap, min_eigenvalue_X=eig_x, min_eigenvalue_Y=eig_y)


def block_diagonal_problem(c: Sequence[float], blocks: Sequence[Sequence[Tensor]]) -> SdpProblem:
    """Convenience constructor: blocks[k] = [F0, F1, ..., Fp] for block k."""
    return SdpProblem(c=torch.as_tensor(c, dtype=DTYPE),
                      blocks=[torch.stack([torch.as_tensor(F, dtype=DTYPE) for F in block]) for block in blocks])
