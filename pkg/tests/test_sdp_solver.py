import pytest
import torch

from fixtures import *
from pie_pytorch.exceptions import ShapeMismatchError
from pie_pytorch.sdp_solver import FEASIBLE, INFEASIBLE, NUMERICAL_FAILURE, OPTIMAL, SdpProblem, SolverOptions, \
    block_diagonal_problem, margin_problem, residuals, solve


def lower_bound_problem():
    # minimise x subject to x - 1 >= 0
    return block_diagonal_problem([1.0], [[[[1.0]], [[1.0]]]])


def contradicting_problem():
    # x - 1 >= 0 and -x >= 0
    return block_diagonal_problem([1.0], [[[[1.0]], [[1.0]]], [[[0.0]], [[-1.0]]]])


@pytest.mark.parametrize("seed", range(SEED, SEED + 20))
def test_sign_convention_under_random_starts(seed):
    options = SolverOptions(seed=seed)
    solution = solve(lower_bound_problem(), options)
    assert solution.status == OPTIMAL
    assert abs(float(solution.x[0]) - 1.0) < 1e-6
    assert solve(contradicting_problem(), options).status == INFEASIBLE


def test_two_by_two_lmi():
    # minimise x1 + x2 subject to [[x1, 1], [1, x2]] >= 0
    F0 = torch.tensor([[0.0, -1.0], [-1.0, 0.0]], dtype=DTYPE)
    F1 = torch.tensor([[1.0, 0.0], [0.0, 0.0]], dtype=DTYPE)
    F2 = torch.tensor([[0.0, 0.0], [0.0, 1.0]], dtype=DTYPE)
    solution = solve(block_diagonal_problem([1.0, 1.0], [[F0, F1, F2]]))
    assert solution.status == OPTIMAL
    assert abs(solution.primal_objective - 2.0) < 1e-6
    assert torch.allclose(solution.x, torch.ones(2, dtype=DTYPE), atol=1e-5)


def test_largest_eigenvalue(generator):
    A = torch.randn(4, 4, dtype=DTYPE, generator=generator)
    A = A + A.T
    # minimise t subject to t I - A >= 0
    solution = solve(block_diagonal_problem([1.0], [[A, torch.eye(4, dtype=DTYPE)]]))
    assert solution.status == OPTIMAL
    assert abs(float(solution.x[0]) - float(torch.linalg.eigvalsh(A)[-1])) < 1e-6


def test_residuals_are_recomputed_from_the_variables():
    problem = lower_bound_problem()
    solution = solve(problem)
    report = residuals(problem, solution)
    assert report.primal_residual <= 1e-8
    assert report.dual_residual <= 1e-8
    assert report.gap <= 1e-8
    assert report.min_eigenvalue_X > -1e-10 and report.min_eigenvalue_Y > -1e-10


def test_objective_offset_is_reported():
    problem = lower_bound_problem()
    problem.objective_offset = 3.0
    solution = solve(problem)
    assert abs(solution.primal_objective - 4.0) < 1e-6


def test_feasibility_problems_stop_at_a_feasible_point():
    problem = block_diagonal_problem([0.0], [[[[1.0]], [[1.0]]]])
    solution = solve(problem)
    assert solution.status in (FEASIBLE, OPTIMAL)
    assert float(problem.constraint_value(solution.x)[0].min()) > -1e-7


def test_unconstrained_objectives_are_unbounded():
    solution = solve(SdpProblem(c=[1.0], blocks=[]))
    assert solution.status == NUMERICAL_FAILURE
    assert solve(SdpProblem.empty()).status == OPTIMAL


def test_block_shapes_are_checked():
    with pytest.raises(ShapeMismatchError):
        SdpProblem(c=[1.0, 2.0], blocks=[torch.zeros(2, 3, 3, dtype=DTYPE)])
    with pytest.raises(ShapeMismatchError):
        SdpProblem(c=[1.0], blocks=[torch.zeros(2, 2, 3, dtype=DTYPE)])
    with pytest.raises(ShapeMismatchError):
        SdpProblem(c=[1.0], blocks=[torch.full((2, 1, 1), float("nan"), dtype=DTYPE)])


def test_diagonal_blocks_match_dense_blocks():
    # minimise x1 + x2 subject to diag(x1 - 1, x2 - 2) >= 0
    F = torch.stack([torch.diag(torch.tensor(d, dtype=DTYPE)) for d in ([1.0, 2.0], [1.0, 0.0], [0.0, 1.0])])
    dense = solve(SdpProblem(c=[1.0, 1.0], blocks=[F]))
    diagonal = solve(SdpProblem(c=[1.0, 1.0], blocks=[F], diagonal=(True,)))
    assert dense.status == diagonal.status == OPTIMAL
    assert abs(diagonal.primal_objective - 3.0) < 1e-6
    assert torch.allclose(dense.x, diagonal.x, atol=1e-6)


def test_diagonal_flags_are_checked():
    with pytest.raises(ShapeMismatchError):
        SdpProblem(c=[1.0], blocks=[torch.ones(2, 2, 2, dtype=DTYPE)], diagonal=(True,))
    with pytest.raises(ShapeMismatchError):
        SdpProblem(c=[1.0], blocks=[torch.ones(2, 1, 1, dtype=DTYPE)], diagonal=(True, False))


def test_margin_problem_appends_the_identity():
    augmented = margin_problem(contradicting_problem())
    assert augmented.num_vars == 2
    assert torch.equal(augmented.c, torch.tensor([0.0, 1.0], dtype=DTYPE))
    assert all(torch.equal(F[-1], torch.eye(1, dtype=DTYPE)) for F in augmented.blocks)


def test_rays_are_reported_as_unbounded():
    # minimise -x subject to x >= 0
    solution = solve(block_diagonal_problem([-1.0], [[[[0.0]], [[1.0]]]]))
    assert solution.status == NUMERICAL_FAILURE
    assert "unbounded" in solution.message


def test_both_phases_are_recorded():
    solution = solve(lower_bound_problem())
    phases = {record["phase"] for record in solution.history}
    assert phases == {1, 2}


def test_feasibility_problems_have_a_strict_margin(generator):
    # x I + A >= 0 with A positive semidefinite
    A = torch.randn(5, 5, dtype=DTYPE, generator=generator)
    A = A @ A.T
    problem = block_diagonal_problem([0.0], [[-A, torch.eye(5, dtype=DTYPE)]])
    solution = solve(problem)
    assert solution.status == FEASIBLE
    assert float(torch.linalg.eigvalsh(problem.constraint_value(solution.x)[0])[0]) > 0
