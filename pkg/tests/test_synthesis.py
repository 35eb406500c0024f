import numpy as np
import pytest
import torch
from scipy.linalg import solve_continuous_lyapunov

from fixtures import *
from pie_pytorch.exceptions import DegreeBudgetError, ShapeMismatchError, SolverFailureError
from pie_pytorch.lpi import LpiOptions
from pie_pytorch.odepde import InputBlock, OdePdeSystem, builtin, diffusion_dirichlet, diffusion_neumann, \
    random_well_posed, scalar_ode
from pie_pytorch.pde2pie import convert, dualize
from pie_pytorch.pi_operator import ZFunction, to_finite
from pie_pytorch.simulate import IMPLICIT_EULER, SimConfig, disturbance_bank, empirical_gain, run
from pie_pytorch.synthesis import DUAL_STABILITY, GAIN, PRIMAL_STABILITY, Certificate, build_program, \
    check_certificate, check_stability_dual, compute_gain_bound, is_stable, lpi_operator, \
    stability_margin, synthesize_hinf, synthesize_stabilizing


def ode_system(A, B=None, C=None):
    n = A.size(0)
    if B is None:
        return OdePdeSystem(n_o=n, A=A)
    return OdePdeSystem(n_o=n, n_z=C.size(0), A=A, C=C, disturbance=InputBlock(ode=B))


def first_mode_ratio(system):
    """Reaction over the critical value of the first mode, for the random diffusion templates."""
    critical = PI2 if system.name == "random_dirichlet" else PI2 / 4
    return float(system.A0.evaluate(0.5)) / (critical * float(system.A2.evaluate(0.5)))


def diffusion_draws(generator, count, keep):
    systems = []
    while len(systems) < count:
        system = random_well_posed(generator, kind=("dirichlet", "mixed")[len(systems) % 2])
        if keep(first_mode_ratio(system)):
            systems.append(system)
    return systems


def hinf_norm_on_grid(A, B, C, points=20000):
    A, B, C = A.numpy(), B.numpy(), C.numpy()
    identity = np.eye(A.shape[0])
    peak = 0.0
    for omega in np.concatenate([[0.0], np.logspace(-3, 3, points)]):
        G = C @ np.linalg.solve(1j * omega * identity - A, B)
        peak = max(peak, np.linalg.svd(G, compute_uv=False)[0])
    return peak


def test_scalar_gain_is_one():
    cert = compute_gain_bound(convert(scalar_ode(-1.0, 1.0, 1.0)), LpiOptions(epsilon=1e-6))
    assert cert.kind == GAIN
    assert abs(cert.gamma - 1.0) < 1e-4
    assert cert.residuals["passed"]


def test_unstable_scalar_ode_has_no_certificate():
    pie = convert(scalar_ode(1.0))
    assert not is_stable(pie, test=DUAL_STABILITY)
    assert not is_stable(pie, test=PRIMAL_STABILITY)


def test_finite_dimensional_certificates_are_lyapunov_matrices(generator):
    A = random_stable_matrix(3, generator)
    pie = convert(ode_system(A))
    cert = check_stability_dual(pie)
    P = to_finite(cert.P)
    assert float(torch.linalg.eigvalsh(P)[0]) >= cert.delta / 2
    assert float(torch.linalg.eigvalsh(A @ P + P @ A.T)[-1]) <= -cert.epsilon + 1e-7


def test_two_state_gain_matches_the_frequency_response():
    A = torch.tensor([[0.0, 1.0], [-4.0, -1.0]], dtype=DTYPE)
    B = torch.tensor([[0.0], [1.0]], dtype=DTYPE)
    C = torch.tensor([[1.0, 0.0]], dtype=DTYPE)
    reference = hinf_norm_on_grid(A, B, C)
    cert = compute_gain_bound(convert(ode_system(A, B, C)), LpiOptions(epsilon=1e-6))
    assert reference - 1e-6 <= cert.gamma <= reference * (1 + 1e-3)


@pytest.mark.slow
def test_stability_verdicts_match_the_eigenvalue_test(generator):
    for k in range(50):
        M = torch.randn(3, 3, dtype=DTYPE, generator=generator)
        abscissa = float(torch.linalg.eigvals(M).real.max())
        shift = abscissa + (0.5 if k % 2 else -0.5)
        A = M - shift * torch.eye(3, dtype=DTYPE)
        stable = bool(np.all(np.linalg.eigvals(A.numpy()).real < 0))
        # a stable A has a positive definite Lyapunov solution.
        X = solve_continuous_lyapunov(A.numpy(), -np.eye(3))
        assert stable == bool(np.all(np.linalg.eigvalsh((X + X.T) / 2) > 0))
        assert is_stable(convert(ode_system(A))) == stable


@pytest.mark.parametrize("test", [PRIMAL_STABILITY, DUAL_STABILITY])
def test_dirichlet_diffusion_verdicts(test):
    assert is_stable(convert(diffusion_dirichlet(1.0)), LpiOptions(degree=2), test)
    assert not is_stable(convert(diffusion_dirichlet(15.0)), LpiOptions(degree=2), test)


def test_certificates_pass_their_checks():
    pie = convert(diffusion_dirichlet(1.0))
    cert = check_stability_dual(pie)
    report = check_certificate(cert, pie)
    assert report["passed"] and report["self_adjoint"]
    assert report["coercivity"] >= cert.delta / 2
    assert report["lpi_max"] <= 1e-7


def test_certificate_dict_round_trip():
    pie = convert(scalar_ode(-1.0, 1.0, 1.0))
    cert = compute_gain_bound(pie, LpiOptions(epsilon=1e-6))
    restored = Certificate.from_dict(cert.to_dict())
    assert restored.kind == cert.kind and restored.gamma == cert.gamma
    assert restored.P.allclose(cert.P, atol=0.0)
    assert restored.K is None


def test_gain_programs_need_io_channels():
    with pytest.raises(ShapeMismatchError):
        build_program(GAIN, convert(diffusion_dirichlet(1.0)))
    with pytest.raises(ShapeMismatchError):
        synthesize_stabilizing(convert(diffusion_dirichlet(1.0)))


def test_lpi_operator_is_self_adjoint():
    pie = convert(diffusion_dirichlet(1.0, with_io=True))
    P = convert(diffusion_dirichlet()).T.neg()
    assert lpi_operator(PRIMAL_STABILITY, pie, P, 1e-3).is_self_adjoint(1e-9)
    assert lpi_operator(GAIN, pie, P, 1e-3, gamma=2.0).is_self_adjoint(1e-9)



def test_degree_budget_errors_are_not_verdicts():
    pie = convert(diffusion_dirichlet(1.0))
    with pytest.raises(DegreeBudgetError):
        is_stable(pie, LpiOptions(degree=3, max_slack_degree=1))


def test_solver_failures_are_not_verdicts(monkeypatch):
    def failing(prog):
        raise SolverFailureError("no progress", {})
    monkeypatch.setattr("pie_pytorch.synthesis.solve_program", failing)
    with pytest.raises(SolverFailureError):
        is_stable(convert(scalar_ode(-1.0)))
    with pytest.raises(SolverFailureError):
        stability_margin(diffusion_dirichlet, 1.0, 20.0)


@pytest.mark.slow
def test_degree_three_certifies_close_to_the_boundary():
    assert is_stable(convert(diffusion_dirichlet(9.0)), LpiOptions(degree=3))
    assert not is_stable(convert(diffusion_dirichlet(10.0)), LpiOptions(degree=3))


@pytest.mark.slow
def test_dirichlet_margin_is_pi_squared():
    margin = stability_margin(diffusion_dirichlet, 1.0, 20.0, LpiOptions(degree=3), iterations=12)
    assert margin.lower is not None and margin.upper is not None
    assert margin.width <= 0.1
    assert margin.lower <= PI2 * (1 + 1e-3)
    assert abs(margin.upper - PI2) <= 0.01 * PI2


@pytest.mark.slow
def test_neumann_margin():
    margin = stability_margin(diffusion_neumann, 0.5, 5.0, LpiOptions(degree=3), iterations=12)
    assert abs(margin.upper - 2.4674) <= 0.01 * 2.4674


@pytest.mark.slow
def test_primal_and_dual_stability_verdicts_agree(generator):
    # systems right at the first-mode boundary are left out.
    options = LpiOptions(degree=3)
    for system in diffusion_draws(generator, 20, lambda ratio: not 0.9 <= ratio <= 1.05):
        pie = convert(system)
        primal = is_stable(pie, options, test=PRIMAL_STABILITY)
        dual = is_stable(pie, options, test=DUAL_STABILITY)
        assert primal == dual, system
        if first_mode_ratio(system) > 1:
            assert not dual


@pytest.mark.slow
def test_primal_and_dual_gains_agree(generator):
    for system in diffusion_draws(generator, 20, lambda ratio: ratio < 0.6):
        pie = convert(system)
        primal = compute_gain_bound(pie, LpiOptions(degree=2)).gamma
        dual = compute_gain_bound(dualize(pie), LpiOptions(degree=2)).gamma
        assert abs(primal - dual) <= 0.02 * max(primal, dual)


@pytest.mark.slow
def test_stabilizing_controller_for_unstable_diffusion():
    pie = convert(builtin("diffusion_controlled", {"lam": 10.0}))
    assert not is_stable(pie)
    cert = synthesize_stabilizing(pie, LpiOptions(degree=2))
    assert cert.K is not None and cert.K.dims_out == (1, 0)
    assert cert.residuals["closed_loop_verified"]


@pytest.mark.slow
def test_open_loop_is_never_certified_and_the_closed_loop_decays(generator):
    pie = convert(builtin("diffusion_controlled", {"lam": 10.0}))
    for degree in range(1, 9):
        assert not is_stable(pie.without_control(), LpiOptions(degree=degree)), degree
    cert = synthesize_stabilizing(pie, LpiOptions(degree=2))
    for _ in range(30):
        v0 = ZFunction.random(pie.dims, 3, pie.interval, generator)
        result = run(pie, SimConfig(grid_size=16, step=1e-2, horizon=5.0, integrator=IMPLICIT_EULER,
                                    controller=cert.K, initial_state=v0))
        assert float(result.energy[-1]) < 1e-2 * float(result.energy[0])


@pytest.mark.slow
def test_sinc_response_stays_below_the_certified_gain():
    pie = convert(diffusion_dirichlet(1.0, with_io=True))
    cert = compute_gain_bound(pie, LpiOptions(degree=2))
    bank = {"sinc": disturbance_bank()["sinc"]}
    report = empirical_gain(pie, bank=bank, cfg=SimConfig(grid_size=16, step=1e-2, horizon=10.0))
    assert 0 < report.gain <= cert.gamma


@pytest.mark.slow
def test_cascade_hinf_controller():
    pie = convert(builtin("reaction_cascade", {"N": 3, "lam": 10.0}))
    cert = synthesize_hinf(pie, LpiOptions(degree=2))
    assert abs(cert.gamma - 6.5095) <= 0.15 * 6.5095
    assert cert.residuals["closed_loop_gamma"] <= 1.05 * cert.gamma
