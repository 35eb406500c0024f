import pytest
import torch

from fixtures import *
from pie_pytorch.exceptions import IllPosedSystemError, ShapeMismatchError
from pie_pytorch.odepde import OdePdeSystem, builtin, diffusion_dirichlet, diffusion_neumann, ode_wave, \
    reaction_cascade, scalar_ode, transport
from pie_pytorch.pde2pie import boundary_values, closed_loop, convert, dualize, state_expand, state_reduce
from pie_pytorch.pi_operator import PIOperator, ZFunction, inner_product, norm, to_finite
from pie_pytorch.polynomial import PolyMatrix


def constant(value, iv=interval):
    return PolyMatrix.constant([[value]], iv)


def test_transport_kernels_are_exact():
    pie = convert(transport())
    assert pie.T.R0.max_abs_coefficient() == 0.0
    assert pie.T.R2.max_abs_coefficient() == 0.0
    assert pie.T.R1.allclose(constant(1.0), atol=0.0)
    assert pie.A.R0.allclose(constant(-1.0), atol=0.0)
    assert pie.A.R1.max_abs_coefficient() == 0.0 and pie.A.R2.max_abs_coefficient() == 0.0


def test_dual_transport_kernels():
    dual = dualize(convert(transport()))
    assert dual.T.R0.max_abs_coefficient() == 0.0
    assert dual.T.R1.max_abs_coefficient() == 0.0
    assert dual.T.R2.allclose(constant(1.0), atol=0.0)
    assert dual.A.R0.allclose(constant(-1.0), atol=0.0)


@pytest.mark.parametrize("system", [diffusion_dirichlet(2.0), diffusion_neumann(1.0, -1.0, 2.0), ode_wave(k=0.5),
                                    reaction_cascade(3, 10.0), transport(2.0, 0.0, 3.0)],
                         ids=["dirichlet", "neumann", "ode_wave", "cascade", "transport"])
def test_expand_then_reduce_recovers_the_fundamental_state(generator, system):
    pie = convert(system)
    v = ZFunction.random(pie.dims, 3, pie.interval, generator)
    physical = state_expand(pie, v)
    recovered = state_reduce(system, physical)
    assert norm(recovered.add(v.scale(-1.0))) <= 1e-10 * max(1.0, norm(v))


def test_expanded_states_satisfy_the_boundary_conditions(generator):
    for system in (diffusion_dirichlet(3.0), diffusion_neumann(0.0, -1.0, 2.0), ode_wave(k=0.5),
                   reaction_cascade(2, 1.0)):
        pie = convert(system)
        v = ZFunction.random(pie.dims, 3, pie.interval, generator)
        boundary = boundary_values(pie, v)
        x = v.x
        assert torch.allclose(system.B @ boundary, system.Bx @ x, atol=1e-11)


def test_boundary_values_match_the_expanded_state(generator):
    system = diffusion_neumann(0.0, -1.0, 2.0)
    pie = convert(system)
    v = ZFunction.random(pie.dims, 2, pie.interval, generator)
    u = state_expand(pie, v).y
    du = u.derivative_s()
    expected = torch.tensor([float(u.evaluate(-1.0)), float(du.evaluate(-1.0)),
                             float(u.evaluate(2.0)), float(du.evaluate(2.0))], dtype=DTYPE)
    assert torch.allclose(boundary_values(pie, v), expected, atol=1e-11)


def test_dirichlet_generator_is_the_second_derivative(generator):
    # A v = lam u + u_ss with u = T v and u_ss = v.
    lam = 2.5
    pie = convert(diffusion_dirichlet(lam))
    v = ZFunction.random(pie.dims, 3, pie.interval, generator)
    expected = state_expand(pie, v).scale(lam).add(v)
    image = pie.A.apply(v)
    assert norm(image.add(expected.scale(-1.0))) <= 1e-11 * max(1.0, norm(expected))


def test_dirichlet_t_operator_is_self_adjoint_and_negative(generator):
    pie = convert(diffusion_dirichlet())
    assert pie.T.is_self_adjoint(1e-12)
    for _ in range(10):
        v = ZFunction.random(pie.dims, 3, pie.interval, generator)
        assert inner_product(v, pie.T.apply(v)) < 0


def test_finite_dimensional_reduction():
    pie = convert(scalar_ode(-2.0, 3.0, 4.0, 0.5))
    assert pie.dims == (1, 0)
    assert torch.equal(to_finite(pie.T), torch.eye(1, dtype=DTYPE))
    assert float(to_finite(pie.A)) == -2.0
    assert float(to_finite(pie.B1)) == 3.0
    assert float(to_finite(pie.C)) == 4.0
    assert float(pie.D11) == 0.5


def test_ill_posed_systems_are_rejected():
    with pytest.raises(IllPosedSystemError):
        convert(OdePdeSystem(n3=1, A2=1.0, B=[[0, 1, 0, 0], [0, 0, 0, 1]]))


def test_dualize_swaps_input_and_output():
    pie = convert(diffusion_dirichlet(1.0, with_io=True))
    dual = dualize(pie)
    assert (dual.n_w, dual.n_z, dual.n_u) == (pie.n_z, pie.n_w, 0)
    assert dual.B1.allclose(pie.C.adjoint()) and dual.C.allclose(pie.B1.adjoint())
    assert dual.boundary is None



@pytest.mark.parametrize("name", ["diffusion_dirichlet", "diffusion_controlled", "reaction_cascade"])
def test_dualizing_twice_gives_back_the_system(name):
    params = {"with_io": True} if name.startswith("diffusion") else None
    pie = convert(builtin(name, params))
    again = dualize(dualize(pie))
    for part in ("T", "A", "B1", "B2", "C"):
        assert getattr(again, part).allclose(getattr(pie, part)), part
    assert torch.equal(again.D11, pie.D11) and torch.equal(again.D12, pie.D12)
    assert again.boundary is pie.boundary
    assert again.C2 is None and again.name == pie.name


def test_the_control_channel_becomes_a_dual_measurement():
    pie = convert(builtin("diffusion_controlled", {"with_io": True}))
    dual = dualize(pie)
    assert (dual.n_w, dual.n_z, dual.n_u, dual.n_y) == (1, 1, 0, 1)
    assert dual.C2.allclose(pie.B2.adjoint())
    assert torch.equal(dual.D21, pie.D12.T)
    assert dual.boundary is None and dual.primal_boundary is pie.boundary


def test_cascade_io_channels():
    pie = convert(builtin("reaction_cascade"))
    assert pie.dims == (1, 3)
    assert (pie.n_w, pie.n_u, pie.n_z) == (1, 1, 1)
    # z = x0, u drives x0' directly.
    assert float(pie.C.P.evaluate()) == 1.0
    assert float(pie.B2.P.evaluate()) == 1.0


def test_closed_loop_substitutes_the_controller(generator):
    pie = convert(builtin("diffusion_controlled", {"lam": 10.0}))
    K = PIOperator.random(pie.dims, (1, 0), 2, pie.interval, generator)
    closed = closed_loop(pie, K)
    v = ZFunction.random(pie.dims, 2, pie.interval, generator)
    expected = pie.A.apply(v).add(pie.B2.apply(K.apply(v)))
    assert norm(closed.A.apply(v).add(expected.scale(-1.0))) <= 1e-10 * max(1.0, norm(expected))
    assert closed.n_u == 0
    with pytest.raises(ShapeMismatchError):
        closed_loop(pie, PIOperator.random(pie.dims, (2, 0), 1, pie.interval, generator))
