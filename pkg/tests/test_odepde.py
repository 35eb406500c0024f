import pytest
import torch

from fixtures import *
from pie_pytorch.exceptions import PIError, ShapeMismatchError
from pie_pytorch.odepde import BUILTINS, InputBlock, OdePdeSystem, boundary_transfer, builtin, random_well_posed, \
    validate


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builtins_are_well_posed(name):
    report = validate(builtin(name))
    assert report.ok, report.messages


def test_dimensions_follow_the_state_partition():
    system = builtin("ode_wave")
    assert (system.n_o, system.n_p, system.n_r) == (1, 2, 2)
    cascade = builtin("reaction_cascade", {"N": 3.0, "lam": 10.0})
    assert (cascade.n_o, cascade.n3, cascade.n_w, cascade.n_u, cascade.n_z) == (1, 3, 1, 1, 1)


def test_boundary_transfer_adds_the_slope_term():
    T = boundary_transfer(0, 1, -1.0, 2.0)
    # x3(b) = x3(a) + (b - a) x3_s(a) for the fundamental state set to zero.
    assert torch.equal(T, torch.tensor([[1, 0], [0, 1], [1, 3], [0, 1]], dtype=DTYPE))


def test_neumann_neumann_is_rejected():
    system = OdePdeSystem(n3=1, A2=1.0, B=[[0, 1, 0, 0], [0, 0, 0, 1]])
    report = validate(system)
    assert not report.ok
    assert report.rank == 2
    assert any("singular" in message for message in report.messages)


def test_rank_deficient_boundary_is_rejected():
    report = validate(OdePdeSystem(n3=1, A2=1.0, B=[[1, 0, 0, 0], [2, 0, 0, 0]]))
    assert not report.ok and report.rank == 1


def test_wrong_shapes_raise():
    with pytest.raises(ShapeMismatchError):
        OdePdeSystem(n_o=1, A=[[1.0, 2.0]])
    with pytest.raises(ShapeMismatchError):
        OdePdeSystem(n3=1, A2=1.0, B=[[1, 0, 0, 0], [0, 0, 1, 0]], Ca=[[1.0]])


def test_input_blocks_infer_their_size():
    system = OdePdeSystem(n_o=1, n3=1, A=-1.0, A2=1.0, B=[[1, 0, 0, 0], [0, 0, 1, 0]], n_z=2,
                          disturbance=InputBlock(ode=[[1.0, 0.0]]))
    assert system.n_w == 2 and system.n_u == 0
    assert system.disturbance.pde.shape == (1, 2)
    assert system.disturbance.feedthrough.shape == (2, 2)


def test_unknown_builtins_and_parameters():
    with pytest.raises(PIError):
        builtin("wave_2d")
    with pytest.raises(PIError):
        builtin("transport", {"lam": 1.0})


def test_random_systems_are_well_posed(generator):
    for _ in range(20):
        system = random_well_posed(generator)
        assert validate(system).ok
        assert system.n_w == 1 and system.n_z == 1
