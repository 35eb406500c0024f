"""
Conversion of an OdePdeSystem into partial integral equation form

    T v' = A v + B1 w + B2 u,    z = C v + D11 w + D12 u

where v = (x, x1, x2_s, x3_ss) is the fundamental state and T v recovers the
physical state (x, x1, x2, x3).
"""
import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import torch
from torch import Tensor

from pie_pytorch.common import DTYPE, exists
from pie_pytorch.exceptions import IllPosedSystemError, ShapeMismatchError
from pie_pytorch.odepde import OdePdeSystem, boundary_transfer, validate
from pie_pytorch.pi_operator import PIOperator, ZFunction
from pie_pytorch.polynomial import S, PolyMatrix, vstack

logger = logging.getLogger(__name__)


@dataclass
class PieSystem:
    T: PIOperator
    A: PIOperator
    B1: PIOperator
    B2: PIOperator
    C: PIOperator
    D11: Tensor
    D12: Tensor
    # maps v to the boundary values [x_c(a); x_c(b)]; absent for dual systems.
    boundary: Optional[PIOperator] = None
    name: str = "pie"
    # measured output y = C2 v + D21 w; a dual system carries its primal's control channel here.
    C2: Optional[PIOperator] = None
    D21: Optional[Tensor] = None
    # boundary map of the system this one is the dual of.
    primal_boundary: Optional[PIOperator] = None

    def __post_init__(self):
        dims = self.T.dims_in
        assert self.T.dims_out == dims and self.A.dims_in == dims and self.A.dims_out == dims, \
            "T and A must be square on the same space"
        assert self.B1.dims_out == dims and self.B2.dims_out == dims, "inputs must map into the state space"
        assert self.C.dims_in == dims, "the output must be read from the state space"
        assert self.D11.shape == (self.n_z, self.n_w), f"D11 must be {self.n_z}x{self.n_w}"
        assert self.D12.shape == (self.n_z, self.n_u), f"D12 must be {self.n_z}x{self.n_u}"
        assert exists(self.C2) == exists(self.D21), "C2 and D21 come together"
        if exists(self.C2):
            assert self.C2.dims_in == dims, "the measurement must be read from the state space"
            assert self.D21.shape == (self.n_y, self.n_w), f"D21 must be {self.n_y}x{self.n_w}"

    @property
    def dims(self) -> Tuple[int, int]:
        return self.T.dims_in

    @property
    def interval(self):
        return self.T.interval

    @property
    def n_w(self) -> int:
        return self.B1.dims_in[0]

    @property
    def n_u(self) -> int:
        return self.B2.dims_in[0]

    @property
    def n_z(self) -> int:
        return self.C.dims_out[0]

    @property
    def n_y(self) -> int:
        return self.C2.dims_out[0] if exists(self.C2) else 0

    def without_control(self) -> "PieSystem":
        return replace(self, B2=_no_input(self.dims, self.interval), D12=torch.zeros(self.n_z, 0, dtype=DTYPE))


def _no_input(dims, interval) -> PIOperator:
    return PIOperator.zero((0, 0), dims, interval)


def _solve(lhs: Tensor, rhs: Tensor) -> Tensor:
    if lhs.numel() == 0:
        return torch.zeros(lhs.size(1), rhs.size(1), dtype=DTYPE)
    return torch.linalg.solve(lhs, rhs)


def _poly_s(constant: Tensor, linear: Tensor, interval) -> PolyMatrix:
    """constant + s * linear."""
    return PolyMatrix(torch.stack([constant, linear]).unsqueeze(1), interval, (S,))


def _kernel(constant: Tensor, s_coeff: Tensor, theta_coeff: Tensor, interval) -> PolyMatrix:
    """constant + s * s_coeff + theta * theta_coeff."""
    coeffs = torch.zeros(2, 2, *constant.shape, dtype=DTYPE)
    coeffs[0, 0], coeffs[1, 0], coeffs[0, 1] = constant, s_coeff, theta_coeff
    return PolyMatrix(coeffs, interval, (S, "theta"))


def convert(system: OdePdeSystem) -> PieSystem:
    report = validate(system)
    if not report.ok:
        raise IllPosedSystemError("; ".join(report.messages))
    a, b = interval = system.interval
    n_o, n1, n2, n3 = system.n_o, system.n1, system.n2, system.n3
    n_p, n_r = system.n_p, system.n_r
    n23 = n2 + n3
    eye = lambda n: torch.eye(n, dtype=DTYPE)

    # partitions: state blocks (n1, n2, n3), boundary blocks (n2, n3, n3).
    x2, x3 = slice(n1, n1 + n2), slice(n1 + n2, n_p)
    c2, c3, c3s = slice(0, n2), slice(n2, n2 + n3), slice(n2 + n3, n_r)
    assert n1 + n2 + n3 == n_p and n2 + n3 + n3 == n_r

    T = boundary_transfer(n2, n3, a, b)
    bt = system.B @ T
    bt_inv_bx = _solve(bt, system.Bx)
    bt_inv_b = _solve(bt, system.B)

    # Q(theta): only the x_c(b) rows carry the integrals of the fundamental state.
    q_const = torch.zeros(2 * n_r, n_p, dtype=DTYPE)
    q_lin = torch.zeros(2 * n_r, n_p, dtype=DTYPE)
    q_const[n_r + c2.start:n_r + c2.stop, x2] = eye(n2)
    q_const[n_r + c3.start:n_r + c3.stop, x3] = b * eye(n3)
    q_lin[n_r + c3.start:n_r + c3.stop, x3] = -eye(n3)
    q_const[n_r + c3s.start:n_r + c3s.stop, x3] = eye(n3)
    Q = _poly_s(q_const, q_lin, interval)

    k_const = torch.zeros(n_p, n_r, dtype=DTYPE)
    k_lin = torch.zeros(n_p, n_r, dtype=DTYPE)
    k_const[x2, c2] = eye(n2)
    k_const[x3, c3] = eye(n3)
    k_const[x3, c3s] = -a * eye(n3)
    k_lin[x3, c3s] = eye(n3)
    K = _poly_s(k_const, k_lin, interval)

    V = torch.zeros(n23, n_r, dtype=DTYPE)
    V[n2:, c3s] = eye(n3)

    H0 = K.mul(PolyMatrix.constant(bt_inv_bx, interval))
    H1 = PolyMatrix.constant(V @ bt_inv_bx, interval, (S,))
    T1 = T @ bt_inv_bx
    T2 = Q.add(PolyMatrix.constant(-T @ bt_inv_b, interval).mul(Q))

    projected = PolyMatrix.constant(bt_inv_b, interval).mul(Q.as_theta())
    G0 = torch.zeros(n_p, n_p, dtype=DTYPE)
    G0[:n1, :n1] = eye(n1)
    G2 = K.mul(projected).neg()
    g1_const = torch.zeros(n_p, n_p, dtype=DTYPE)
    g1_s = torch.zeros(n_p, n_p, dtype=DTYPE)
    g1_const[x2, x2] = eye(n2)
    g1_s[x3, x3] = eye(n3)
    G1 = _kernel(g1_const, g1_s, -g1_s, interval).add(G2)

    L0 = torch.zeros(n23, n_p, dtype=DTYPE)
    L0[:n2, x2] = eye(n2)
    L2 = PolyMatrix.constant(V, interval).mul(projected).neg()
    l1_const = torch.zeros(n23, n_p, dtype=DTYPE)
    l1_const[n2:, x3] = eye(n3)
    L1 = _kernel(l1_const, torch.zeros_like(l1_const), torch.zeros_like(l1_const), interval).add(L2)

    full = (n_o, n_p)
    G = PIOperator.from_parts(full, (0, n_p), interval, Q2=H0, R0=G0, R1=G1, R2=G2)
    L = PIOperator.from_parts(full, (0, n23), interval, Q2=H1, R0=L0, R1=L1, R2=L2)
    T_op = PIOperator.from_parts(full, full, interval, P=eye(n_o), Q2=H0, R0=G0, R1=G1, R2=G2)

    # A2 [0 0 I] acts on x3_ss, the last block of the fundamental state.
    leading = torch.zeros(*system.A2.coeffs.shape[:3], n1 + n2, 1, dtype=DTYPE)
    A2_full = PolyMatrix(torch.cat([leading, system.A2.coeffs], dim=3), interval, (S,))
    E10 = PolyMatrix.constant(system.E10, interval)
    A_op = PIOperator.from_parts(full, full, interval, P=system.A + system.E10 @ T1, Q1=E10.mul(T2),
                                 Q2=system.E, R0=A2_full)
    A_op = A_op.add(PIOperator.from_parts((0, n_p), full, interval, Q1=system.Ea, R0=system.A0).compose(G))
    A_op = A_op.add(PIOperator.from_parts((0, n23), full, interval, Q1=system.Eb, R0=system.A1).compose(L))

    n_z = system.n_z
    C10 = PolyMatrix.constant(system.C10, interval)
    C_op = PIOperator.from_parts(full, (n_z, 0), interval, P=system.C + system.C10 @ T1, Q1=C10.mul(T2))
    C_op = C_op.add(PIOperator.from_parts((0, n_p), (n_z, 0), interval, Q1=system.Ca).compose(G))
    C_op = C_op.add(PIOperator.from_parts((0, n23), (n_z, 0), interval, Q1=system.Cb).compose(L))

    def input_operator(block) -> PIOperator:
        return PIOperator.from_parts((block.size, 0), full, interval, P=block.ode, Q2=block.pde)

    boundary = PIOperator.from_parts(full, (2 * n_r, 0), interval, P=T1, Q1=T2)
    pie = PieSystem(T=T_op, A=A_op.trim(), B1=input_operator(system.disturbance),
                    B2=input_operator(system.control), C=C_op.trim(), D11=system.disturbance.feedthrough,
                    D12=system.control.feedthrough, boundary=boundary, name=system.name)
    logger.info("converted %s: state %s, %d disturbance(s), %d control(s), %d output(s)",
                system.name, pie.dims, pie.n_w, pie.n_u, pie.n_z)
    return pie


def state_expand(pie: PieSystem, v: ZFunction) -> ZFunction:
    """Physical state (x, x1, x2, x3) from the fundamental state."""
    return pie.T.apply(v)


def boundary_values(pie: PieSystem, v: ZFunction) -> Tensor:
    """[x_c(a); x_c(b)] of the physical state T v."""
    assert exists(pie.boundary), "boundary values are only defined for converted systems"
    return pie.boundary.apply(v).x


def state_reduce(system: OdePdeSystem, physical: ZFunction) -> ZFunction:
    """Fundamental state (x, x1, x2_s, x3_ss) of a polynomial physical state."""
    if physical.dims != (system.n_o, system.n_p):
        raise ShapeMismatchError(f"expected a state in Z^{(system.n_o, system.n_p)}, got {physical.dims}")
    y = physical.y
    n1, n2 = system.n1, system.n2
    rows = lambda p, lo, hi: PolyMatrix(p.coeffs[:, :, lo:hi], p.interval, (S,))
    blocks = [rows(y, 0, n1), rows(y, n1, n1 + n2).derivative_s(),
              rows(y, n1 + n2, system.n_p).derivative_s().derivative_s()]
    return ZFunction(physical.x, vstack(blocks))


def dualize(pie: PieSystem) -> PieSystem:
    """
    The dual system T* v' = A* v + C* w + C2* u, z = B1* v + D11^T w + D21^T u.
    The control channel becomes the measured output y = B2* v + D12^T w, and
    the boundary map is kept aside, so dualizing twice gives back the system.
    """
    if exists(pie.C2):
        B2, D12 = pie.C2.adjoint(), pie.D21.T.contiguous()
    else:
        B2, D12 = _no_input(pie.dims, pie.interval), torch.zeros(pie.n_w, 0, dtype=DTYPE)
    C2, D21 = (pie.B2.adjoint(), pie.D12.T.contiguous()) if pie.n_u else (None, None)
    name = pie.name[:-len("_dual")] if pie.name.endswith("_dual") else f"{pie.name}_dual"
    return PieSystem(T=pie.T.adjoint(), A=pie.A.adjoint(), B1=pie.C.adjoint(), B2=B2, C=pie.B1.adjoint(),
                     D11=pie.D11.T.contiguous(), D12=D12, C2=C2, D21=D21, boundary=pie.primal_boundary,
                     primal_boundary=pie.boundary, name=name)


def closed_loop(pie: PieSystem, K: PIOperator) -> PieSystem:
    """Substitute u = K v: A + B2 K and C + D12 K."""
    if K.dims_in != pie.dims or K.dims_out != (pie.n_u, 0):
        raise ShapeMismatchError(f"controller must map {pie.dims} to ({pie.n_u}, 0)")
    feedthrough = PIOperator.multiplier(pie.D12, pie.interval)
    return replace(pie, A=pie.A.add(pie.B2.compose(K)), B2=_no_input(pie.dims, pie.interval),
                   C=pie.C.add(feedthrough.compose(K)), D12=torch.zeros(pie.n_z, 0, dtype=DTYPE),
                   name=f"{pie.name}_closed_loop")
