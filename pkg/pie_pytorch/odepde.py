"""
Coupled linear ODE-PDE systems in one spatial variable.

The ODE state x has n_o components. The PDE state stacks x1 (no spatial
derivative), x2 (first derivative) and x3 (second derivative), with
n1, n2 and n3 components. Boundary values enter through
x_c = [x2; x3; x3_s], evaluated at both ends and constrained by
B [x_c(a); x_c(b)] = Bx x.
"""
import logging
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional, Tuple

import torch
from torch import Tensor

from pie_pytorch.common import DTYPE, as_tensor, exists
from pie_pytorch.exceptions import PIError, ShapeMismatchError
from pie_pytorch.polynomial import S, PolyMatrix

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-9
MAX_BT_CONDITION = 1e12


def _poly(value, rows: int, cols: int, interval) -> PolyMatrix:
    if isinstance(value, PolyMatrix):
        if value.shape != (rows, cols):
            raise ShapeMismatchError(f"expected a {rows}x{cols} polynomial, got {value.rows}x{value.cols}")
        return PolyMatrix(value.coeffs, interval, (S,))
    if value is None:
        return PolyMatrix.zeros(rows, cols, interval, (S,))
    try:
        return PolyMatrix.constant(as_tensor(value, rows, cols), interval, (S,))
    except AssertionError as e:
        raise ShapeMismatchError(str(e)) from e


def _matrix(value, rows: int, cols: int) -> Tensor:
    if value is None:
        return torch.zeros(rows, cols, dtype=DTYPE)
    try:
        return as_tensor(value, rows, cols)
    except AssertionError as e:
        raise ShapeMismatchError(str(e)) from e


@dataclass
class InputBlock:
    """
    One input channel group: its effect on the ODE (n_o x k), in the PDE domain
    (n_p x k, polynomial in s) and its feedthrough to the output (n_z x k).
    """
    ode: Optional[Tensor] = None
    pde: Optional[PolyMatrix] = None
    feedthrough: Optional[Tensor] = None
    size: Optional[int] = None

    def resolved(self, n_o: int, n_p: int, n_z: int, interval) -> "InputBlock":
        size = self.size
        if not exists(size):
            for value in (self.ode, self.pde, self.feedthrough):
                if isinstance(value, PolyMatrix):
                    size = value.cols
                elif exists(value):
                    size = as_tensor(value).size(1)
                if exists(size):
                    break
        size = size or 0
        return InputBlock(ode=_matrix(self.ode, n_o, size), pde=_poly(self.pde, n_p, size, interval),
                          feedthrough=_matrix(self.feedthrough, n_z, size), size=size)


@dataclass
class OdePdeSystem:
    interval: Tuple[float, float] = (0.0, 1.0)
    n_o: int = 0
    n1: int = 0
    n2: int = 0
    n3: int = 0
    n_z: int = 0
    A: Optional[Tensor] = None
    A0: Optional[PolyMatrix] = None
    A1: Optional[PolyMatrix] = None
    A2: Optional[PolyMatrix] = None
    E: Optional[PolyMatrix] = None
    E10: Optional[Tensor] = None
    Ea: Optional[PolyMatrix] = None
    Eb: Optional[PolyMatrix] = None
    B: Optional[Tensor] = None
    Bx: Optional[Tensor] = None
    C: Optional[Tensor] = None
    C10: Optional[Tensor] = None
    Ca: Optional[PolyMatrix] = None
    Cb: Optional[PolyMatrix] = None
    disturbance: InputBlock = field(default_factory=InputBlock)
    control: InputBlock = field(default_factory=InputBlock)
    name: str = "custom"

    def __post_init__(self):
        a, b = float(self.interval[0]), float(self.interval[1])
        assert a < b, f"interval must satisfy a < b, got [{a}, {b}]"
        self.interval = (a, b)
        n_o, n_p, n_r, n_z = self.n_o, self.n_p, self.n_r, self.n_z
        n23 = self.n2 + self.n3
        iv = self.interval
        self.A = _matrix(self.A, n_o, n_o)
        self.A0 = _poly(self.A0, n_p, n_p, iv)
        self.A1 = _poly(self.A1, n_p, n23, iv)
        self.A2 = _poly(self.A2, n_p, self.n3, iv)
        self.E = _poly(self.E, n_p, n_o, iv)
        self.E10 = _matrix(self.E10, n_o, 2 * n_r)
        self.Ea = _poly(self.Ea, n_o, n_p, iv)
        self.Eb = _poly(self.Eb, n_o, n23, iv)
        self.B = _matrix(self.B, n_r, 2 * n_r)
        self.Bx = _matrix(self.Bx, n_r, n_o)
        self.C = _matrix(self.C, n_z, n_o)
        self.C10 = _matrix(self.C10, n_z, 2 * n_r)
        self.Ca = _poly(self.Ca, n_z, n_p, iv)
        self.Cb = _poly(self.Cb, n_z, n23, iv)
        self.disturbance = self.disturbance.resolved(n_o, n_p, n_z, iv)
        self.control = self.control.resolved(n_o, n_p, n_z, iv)

    @property
    def n_p(self) -> int:
        return self.n1 + self.n2 + self.n3

    @property
    def n_r(self) -> int:
        return self.n2 + 2 * self.n3

    @property
    def n_w(self) -> int:
        return self.disturbance.size

    @property
    def n_u(self) -> int:
        return self.control.size

    def replace(self, **changes) -> "OdePdeSystem":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return OdePdeSystem(**values)


def boundary_transfer(n2: int, n3: int, a: float, b: float) -> Tensor:
    """
    The matrix T with [x_c(a); x_c(b)] = T x_c(a) + int Q(theta) v(theta) dtheta.
    Rows are partitioned (n2, n3, n3, n2, n3, n3), columns (n2, n3, n3).
    """
    n_r = n2 + 2 * n3
    T = torch.zeros(2 * n_r, n_r, dtype=DTYPE)
    T[:n_r, :n_r] = torch.eye(n_r, dtype=DTYPE)
    T[n_r:, :] = torch.eye(n_r, dtype=DTYPE)
    T[n_r + n2:n_r + n2 + n3, n2 + n3:] = (b - a) * torch.eye(n3, dtype=DTYPE)
    assert T.shape == (2 * (n2 + n3 + n3), n2 + n3 + n3)
    return T


@dataclass
class ValidationReport:
    ok: bool
    messages: List[str]
    rank: int
    n_r: int
    bt_condition: float

    def __bool__(self):
        return self.ok


def validate(system: OdePdeSystem) -> ValidationReport:
    """Dimension, boundary-rank and (BT) invertibility checks. Never raises."""
    messages = []
    n_r = system.n_r
    polys = [system.A0, system.A1, system.A2, system.E, system.Ea, system.Eb, system.Ca, system.Cb,
             system.disturbance.pde, system.control.pde]
    for p in polys:
        if p.interval != system.interval:
            messages.append(f"polynomial parameter on {p.interval} differs from system interval {system.interval}")
    if system.B.shape != (n_r, 2 * n_r):
        messages.append(f"B must be {n_r}x{2 * n_r}, got {tuple(system.B.shape)}")
    rank = 0
    condition = 1.0
    if n_r > 0 and not messages:
        singular = torch.linalg.svdvals(system.B)
        rank = int((singular > RANK_TOLERANCE * singular.max()).sum()) if singular.max() > 0 else 0
        if rank != n_r:
            messages.append(f"rank(B) = {rank}, expected n_r = n2 + 2 n3 = {n_r}")
        else:
            bt = system.B @ boundary_transfer(system.n2, system.n3, *system.interval)
            condition = float(torch.linalg.cond(bt))
            if not math.isfinite(condition) or condition > MAX_BT_CONDITION:
                messages.append(f"BT is singular to working precision (condition {condition:.3g})")
    elif n_r == 0 and system.B.numel():
        messages.append("B must be empty when n2 = n3 = 0")
    report = ValidationReport(ok=not messages, messages=messages, rank=rank, n_r=n_r, bt_condition=condition)
    for message in messages:
        logger.info("validation: %s", message)
    return report


# builtin systems

def diffusion_dirichlet(lam: float = 0.0, a: float = 0.0, b: float = 1.0, diffusivity: float = 1.0,
                        with_io: bool = False) -> OdePdeSystem:
    """u_t = lam u + diffusivity u_ss, u(a) = u(b) = 0."""
    io = _diffusion_io(with_io)
    return OdePdeSystem(interval=(a, b), n3=1, A0=lam, A2=diffusivity,
                        B=[[1, 0, 0, 0], [0, 0, 1, 0]], name="diffusion_dirichlet", **io)


def diffusion_neumann(lam: float = 0.0, a: float = 0.0, b: float = 1.0, diffusivity: float = 1.0,
                      with_io: bool = False) -> OdePdeSystem:
    """u_t = lam u + diffusivity u_ss, u(a) = 0, u_s(b) = 0."""
    io = _diffusion_io(with_io)
    return OdePdeSystem(interval=(a, b), n3=1, A0=lam, A2=diffusivity,
                        B=[[1, 0, 0, 0], [0, 0, 0, 1]], name="diffusion_neumann", **io)


def _diffusion_io(with_io: bool) -> dict:
    # uniform in-domain disturbance, output the spatial mean.
    if not with_io:
        return {}
    return dict(n_z=1, Ca=[[1.0]], disturbance=InputBlock(pde=[[1.0]], size=1))


def diffusion_controlled(lam: float = 10.0, a: float = 0.0, b: float = 1.0,
                         with_io: bool = False) -> OdePdeSystem:
    """Dirichlet diffusion-reaction with a uniform in-domain control input."""
    system = diffusion_dirichlet(lam, a, b)
    control = InputBlock(pde=[[1.0]], size=1)
    changes = dict(control=control, name="diffusion_controlled")
    if with_io:
        changes.update(n_z=1, Ca=[[1.0]], disturbance=InputBlock(pde=[[1.0]], size=1),
                       control=InputBlock(pde=[[1.0]], feedthrough=[[1.0]], size=1))
    return system.replace(**changes)


def transport(speed: float = 1.0, a: float = 0.0, b: float = 1.0) -> OdePdeSystem:
    """v_t + speed v_s = 0, v(a) = 0."""
    return OdePdeSystem(interval=(a, b), n2=1, A1=-speed, B=[[1, 0]], name="transport")


def transport_reversed(speed: float = 1.0, a: float = 0.0, b: float = 1.0) -> OdePdeSystem:
    """z_t - speed z_s = 0, z(b) = 0."""
    return OdePdeSystem(interval=(a, b), n2=1, A1=speed, B=[[0, 1]], name="transport_reversed")


def ode_wave(a: float = -1.0, c: float = 1.0, d: float = 1.0, k: float = 0.0) -> OdePdeSystem:
    """
    x' = a x + d w(1), w_tt = c w_ss, w(0) = k x, w_s(1) = 0, with x1 = w_t and x3 = w.
    """
    return OdePdeSystem(interval=(0.0, 1.0), n_o=1, n1=1, n3=1, A=a, A0=[[0, 0], [1, 0]], A2=[[c], [0]],
                        E10=[[0, 0, d, 0]], B=[[1, 0, 0, 0], [0, 0, 0, 1]], Bx=[[k], [0]], name="ode_wave")


def reaction_cascade(N: int = 3, lam: float = 10.0) -> OdePdeSystem:
    """
    N coupled diffusion-reaction states x_i' = lam x_i + sum_{k >= i} x_k,ss + w on [0, 1],
    zero at both ends except x_N(1) = x0, where x0' = u and z = x0.
    """
    if N < 1:
        raise PIError(f"reaction_cascade needs N >= 1, got {N}")
    B = torch.zeros(2 * N, 4 * N, dtype=DTYPE)
    for i in range(N):
        B[i, i] = 1.0
        B[N + i, 2 * N + i] = 1.0
    Bx = torch.zeros(2 * N, 1, dtype=DTYPE)
    Bx[-1, 0] = 1.0
    A2 = torch.triu(torch.ones(N, N, dtype=DTYPE))
    return OdePdeSystem(interval=(0.0, 1.0), n_o=1, n3=N, n_z=1, A=0.0, A0=lam * torch.eye(N, dtype=DTYPE),
                        A2=A2, B=B, Bx=Bx, C=[[1.0]],
                        disturbance=InputBlock(pde=torch.ones(N, 1, dtype=DTYPE), size=1),
                        control=InputBlock(ode=[[1.0]], size=1), name="reaction_cascade")


def scalar_ode(a: float = -1.0, b: float = 1.0, c: float = 1.0, d: float = 0.0) -> OdePdeSystem:
    """x' = a x + b w, z = c x + d w, with no distributed state."""
    return OdePdeSystem(n_o=1, n_z=1, A=a, C=c, disturbance=InputBlock(ode=[[b]], feedthrough=[[d]], size=1),
                        name="scalar_ode")


BUILTINS: Dict[str, Callable[..., OdePdeSystem]] = {
    "diffusion_dirichlet": diffusion_dirichlet,
    "diffusion_neumann": diffusion_neumann,
    "diffusion_controlled": diffusion_controlled,
    "transport": transport,
    "transport_reversed": transport_reversed,
    "ode_wave": ode_wave,
    "reaction_cascade": reaction_cascade,
    "scalar_ode": scalar_ode,
}


def builtin(name: str, params: Optional[dict] = None) -> OdePdeSystem:
    if name not in BUILTINS:
        raise PIError(f"unknown builtin system {name!r}, expected one of {sorted(BUILTINS)}")
    params = params or {}
    try:
        if name == "reaction_cascade" and "N" in params:
            params = dict(params, N=int(params["N"]))
        return BUILTINS[name](**params)
    except TypeError as e:
        raise PIError(f"invalid parameters for {name}: {e}") from e


def random_well_posed(generator: torch.Generator, kind: Optional[str] = None,
                      with_io: bool = True) -> OdePdeSystem:
    """
    Random diffusion or transport system from known-good boundary templates,
    with a random in-domain disturbance and a random averaged output.
    """
    kinds = ("dirichlet", "mixed", "transport")
    if kind is None:
        kind = kinds[int(torch.randint(len(kinds), (1,), generator=generator))]

    def uniform(lo, hi):
        return float(lo + (hi - lo) * torch.rand((), dtype=DTYPE, generator=generator))

    interval = (0.0, 1.0)
    io = {}
    if with_io:
        io = dict(n_z=1, Ca=[[uniform(0.5, 1.5)]],
                  disturbance=InputBlock(pde=[[uniform(0.5, 1.5)]], size=1))
    if kind == "dirichlet":
        return OdePdeSystem(interval=interval, n3=1, A0=uniform(-2.0, 15.0), A2=uniform(0.5, 1.5),
                            B=[[1, 0, 0, 0], [0, 0, 1, 0]], name="random_dirichlet", **io)
    if kind == "mixed":
        return OdePdeSystem(interval=interval, n3=1, A0=uniform(-2.0, 5.0), A2=uniform(0.5, 1.5),
                            B=[[1, 0, 0, 0], [0, 0, 0, 1]], name="random_mixed", **io)
    if kind == "transport":
        return OdePdeSystem(interval=interval, n2=1, A0=uniform(-2.0, 1.0), A1=-uniform(0.5, 2.0),
                            B=[[1, 0]], name="random_transport", **io)
    raise PIError(f"unknown random system kind {kind!r}")
