"""
Time-domain simulation of PIE systems on a Chebyshev collocation grid.

The collocated system T v' = A v + B1 w + B2 u, z = C v + D11 w + D12 u is
stepped with the trapezoidal rule or implicit Euler, factorising the step
matrix T - c h A once per run. Dual trajectories are stepped with the
weighted adjoints of the primal matrices, so primal/dual pairings hold to
round-off.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np
import torch
from torch import Tensor

from pie_pytorch.collocation import CollocationGrid, discretize, grid_for, weighted_adjoint
from pie_pytorch.common import DTYPE, default, exists, make_generator
from pie_pytorch.exceptions import SimulationError
from pie_pytorch.pde2pie import PieSystem
from pie_pytorch.pi_operator import Dims, PIOperator, ZFunction

logger = logging.getLogger(__name__)

TRAPEZOIDAL = "trapezoidal"
IMPLICIT_EULER = "implicit_euler"
INTEGRATORS = (TRAPEZOIDAL, IMPLICIT_EULER)
MIN_GRID = 8
MAX_STEP_CONDITION = 1e10
BLOW_UP = 1e12
# a run decays when its fitted log-energy slope is below -DECAY_RATE_FLOOR or its energy dies out.
DECAY_RATE_FLOOR = 1e-3
EXTINCTION = 1e-10
NOISE_SEED = 20210317

Signal = Callable[[float], float]


@dataclass
class SimConfig:
    grid_size: int = 24
    step: float = 1e-3
    horizon: float = 1.0
    integrator: str = TRAPEZOIDAL
    # a bank name, a callable of t, or None for no disturbance.
    disturbance: Optional[Union[str, Signal]] = None
    controller: Optional[PIOperator] = None
    # fundamental initial state, as a ZFunction or an already sampled vector.
    initial_state: Optional[Union[ZFunction, Tensor]] = None

    def __post_init__(self):
        if self.grid_size < MIN_GRID:
            raise SimulationError(f"grid size must be at least {MIN_GRID}, got {self.grid_size}")
        if not self.step > 0 or not self.horizon > 0:
            raise SimulationError(f"step and horizon must be positive, got h={self.step}, T={self.horizon}")
        if self.integrator not in INTEGRATORS:
            raise SimulationError(f"unknown integrator {self.integrator!r}, expected one of {INTEGRATORS}")

    @property
    def steps(self) -> int:
        return max(1, int(round(self.horizon / self.step)))


@dataclass
class SimResult:
    times: Tensor
    states: Tensor
    physical: Tensor
    z: Tensor
    u: Tensor
    w: Tensor
    energy: Tensor
    gain: float
    grid_size: int
    step: float
    integrator: str

    @property
    def horizon(self) -> float:
        return float(self.times[-1])


# disturbances

def _sinc(t: float) -> float:
    return 5.0 / 3.0 if t == 0 else math.sin(5.0 * t) / (3.0 * t)


def _filtered_noise(seed: int = NOISE_SEED, span: float = 50.0, dt: float = 0.01, pole: float = 2.0) -> Signal:
    """First-order low-pass filtered white noise, linearly interpolated."""
    generator = make_generator(seed)
    count = int(span / dt) + 1
    white = torch.randn(count, dtype=DTYPE, generator=generator).numpy()
    filtered = np.zeros(count)
    decay = math.exp(-pole * dt)
    for k in range(1, count):
        filtered[k] = decay * filtered[k - 1] + (1 - decay) * white[k] / math.sqrt(dt)
    grid = np.arange(count) * dt
    return lambda t: float(np.interp(t, grid, filtered))


def disturbance_bank() -> Dict[str, Signal]:
    """Eight fixed scalar test signals."""
    return {
        "sin_0.1": lambda t: math.sin(0.1 * t),
        "sin_1": lambda t: math.sin(1.0 * t),
        "sin_3": lambda t: math.sin(3.0 * t),
        "sin_10": lambda t: math.sin(10.0 * t),
        "chirp": lambda t: math.sin(0.1 * t + 0.25 * t * t),
        "noise": _filtered_noise(),
        "sinc": _sinc,
        "pulse": lambda t: 1.0 if t < 1.0 else 0.0,
    }


def _signal(disturbance) -> Signal:
    if disturbance is None:
        return lambda t: 0.0
    if isinstance(disturbance, str):
        bank = disturbance_bank()
        if disturbance not in bank:
            raise SimulationError(f"unknown disturbance {disturbance!r}, expected one of {sorted(bank)}")
        return bank[disturbance]
    return disturbance


# collocated systems

@dataclass
class DiscretePie:
    grid: CollocationGrid
    dims: Dims
    T: Tensor
    A: Tensor
    B1: Tensor
    B2: Tensor
    C: Tensor
    D11: Tensor
    D12: Tensor
    K: Optional[Tensor] = None

    @property
    def n_w(self) -> int:
        return self.B1.size(1)

    @property
    def n_z(self) -> int:
        return self.C.size(0)

    @property
    def n_u(self) -> int:
        return self.B2.size(1)

    @staticmethod
    def from_pie(pie: PieSystem, grid_size: int, controller: Optional[PIOperator] = None) -> "DiscretePie":
        grid = grid_for(pie, grid_size)
        K = discretize(controller, grid) if exists(controller) else None
        return DiscretePie(grid=grid, dims=pie.dims, T=discretize(pie.T, grid), A=discretize(pie.A, grid),
                           B1=discretize(pie.B1, grid), B2=discretize(pie.B2, grid), C=discretize(pie.C, grid),
                           D11=pie.D11, D12=pie.D12, K=K)

    def closed(self) -> "DiscretePie":
        """Absorb u = K v into A and C."""
        if not exists(self.K):
            return self
        return DiscretePie(grid=self.grid, dims=self.dims, T=self.T, A=self.A + self.B2 @ self.K, B1=self.B1,
                           B2=self.B2[:, :0], C=self.C + self.D12 @ self.K, D11=self.D11, D12=self.D12[:, :0])

    def dual(self) -> "DiscretePie":
        """Weighted adjoint system: T^+ v' = A^+ v + C^+ w, z = B1^+ v + D11^T w."""
        closed = self.closed()
        grid, dims = self.grid, self.dims

        def adj(M, dims_in, dims_out):
            return weighted_adjoint(M, grid, dims_in, dims_out)
        n_w, n_z = closed.n_w, closed.n_z
        return DiscretePie(grid=grid, dims=dims, T=adj(closed.T, dims, dims), A=adj(closed.A, dims, dims),
                           B1=adj(closed.C, dims, (n_z, 0)), B2=torch.zeros(closed.T.size(0), 0, dtype=DTYPE),
                           C=adj(closed.B1, (n_w, 0), dims), D11=closed.D11.T.contiguous(),
                           D12=torch.zeros(n_w, 0, dtype=DTYPE))


def _initial_vector(system: DiscretePie, initial) -> Tensor:
    size = system.T.size(0)
    if initial is None:
        return torch.zeros(size, dtype=DTYPE)
    if isinstance(initial, ZFunction):
        return system.grid.sample(initial)
    v = torch.as_tensor(initial, dtype=DTYPE).reshape(-1)
    assert v.numel() == size, f"initial state must have {size} entries, got {v.numel()}"
    return v


def simulate_discrete(system: DiscretePie, cfg: SimConfig) -> SimResult:
    closed = system.closed()
    h, steps = cfg.step, cfg.steps
    signal = _signal(cfg.disturbance)
    c = h / 2 if cfg.integrator == TRAPEZOIDAL else h
    step_matrix = closed.T - c * closed.A
    condition = float(torch.linalg.cond(step_matrix))
    if not math.isfinite(condition) or condition > MAX_STEP_CONDITION:
        raise SimulationError(f"step matrix T - {c:.3g} A is ill-conditioned (condition {condition:.3g})")
    factor = torch.linalg.lu_factor(step_matrix)
    explicit = closed.T + c * closed.A if cfg.integrator == TRAPEZOIDAL else closed.T

    times = torch.arange(steps + 1, dtype=DTYPE) * h
    ones = torch.ones(closed.n_w, dtype=DTYPE)
    w = torch.stack([signal(float(t)) * ones for t in times])
    states = torch.zeros(steps + 1, closed.T.size(0), dtype=DTYPE)
    states[0] = _initial_vector(closed, cfg.initial_state)
    for k in range(steps):
        forcing = c * closed.B1 @ (w[k] + w[k + 1]) if cfg.integrator == TRAPEZOIDAL else h * closed.B1 @ w[k + 1]
        rhs = explicit @ states[k] + forcing
        states[k + 1] = torch.linalg.lu_solve(*factor, rhs.unsqueeze(-1)).squeeze(-1)
        if not torch.isfinite(states[k + 1]).all() or float(states[k + 1].abs().max()) > BLOW_UP:
            raise SimulationError(f"state blew up at t = {float(times[k + 1]):.4g}")

    physical = states @ closed.T.T
    weights = system.grid.z_weights(system.dims)
    energy = ((physical * physical) * weights).sum(dim=1).clamp_min(0).sqrt()
    z = states @ closed.C.T + w @ closed.D11.T
    u = states @ system.K.T if exists(system.K) else torch.zeros(steps + 1, 0, dtype=DTYPE)
    if float(energy.max()) > BLOW_UP:
        raise SimulationError("energy exceeded the blow-up threshold")
    gain = _l2_norm(z, h) / _l2_norm(w, h) if _l2_norm(w, h) > 0 else 0.0
    logger.debug("simulated %d steps of %s, final energy %.4g, gain %.4g", steps, cfg.integrator,
                 float(energy[-1]), gain)
    return SimResult(times=times, states=states, physical=physical, z=z, u=u, w=w, energy=energy, gain=gain,
                     grid_size=cfg.grid_size, step=h, integrator=cfg.integrator)


def _l2_norm(trace: Tensor, h: float) -> float:
    """Trapezoidal L2 norm of a sampled signal."""
    if trace.numel() == 0:
        return 0.0
    squared = (trace * trace).sum(dim=1)
    return float(torch.trapz(squared, dx=h).clamp_min(0).sqrt())


def run(pie: PieSystem, cfg: Optional[SimConfig] = None) -> SimResult:
    cfg = default(cfg, SimConfig())
    return simulate_discrete(DiscretePie.from_pie(pie, cfg.grid_size, cfg.controller), cfg)


@dataclass
class GainReport:
    gain: float
    per_signal: Dict[str, float]
    horizon: float
    grid_size: int


def empirical_gain(pie: PieSystem, controller: Optional[PIOperator] = None,
                   bank: Optional[Dict[str, Signal]] = None, cfg: Optional[SimConfig] = None,
                   dual: bool = False) -> GainReport:
    """Largest truncated-horizon ||z|| / ||w|| over a bank of disturbances, from zero state."""
    cfg = default(cfg, SimConfig(horizon=20.0, step=1e-2))
    bank = default(bank, disturbance_bank())
    system = DiscretePie.from_pie(pie, cfg.grid_size, default(controller, cfg.controller))
    if dual:
        system = system.dual()
    per_signal = {}
    for name, signal in bank.items():
        run_cfg = SimConfig(grid_size=cfg.grid_size, step=cfg.step, horizon=cfg.horizon, integrator=cfg.integrator,
                            disturbance=signal)
        per_signal[name] = simulate_discrete(system, run_cfg).gain
    gain = max(per_signal.values()) if per_signal else 0.0
    logger.info("empirical gain %.6g over %d signals (horizon %g, grid %d)", gain, len(per_signal),
                cfg.horizon, cfg.grid_size)
    return GainReport(gain=gain, per_signal=per_signal, horizon=cfg.horizon, grid_size=cfg.grid_size)


# duality checks

def decay_rate(times: Tensor, energy: Tensor) -> float:
    """Least-squares slope of log energy over the second half of a run."""
    half = times.numel() // 2
    tail = energy[half:].clamp_min(1e-300).log().numpy()
    return float(np.polyfit(times[half:].numpy(), tail, 1)[0])


def decays(times: Tensor, energy: Tensor) -> bool:
    start = float(energy[0])
    if start == 0.0 or float(energy[-1]) <= EXTINCTION * start:
        return True
    return decay_rate(times, energy) < -DECAY_RATE_FLOOR


@dataclass
class DualityReport:
    primal_decays: bool
    dual_decays: bool
    pairing_max: float
    primal_rate: float
    dual_rate: float
    primal_energy: Tensor = field(repr=False)
    dual_energy: Tensor = field(repr=False)
    # stability verdict the runs are checked against, if any.
    expected: Optional[bool] = None

    @property
    def agree(self) -> bool:
        if exists(self.expected) and self.primal_decays != self.expected:
            return False
        return self.primal_decays == self.dual_decays


def verify_duality_stability(pie: PieSystem, cfg: Optional[SimConfig] = None,
                             generator: Optional[torch.Generator] = None, degree: int = 3,
                             expected: Optional[bool] = None) -> DualityReport:
    """
    Primal and dual runs from random initial states: decay verdicts from the
    fitted energy rate over the second half of the horizon, and the pairing
    <xd(0), T x(t)> - <xd(t), T x(0)>, which vanishes along exact trajectories.
    With expected given, agree also requires the verdicts to match it.
    """
    cfg = default(cfg, SimConfig())
    generator = default(generator, make_generator(NOISE_SEED))
    primal = DiscretePie.from_pie(pie, cfg.grid_size)
    dual = primal.dual()
    x0 = primal.grid.sample(ZFunction.random(pie.dims, degree, pie.interval, generator))
    xd0 = primal.grid.sample(ZFunction.random(pie.dims, degree, pie.interval, generator))
    free = SimConfig(grid_size=cfg.grid_size, step=cfg.step, horizon=cfg.horizon, integrator=cfg.integrator)
    free.initial_state = x0
    forward = simulate_discrete(primal, free)
    free.initial_state = xd0
    backward = simulate_discrete(dual, free)

    weights = primal.grid.z_weights(pie.dims)
    left = (forward.physical * (xd0 * weights)).sum(dim=1)
    right = (backward.states * (forward.physical[0] * weights)).sum(dim=1)
    pairing = float((left - right).abs().max())
    report = DualityReport(primal_decays=decays(forward.times, forward.energy),
                           dual_decays=decays(backward.times, backward.energy), pairing_max=pairing,
                           primal_rate=decay_rate(forward.times, forward.energy),
                           dual_rate=decay_rate(backward.times, backward.energy),
                           primal_energy=forward.energy, dual_energy=backward.energy, expected=expected)
    logger.info("duality check: primal rate %.4g, dual rate %.4g, pairing %.3g", report.primal_rate,
                report.dual_rate, pairing)
    return report


def _delayed(signal: Signal, h: float) -> Signal:
    """signal(t - h), zero at the first sample."""
    return lambda t: 0.0 if t < h / 2 else signal(t - h)


def verify_duality_gain(pie: PieSystem, w: Signal, w_dual: Signal, cfg: Optional[SimConfig] = None) -> float:
    """
    max over k of |sum_j <zd_j, w_(k-j)> - sum_j <wd_j, z_(k-j)>| h, from zero states,
    where zd is the dual response to w_dual and z the primal response to w.
    Both inputs are delayed by one step: the schemes feed the first sample in
    differently from the rest, and a zero first sample makes each run an exact
    discrete convolution.
    """
    cfg = default(cfg, SimConfig())
    h = cfg.step
    primal = DiscretePie.from_pie(pie, cfg.grid_size, cfg.controller)
    forward = simulate_discrete(primal, SimConfig(grid_size=cfg.grid_size, step=h, horizon=cfg.horizon,
                                                  integrator=cfg.integrator, disturbance=_delayed(w, h)))
    backward = simulate_discrete(primal.dual(), SimConfig(grid_size=cfg.grid_size, step=h,
                                                          horizon=cfg.horizon, integrator=cfg.integrator,
                                                          disturbance=_delayed(w_dual, h)))
    worst = 0.0
    for k in range(forward.times.numel()):
        # <zd_j, w_(k-j)> and <wd_j, z_(k-j)> for j = 0..k
        left = (backward.z[:k + 1] * forward.w[:k + 1].flip(0)).sum()
        right = (backward.w[:k + 1] * forward.z[:k + 1].flip(0)).sum()
        worst = max(worst, float((left - right).abs()) * h)
    logger.debug("gain duality mismatch %.3g over %d steps", worst, forward.times.numel())
    return worst


def write_csv(result: SimResult, path) -> None:
    """Columns t, z..., u..., energy."""
    path = Path(path)
    header = ["t"] + [f"z{i}" for i in range(result.z.size(1))] + [f"u{i}" for i in range(result.u.size(1))] \
        + ["energy"]
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for k in range(result.times.numel()):
            row: List[float] = [float(result.times[k])] + result.z[k].tolist() + result.u[k].tolist() \
                + [float(result.energy[k])]
            writer.writerow([repr(v) for v in row])
