"""
Stability, L2-gain and state-feedback synthesis for PIE systems, each posed as
one operator inequality L <= 0 and handed to the LPI compiler.

    primal_stability   T* P A + A* P T + eps T* T
    dual_stability     T P A* + A P T* + eps T T*
    stabilization      (A P + B2 Z) T* + T (A P + B2 Z)* + eps T T*
    gain, hinf         [[-g I + eps I, D11, (C P + D12 Z) T*],
                        [(.)*, -g I + eps I, B1*],
                        [(.)*, (.)*, (A P + B2 Z) T* + T (A P + B2 Z)* + eps T T*]]

Controllers are recovered as K = Z P^-1.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from torch import Tensor

from pie_pytorch.collocation import discretize, grid_for, operator_norm_estimate
from pie_pytorch.common import DTYPE, default, exists, make_generator
from pie_pytorch.exceptions import (ControllerRecoveryError, DegreeBudgetError, InfeasibleError, PIError,
                                    ShapeMismatchError, SolverFailureError)
from pie_pytorch.lpi import LpiOptions, LpiProgram, LpiResult, ScalarVariable, solve_program
from pie_pytorch.odepde import OdePdeSystem, builtin
from pie_pytorch.pde2pie import PieSystem, closed_loop, convert
from pie_pytorch.pi_operator import PIOperator, ZFunction, block, inner_product
from pie_pytorch.polynomial import S, PolyMatrix

logger = logging.getLogger(__name__)

PRIMAL_STABILITY = "primal_stability"
DUAL_STABILITY = "dual_stability"
GAIN = "gain"
STABILIZATION = "stabilization"
HINF = "hinf"
KINDS = (PRIMAL_STABILITY, DUAL_STABILITY, GAIN, STABILIZATION, HINF)

CHECK_SAMPLES = 200
LPI_TOLERANCE = 1e-7
SELF_ADJOINT_TOLERANCE = 1e-9
MAX_INVERSE_CONDITION = 1e10
GAIN_SLACK = 1.05

Gamma = Union[ScalarVariable, float]


@dataclass
class Certificate:
    kind: str
    P: PIOperator
    degree: int
    epsilon: float
    delta: float
    Z: Optional[PIOperator] = None
    K: Optional[PIOperator] = None
    gamma: Optional[float] = None
    residuals: Dict[str, object] = field(default_factory=dict)
    solver: Dict[str, object] = field(default_factory=dict)
    system: str = ""

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "system": self.system,
            "degree": self.degree,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "gamma": self.gamma,
            "P": self.P.to_dict(),
            "Z": self.Z.to_dict() if exists(self.Z) else None,
            "K": self.K.to_dict() if exists(self.K) else None,
            "residuals": dict(self.residuals),
            "solver": dict(self.solver),
        }

    @staticmethod
    def from_dict(data: dict) -> "Certificate":
        def op(key):
            return PIOperator.from_dict(data[key]) if data.get(key) is not None else None
        return Certificate(kind=data["kind"], P=op("P"), degree=int(data["degree"]), epsilon=data["epsilon"],
                           delta=data["delta"], Z=op("Z"), K=op("K"), gamma=data.get("gamma"),
                           residuals=dict(data.get("residuals", {})), solver=dict(data.get("solver", {})),
                           system=data.get("system", ""))


def epsilon_for(pie: PieSystem, options: LpiOptions) -> float:
    """options.epsilon if given, else epsilon_scale * ||T T*|| from the collocation estimate."""
    if exists(options.epsilon):
        return float(options.epsilon)
    size = operator_norm_estimate(pie.T, size=options.norm_grid)
    return options.epsilon_scale * max(size * size, 1e-12)


def _gamma_block(gamma: Gamma, n: int, interval) -> PIOperator:
    eye = torch.eye(n, dtype=DTYPE)
    if isinstance(gamma, ScalarVariable):
        return gamma.times(-eye, interval)
    return PIOperator.multiplier(-float(gamma) * eye, interval)


def _feedback_term(pie: PieSystem, P: PIOperator, Z: Optional[PIOperator]) -> PIOperator:
    """A P + B2 Z."""
    AP = pie.A.compose(P)
    return AP.add(pie.B2.compose(Z)) if exists(Z) else AP


def lpi_operator(kind: str, pie: PieSystem, P: PIOperator, epsilon: float, Z: Optional[PIOperator] = None,
                 gamma: Optional[Gamma] = None) -> PIOperator:
    """
    The self-adjoint operator that must be negative semidefinite. P, Z and gamma
    may be affine decision expressions or concrete values.
    """
    T = pie.T
    if kind == PRIMAL_STABILITY:
        TPA = T.adjoint().compose(P).compose(pie.A)
        return TPA.add(TPA.adjoint()).add(T.adjoint().compose(T).scale(epsilon))

    drift = _feedback_term(pie, P, Z).compose(T.adjoint())
    lyapunov = drift.add(drift.adjoint()).add(T.compose(T.adjoint()).scale(epsilon))
    if kind in (DUAL_STABILITY, STABILIZATION):
        return lyapunov

    assert kind in (GAIN, HINF), f"unknown LPI kind {kind!r}"
    assert exists(gamma), "gain inequalities need gamma"
    iv = pie.interval
    n_z, n_w = pie.n_z, pie.n_w
    output = pie.C.compose(P)
    if exists(Z):
        output = output.add(PIOperator.multiplier(pie.D12, iv).compose(Z))
    output = output.compose(T.adjoint())
    D11 = PIOperator.multiplier(pie.D11, iv)
    top_left = _gamma_block(gamma, n_z, iv).add(PIOperator.multiplier(epsilon * torch.eye(n_z, dtype=DTYPE), iv))
    middle = _gamma_block(gamma, n_w, iv).add(PIOperator.multiplier(epsilon * torch.eye(n_w, dtype=DTYPE), iv))
    return block([[top_left, D11, output],
                  [D11.adjoint(), middle, pie.B1.adjoint()],
                  [output.adjoint(), pie.B1, lyapunov]])


def _build(kind: str, pie: PieSystem, options: LpiOptions, epsilon: float) -> LpiProgram:
    prog = LpiProgram(pie.interval, options)
    P = prog.declare_pos_pi(pie.dims, options.degree, name="P")
    Z = None
    if kind in (STABILIZATION, HINF):
        if pie.n_u == 0:
            raise ShapeMismatchError(f"{kind} synthesis needs a control input")
        Z = prog.declare_free_pi(pie.dims, (pie.n_u, 0), options.resolved_controller_degree, name="Z").op
    gamma = None
    if kind in (GAIN, HINF):
        if pie.n_w == 0 or pie.n_z == 0:
            raise ShapeMismatchError(f"{kind} needs disturbance and output channels")
        gamma = prog.declare_scalar("gamma")
        prog.set_objective(gamma)
    prog.constrain_negative(lpi_operator(kind, pie, P.op, epsilon, Z, gamma), name=kind)
    return prog


def build_program(kind: str, pie: PieSystem, options: Optional[LpiOptions] = None) -> LpiProgram:
    """The LPI program of one task, uncompiled."""
    assert kind in KINDS, f"unknown task {kind!r}"
    options = default(options, LpiOptions())
    if kind == GAIN and pie.n_u:
        pie = pie.without_control()
    return _build(kind, pie, options, epsilon_for(pie, options))


def _solve(kind: str, pie: PieSystem, options: Optional[LpiOptions]) -> Certificate:
    options = default(options, LpiOptions())
    epsilon = epsilon_for(pie, options)
    prog = _build(kind, pie, options, epsilon)
    result = solve_program(prog)
    cert = _certificate(kind, pie, options, epsilon, result)
    report = check_certificate(cert, pie)
    cert.residuals.update(report)
    if not report["passed"]:
        raise SolverFailureError(f"{kind} certificate failed its sampled checks", report)
    logger.info("%s certificate for %s at degree %d%s", kind, pie.name, options.degree,
                f", gamma = {cert.gamma:.6g}" if exists(cert.gamma) else "")
    return cert


def _certificate(kind: str, pie: PieSystem, options: LpiOptions, epsilon: float, result: LpiResult) -> Certificate:
    gamma = result.values.get("gamma")
    residuals = dict(coefficient_mismatch=result.max_equality_residual,
                     min_gram_eigenvalue=result.min_gram_eigenvalue)
    return Certificate(kind=kind, P=result.values["P"], degree=options.degree, epsilon=epsilon,
                       delta=options.delta, Z=result.values.get("Z"), gamma=gamma, residuals=residuals,
                       solver=result.solution.diagnostics(), system=pie.name)


def _sample_form(op: PIOperator, samples: int, generator: torch.Generator, degree: int = 3) -> Tuple[float, float]:
    """Extremes of <f, op f> / ||f||^2 over random polynomial f."""
    lowest, highest = math.inf, -math.inf
    for _ in range(samples):
        f = ZFunction.random(op.dims_in, degree, op.interval, generator)
        size = inner_product(f, f)
        if size <= 0:
            continue
        ratio = inner_product(f, op.apply(f)) / size
        lowest, highest = min(lowest, ratio), max(highest, ratio)
    return lowest, highest


def check_certificate(cert: Certificate, pie: PieSystem, samples: int = CHECK_SAMPLES,
                      generator: Optional[torch.Generator] = None) -> Dict[str, object]:
    """
    Sampled checks: P self-adjoint and coercive with margin delta / 2, and the
    LPI quadratic form at most LPI_TOLERANCE above zero.
    """
    generator = default(generator, make_generator(0))
    P = cert.P
    self_adjoint = P.is_self_adjoint(SELF_ADJOINT_TOLERANCE)
    coercivity, _ = _sample_form(P, samples, generator)
    L = lpi_operator(cert.kind, pie, P, cert.epsilon, cert.Z, cert.gamma)
    _, lpi_max = _sample_form(L, samples, generator)
    coercive = coercivity >= cert.delta / 2
    negative = lpi_max <= LPI_TOLERANCE
    report = dict(self_adjoint=self_adjoint, coercivity=coercivity, lpi_max=lpi_max,
                  passed=bool(self_adjoint and coercive and negative))
    logger.debug("certificate check %s: %s", cert.kind, report)
    return report


def check_stability_primal(pie: PieSystem, options: Optional[LpiOptions] = None) -> Certificate:
    return _solve(PRIMAL_STABILITY, pie, options)


def check_stability_dual(pie: PieSystem, options: Optional[LpiOptions] = None) -> Certificate:
    return _solve(DUAL_STABILITY, pie, options)


def compute_gain_bound(pie: PieSystem, options: Optional[LpiOptions] = None) -> Certificate:
    """Minimal gamma certified by the gain LPI at the given degree."""
    return _solve(GAIN, pie.without_control() if pie.n_u else pie, options)


def is_stable(pie: PieSystem, options: Optional[LpiOptions] = None, test: str = DUAL_STABILITY) -> bool:
    """
    Feasibility verdict of a stability LPI. Only a proof of infeasibility
    counts as False; DegreeBudgetError and SolverFailureError propagate.
    """
    try:
        _solve(test, pie, options)
        return True
    except InfeasibleError:
        return False


# controllers

def _fit_univariate(nodes: Tensor, values: Tensor, degree: int) -> Tensor:
    """Least-squares polynomial coefficients (ascending powers of s) of shape (degree + 1, rows, cols)."""
    x = nodes.numpy()
    rows, cols = values.shape[1:]
    out = np.zeros((degree + 1, rows, cols))
    for r in range(rows):
        for c in range(cols):
            coef = np.polynomial.Polynomial.fit(x, values[:, r, c].numpy(), degree).convert().coef
            out[:coef.size, r, c] = coef
    return torch.as_tensor(out, dtype=DTYPE)


def _relation_residual(K: PIOperator, P: PIOperator, Z: PIOperator, samples: int,
                       generator: torch.Generator) -> float:
    """max over random f of ||K P f - Z f|| / ||Z f||."""
    worst = 0.0
    for _ in range(samples):
        f = ZFunction.random(P.dims_in, 3, P.interval, generator)
        target = Z.apply(f).x
        error = float(torch.linalg.norm(K.apply(P.apply(f)).x - target))
        scale = max(float(torch.linalg.norm(target)), 1e-12 * max(1.0, inner_product(f, f) ** 0.5))
        worst = max(worst, error / scale)
    return worst


def invert_pos_pi(P: PIOperator, Z: PIOperator, grid_n: Optional[int] = None, fit_degree: Optional[int] = None,
                  tolerance: float = 1e-6, samples: int = 100,
                  generator: Optional[torch.Generator] = None) -> PIOperator:
    """
    K with K P = Z, for a coercive P and a Z with finite-dimensional output:
    discretise, solve K_d = Z_d P_d^-1, fit polynomial Q1 kernels and gate the
    result on the defining relation, raising the fit degree up to twice its
    starting value.
    """
    if Z.dims_in != P.dims_out or Z.dims_out[1] != 0:
        raise ShapeMismatchError(f"Z must map {P.dims_out} to a finite-dimensional space, got {Z}")
    generator = default(generator, make_generator(0))
    m, n = P.dims_in
    start = default(fit_degree, max(Z.Q1.trim().degree_s, 1))
    size = default(grid_n, max(32, 2 * (2 * start) + 8))
    grid = grid_for(P, size)
    P_d = discretize(P, grid)
    condition = float(torch.linalg.cond(P_d))
    if not math.isfinite(condition) or condition > MAX_INVERSE_CONDITION:
        raise ControllerRecoveryError(f"discretised P is ill-conditioned (condition {condition:.3g})")
    Z_d = discretize(Z, grid)
    K_d = torch.linalg.solve(P_d.T, Z_d.T).T
    finite = K_d[:, :m]
    samples_q1 = K_d[:, m:].reshape(Z.dims_out[0], n, size) / grid.weights
    values = samples_q1.permute(2, 0, 1)

    residual = math.inf
    for degree in range(start, 2 * start + 1):
        Q1 = PolyMatrix(_fit_univariate(grid.nodes, values, degree).unsqueeze(1), P.interval, (S,))
        K = PIOperator.from_parts(P.dims_out, Z.dims_out, P.interval, P=finite, Q1=Q1)
        residual = _relation_residual(K, P, Z, samples, generator)
        if residual <= tolerance:
            logger.info("recovered controller at fit degree %d, relation residual %.3g", degree, residual)
            return K.trim()
        logger.warning("controller fit at degree %d has relation residual %.3g, raising the degree",
                       degree, residual)
    raise ControllerRecoveryError(f"controller fit residual {residual:.3g} exceeds {tolerance:.1g} "
                                  f"at fit degree {2 * start}")


def _synthesize(kind: str, pie: PieSystem, options: Optional[LpiOptions]) -> Certificate:
    options = default(options, LpiOptions())
    cert = _solve(kind, pie, options)
    K = invert_pos_pi(cert.P, cert.Z, fit_degree=options.resolved_controller_degree)
    cert.K = K
    closed = closed_loop(pie, K)
    try:
        if kind == STABILIZATION:
            check_stability_dual(closed, options)
        else:
            verified = compute_gain_bound(closed, options)
            cert.residuals["closed_loop_gamma"] = verified.gamma
            if verified.gamma > GAIN_SLACK * cert.gamma:
                raise ControllerRecoveryError(f"closed loop certifies gamma {verified.gamma:.6g}, "
                                              f"above {GAIN_SLACK} x {cert.gamma:.6g}")
    except (InfeasibleError, DegreeBudgetError) as e:
        raise ControllerRecoveryError(f"the recovered controller could not be certified: {e}") from e
    cert.residuals["closed_loop_verified"] = True
    return cert


def synthesize_stabilizing(pie: PieSystem, options: Optional[LpiOptions] = None) -> Certificate:
    return _synthesize(STABILIZATION, pie, options)


def synthesize_hinf(pie: PieSystem, options: Optional[LpiOptions] = None) -> Certificate:
    return _synthesize(HINF, pie, options)


RUNNERS: Dict[str, Callable[..., Certificate]] = {
    PRIMAL_STABILITY: check_stability_primal,
    DUAL_STABILITY: check_stability_dual,
    GAIN: compute_gain_bound,
    STABILIZATION: synthesize_stabilizing,
    HINF: synthesize_hinf,
}


# stability margins

@dataclass(frozen=True)
class SweepOptions:
    lo: float = 1.0
    hi: float = 20.0
    iterations: int = 40
    parameter: str = "lam"
    test: str = DUAL_STABILITY


@dataclass
class MarginResult:
    # [lower, upper] brackets the boundary: lower feasible, upper infeasible.
    lower: Optional[float]
    upper: Optional[float]
    trials: List[Tuple[float, bool]]

    @property
    def width(self) -> float:
        if exists(self.lower) and exists(self.upper):
            return self.upper - self.lower
        return math.inf

    def to_dict(self) -> dict:
        return asdict(self)


def stability_margin(builder: Callable[[float], OdePdeSystem], lo: float, hi: float,
                     options: Optional[LpiOptions] = None, test: str = DUAL_STABILITY,
                     iterations: int = 40) -> MarginResult:
    """Bisection of a scalar system parameter for the stability LPI boundary; solver errors propagate."""
    assert lo < hi, f"need lo < hi, got [{lo}, {hi}]"
    assert test in (PRIMAL_STABILITY, DUAL_STABILITY), f"unknown stability test {test!r}"
    trials: List[Tuple[float, bool]] = []

    def feasible(value: float) -> bool:
        verdict = is_stable(convert(builder(value)), options, test)
        trials.append((value, verdict))
        logger.info("margin trial %.10g: %s", value, "feasible" if verdict else "infeasible")
        return verdict

    if not feasible(lo):
        return MarginResult(lower=None, upper=lo, trials=trials)
    if feasible(hi):
        return MarginResult(lower=hi, upper=None, trials=trials)
    for _ in range(iterations):
        middle = (lo + hi) / 2
        if feasible(middle):
            lo = middle
        else:
            hi = middle
    logger.info("stability boundary in [%.10g, %.10g]", lo, hi)
    return MarginResult(lower=lo, upper=hi, trials=trials)


def sweep(system_name: str, params: dict, sweep_options: SweepOptions,
          options: Optional[LpiOptions] = None) -> MarginResult:
    """stability_margin over one named parameter of a builtin system."""
    if sweep_options.parameter in params:
        raise PIError(f"{sweep_options.parameter!r} is swept and cannot also be fixed")

    def builder(value: float) -> OdePdeSystem:
        return builtin(system_name, dict(params, **{sweep_options.parameter: value}))
    return stability_margin(builder, sweep_options.lo, sweep_options.hi, options, sweep_options.test,
                            sweep_options.iterations)
