"""
Command-line front end.

    pie-synthesis run problem.txt --out results/
    pie-synthesis export-sdpa problem.txt --out results/
    pie-synthesis simulate problem.txt --grid 32
    pie-synthesis sweep problem.txt
    pie-synthesis selftest

Exit codes: 0 on success, 1 when an LPI is infeasible, 2 on any other error.
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import torch

from pie_pytorch.common import DTYPE, exists, make_generator
from pie_pytorch.exceptions import InfeasibleError, PIError
from pie_pytorch.lpi import LpiOptions, compile
from pie_pytorch.odepde import InputBlock, OdePdeSystem, diffusion_dirichlet, transport
from pie_pytorch.pde2pie import PieSystem, convert
from pie_pytorch.pi_operator import PIOperator, ZFunction, inner_product, norm
from pie_pytorch.polynomial import PolyMatrix
from pie_pytorch.problem_file import MARGIN_SWEEP, SIMULATE, ProblemFile, read_problem, write_certificate
from pie_pytorch.sdp_solver import INFEASIBLE, OPTIMAL, block_diagonal_problem, solve
from pie_pytorch.sdpa import write_sdpa
from pie_pytorch.simulate import run as simulate_run
from pie_pytorch.simulate import write_csv
from pie_pytorch.synthesis import KINDS, RUNNERS, Certificate, build_program, compute_gain_bound, is_stable, \
    sweep, synthesize_hinf, synthesize_stabilizing

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_ERROR = 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pie-synthesis",
                                     description="Stability, L2-gain and H-infinity synthesis for ODE-PDE systems.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    def problem_command(name: str, help: str) -> argparse.ArgumentParser:
        command = commands.add_parser(name, help=help)
        command.add_argument("problem", type=Path, help="problem file")
        command.add_argument("--degree", type=int, help="polynomial degree of the Lyapunov operator")
        command.add_argument("--epsilon", type=float, help="absolute strictness margin of the LPI")
        command.add_argument("--delta", type=float, help="coercivity margin of the Lyapunov operator")
        command.add_argument("--grid", type=int, help="collocation grid size for simulation")
        command.add_argument("--seed", type=int, help="seed of the solver's randomised start")
        command.add_argument("--out", type=Path, default=Path("."), help="output directory")
        return command

    problem_command("run", "solve the task of a problem file")
    problem_command("export-sdpa", "write the compiled SDP of an LPI task in SDPA sparse format")
    problem_command("simulate", "simulate the system of a problem file and write CSV traces")
    problem_command("sweep", "bisect the stability boundary over a builtin system parameter")
    commands.add_parser("selftest", help="run the built-in oracle checks")
    return parser


def _load(args) -> ProblemFile:
    problem = read_problem(args.problem)
    lpi_changes = {}
    if exists(args.degree):
        lpi_changes["degree"] = args.degree
    if exists(args.epsilon):
        lpi_changes["epsilon"] = args.epsilon
    if exists(args.delta):
        lpi_changes["delta"] = args.delta
    if exists(args.seed):
        lpi_changes["solver"] = replace(problem.lpi.solver, seed=args.seed)
        problem.seed = args.seed
    problem.lpi = problem.lpi.replace(**lpi_changes)
    if exists(args.grid):
        problem.sim = replace(problem.sim, grid_size=args.grid)
    return problem


def _summary(cert: Certificate) -> str:
    lines = [f"task:      {cert.kind}", f"system:    {cert.system}", f"degree:    {cert.degree}",
             f"epsilon:   {cert.epsilon:.6g}"]
    if exists(cert.gamma):
        lines.append(f"gamma:     {cert.gamma:.10g}")
    lines.append(f"solver:    {cert.solver.get('status')} in {cert.solver.get('iterations')} iterations")
    if exists(cert.K):
        lines.append("controller K: u(t) = K x + int K1(s) v(t, s) ds")
        lines.append(f"  K  = {cert.K.P.evaluate().tolist()}")
        for (i, j), value in _kernel_terms(cert.K.Q1):
            lines.append(f"  K1[{i}] s^{j}: {value:.10g}")
    return "\n".join(lines)


def _kernel_terms(p: PolyMatrix) -> List[Tuple[Tuple[int, int], float]]:
    terms = []
    for r, row in enumerate(p.to_triples()):
        for c, triples in enumerate(row):
            terms.extend(((c, int(ds)), value) for ds, _, value in triples)
    return sorted(terms)


def _stem(problem_path: Path) -> str:
    return problem_path.stem


def _run_lpi(problem: ProblemFile, args) -> int:
    pie = convert(problem.system)
    cert = RUNNERS[problem.task](pie, problem.lpi)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{_stem(args.problem)}.certificate.json"
    write_certificate(cert, path)
    print(_summary(cert))
    print(f"certificate written to {path}")
    return EXIT_OK


def _run_simulation(problem: ProblemFile, args) -> int:
    pie = convert(problem.system)
    cfg = problem.sim
    if problem.with_controller:
        synthesize = synthesize_hinf if pie.n_w and pie.n_z else synthesize_stabilizing
        cert = synthesize(pie, problem.lpi)
        cfg = replace(cfg, controller=cert.K)
    result = simulate_run(pie, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{_stem(args.problem)}.csv"
    write_csv(result, path)
    print(f"simulated {result.times.numel() - 1} steps to t = {result.horizon:.6g} on {cfg.grid_size} nodes")
    print(f"final energy {float(result.energy[-1]):.6g}, empirical gain {result.gain:.6g}")
    print(f"traces written to {path}")
    return EXIT_OK


def _run_sweep(problem: ProblemFile, args) -> int:
    if not exists(problem.builtin) or not exists(problem.sweep):
        raise PIError("sweep needs a builtin system and the margin_sweep task")
    name, params = problem.builtin
    margin = sweep(name, params, problem.sweep, problem.lpi)
    lower = "none" if margin.lower is None else f"{margin.lower:.10g}"
    upper = "none" if margin.upper is None else f"{margin.upper:.10g}"
    print(f"{problem.sweep.parameter} feasible up to {lower}, infeasible from {upper} "
          f"({len(margin.trials)} trials)")
    return EXIT_OK


def _export(problem: ProblemFile, args) -> int:
    if problem.task not in KINDS:
        raise PIError(f"task {problem.task!r} has no SDP to export")
    compiled = compile(build_program(problem.task, convert(problem.system), problem.lpi))
    if not compiled.consistent:
        raise InfeasibleError("the coefficient equalities are inconsistent", status=INFEASIBLE)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{_stem(args.problem)}.dat-s"
    write_sdpa(compiled.problem, path)
    print(f"{compiled.problem.num_vars} variables, blocks {compiled.block_sizes}; written to {path}")
    return EXIT_OK


def run(args) -> int:
    problem = _load(args)
    if args.command == "simulate" or (args.command == "run" and problem.task == SIMULATE):
        return _run_simulation(problem, args)
    if args.command == "sweep" or (args.command == "run" and problem.task == MARGIN_SWEEP):
        return _run_sweep(problem, args)
    if args.command == "export-sdpa":
        return _export(problem, args)
    return _run_lpi(problem, args)


# selftest

def _check_adjoint(generator: torch.Generator) -> float:
    worst = 0.0
    for _ in range(20):
        op = PIOperator.random((2, 2), (1, 2), 2, (0.0, 1.0), generator)
        f = ZFunction.random((2, 2), 2, (0.0, 1.0), generator)
        g = ZFunction.random((1, 2), 2, (0.0, 1.0), generator)
        left, right = inner_product(g, op.apply(f)), inner_product(op.adjoint().apply(g), f)
        worst = max(worst, abs(left - right) / max(1.0, abs(left)))
    return worst


def _check_compose(generator: torch.Generator) -> float:
    worst = 0.0
    for _ in range(20):
        op_a = PIOperator.random((1, 2), (2, 1), 2, (-1.0, 2.0), generator)
        op_b = PIOperator.random((2, 1), (1, 2), 2, (-1.0, 2.0), generator)
        f = ZFunction.random((2, 1), 2, (-1.0, 2.0), generator)
        direct = op_a.apply(op_b.apply(f))
        composed = op_a.compose(op_b).apply(f)
        worst = max(worst, norm(direct.add(composed.scale(-1.0))) / max(1.0, norm(direct)))
    return worst


def _check_transport(generator: torch.Generator) -> float:
    pie: PieSystem = convert(transport())
    one = PolyMatrix.identity(1, pie.interval)
    residual = max(pie.T.R0.max_abs_coefficient(), pie.T.R2.max_abs_coefficient(),
                   pie.T.R1.add(one.neg()).max_abs_coefficient(), pie.A.R0.add(one).max_abs_coefficient())
    return residual


def _check_sign_cases(generator: torch.Generator) -> float:
    feasible = solve(block_diagonal_problem([1.0], [[torch.ones(1, 1, dtype=DTYPE), torch.ones(1, 1, dtype=DTYPE)]]))
    infeasible = solve(block_diagonal_problem([0.0], [[torch.ones(1, 1, dtype=DTYPE), torch.ones(1, 1, dtype=DTYPE)],
                                                      [torch.zeros(1, 1, dtype=DTYPE),
                                                       -torch.ones(1, 1, dtype=DTYPE)]]))
    ok = feasible.status == OPTIMAL and abs(float(feasible.x[0]) - 1.0) < 1e-6 and infeasible.status == INFEASIBLE
    return 0.0 if ok else 1.0


def _check_two_state_gain(generator: torch.Generator) -> float:
    # G(s) = 1 / (s^2 + s + 4) peaks at w^2 = 3.5 with |G| = 1 / sqrt(3.75).
    system = OdePdeSystem(n_o=2, n_z=1, A=[[0.0, 1.0], [-4.0, -1.0]], C=[[1.0, 0.0]],
                          disturbance=InputBlock(ode=[[0.0], [1.0]]))
    gamma = compute_gain_bound(convert(system), LpiOptions(epsilon=1e-6)).gamma
    return abs(gamma * 3.75 ** 0.5 - 1.0)


def _check_dirichlet_verdicts(generator: torch.Generator) -> float:
    stable = is_stable(convert(diffusion_dirichlet(1.0)))
    unstable = is_stable(convert(diffusion_dirichlet(15.0)))
    return 0.0 if stable and not unstable else 1.0


SELFTESTS: Sequence[Tuple[str, Callable[[torch.Generator], float], float]] = (
    ("adjoint inner-product identity", _check_adjoint, 1e-10),
    ("composition matches repeated application", _check_compose, 1e-10),
    ("transport conversion kernels", _check_transport, 1e-14),
    ("scalar LMI sign cases", _check_sign_cases, 0.5),
    ("two-state gain against its frequency peak", _check_two_state_gain, 1e-3),
    ("Dirichlet diffusion stability verdicts", _check_dirichlet_verdicts, 0.5),
)


def selftest(seed: int = 20210317) -> int:
    generator = make_generator(seed)
    failures = 0
    for name, check, tolerance in SELFTESTS:
        try:
            value = check(generator)
            passed = value <= tolerance
        except PIError as e:
            value, passed = float("nan"), False
            logger.error("%s raised %s", name, e)
        failures += not passed
        print(f"{'pass' if passed else 'FAIL'}  {name:<45s} {value:.3e}")
    return EXIT_OK if failures == 0 else EXIT_ERROR


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "selftest":
        return selftest()
    try:
        return run(args)
    except InfeasibleError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (PIError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
