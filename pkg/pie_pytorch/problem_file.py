"""
Problem files and certificate files.

A problem file is line oriented, with three sections:

    # diffusion margin
    [system]
    builtin = diffusion_dirichlet
    lam = 1.0

    [task]
    kind = stability_dual

    [options]
    degree = 3

Instead of `builtin`, [system] may give the system matrices directly.
Matrices are JSON lists of rows; polynomial entries are lists of
[deg_s, deg_theta, value] triples:

    n3 = 1
    A2 = [[ [[0, 0, 1.0]] ]]
    B = [[1, 0, 0, 0], [0, 0, 1, 0]]
    disturbance.pde = [[ [[0, 0, 1.0], [1, 0, -1.0]] ]]

Certificates are written as JSON with sorted keys and repr-exact floats.
"""
import inspect
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import torch

from pie_pytorch.common import DTYPE
from pie_pytorch.exceptions import PIError, ProblemFileError
from pie_pytorch.lpi import LpiOptions
from pie_pytorch.odepde import BUILTINS, InputBlock, OdePdeSystem, builtin
from pie_pytorch.polynomial import S, PolyMatrix
from pie_pytorch.sdp_solver import SolverOptions
from pie_pytorch.simulate import INTEGRATORS, SimConfig
from pie_pytorch.synthesis import (DUAL_STABILITY, GAIN, HINF, PRIMAL_STABILITY, STABILIZATION, Certificate,
                                   SweepOptions)

logger = logging.getLogger(__name__)

SECTIONS = ("system", "task", "options")
SIMULATE = "simulate"
MARGIN_SWEEP = "margin_sweep"
# task names in problem files, mapped onto the synthesis kinds.
TASKS = {
    "stability_primal": PRIMAL_STABILITY,
    "stability_dual": DUAL_STABILITY,
    "gain": GAIN,
    "stabilize": STABILIZATION,
    "hinf": HINF,
    SIMULATE: SIMULATE,
    MARGIN_SWEEP: MARGIN_SWEEP,
}

INTEGER_KEYS = ("n_o", "n1", "n2", "n3", "n_z")
MATRIX_KEYS = ("A", "E10", "B", "Bx", "C", "C10")
POLY_KEYS = ("A0", "A1", "A2", "E", "Ea", "Eb", "Ca", "Cb")
INPUT_KEYS = tuple(f"{group}.{part}" for group in ("disturbance", "control") for part in ("ode", "pde", "feedthrough"))
SYSTEM_KEYS = ("interval", "name") + INTEGER_KEYS + MATRIX_KEYS + POLY_KEYS + INPUT_KEYS

LPI_KEYS = ("degree", "max_degree", "max_slack_degree", "epsilon", "epsilon_scale", "delta", "controller_degree",
            "rank_tolerance", "equality_tolerance")
SOLVER_KEYS = ("gap_tolerance", "feasibility_tolerance", "infeasibility_tolerance", "max_iterations")
SIM_KEYS = ("grid", "step", "horizon", "integrator", "disturbance")
SWEEP_KEYS = ("parameter", "lo", "hi", "iterations", "test")
OPTION_KEYS = LPI_KEYS + SOLVER_KEYS + SIM_KEYS + SWEEP_KEYS + ("seed", "with_controller")


@dataclass
class Entry:
    value: str
    line: int


@dataclass
class ProblemFile:
    system: OdePdeSystem
    task: str
    lpi: LpiOptions = field(default_factory=LpiOptions)
    sim: SimConfig = field(default_factory=SimConfig)
    sweep: Optional[SweepOptions] = None
    # builtin name and fixed parameters, needed to rebuild the system during a sweep.
    builtin: Optional[Tuple[str, Dict[str, float]]] = None
    seed: int = 20210317
    with_controller: bool = False


def _sections(text: str) -> Dict[str, Dict[str, Entry]]:
    sections: Dict[str, Dict[str, Entry]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in SECTIONS:
                raise ProblemFileError(f"unknown section [{current}], expected one of {list(SECTIONS)}", lineno)
            if current in sections:
                raise ProblemFileError(f"section [{current}] appears twice", lineno)
            sections[current] = {}
            continue
        if current is None:
            raise ProblemFileError("key outside of a section", lineno)
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ProblemFileError(f"expected 'key = value', got {line!r}", lineno)
        if key in sections[current]:
            raise ProblemFileError(f"duplicate key {key!r}", lineno)
        sections[current][key] = Entry(value, lineno)
    return sections


def _json(entry: Entry, key: str):
    try:
        return json.loads(entry.value)
    except json.JSONDecodeError as e:
        raise ProblemFileError(f"{key}: malformed value {entry.value!r} ({e.msg})", entry.line)


def _number(entry: Entry, key: str, integer: bool = False):
    value = _json(entry, key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProblemFileError(f"{key}: expected a number, got {entry.value!r}", entry.line)
    if integer:
        if float(value) != int(value):
            raise ProblemFileError(f"{key}: expected an integer, got {entry.value!r}", entry.line)
        return int(value)
    return float(value)


def _flag(entry: Entry, key: str) -> bool:
    value = entry.value.lower()
    if value not in ("true", "false"):
        raise ProblemFileError(f"{key}: expected true or false, got {entry.value!r}", entry.line)
    return value == "true"


def _matrix(entry: Entry, key: str):
    value = _json(entry, key)
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [[float(value)]]
    if not isinstance(value, list) or not all(isinstance(row, list) for row in value):
        raise ProblemFileError(f"{key}: expected a list of rows", entry.line)
    if len({len(row) for row in value}) > 1:
        raise ProblemFileError(f"{key}: rows have different lengths", entry.line)
    try:
        return torch.tensor(value, dtype=DTYPE)
    except (TypeError, ValueError, RuntimeError) as e:
        raise ProblemFileError(f"{key}: expected numeric entries ({e})", entry.line)


def _poly(entry: Entry, key: str, interval) -> PolyMatrix:
    value = _json(entry, key)
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return PolyMatrix.constant([[float(value)]], interval, (S,))
    if not isinstance(value, list) or not all(isinstance(row, list) for row in value):
        raise ProblemFileError(f"{key}: expected a list of rows", entry.line)
    entries = []
    for row in value:
        converted = []
        for item in row:
            # a bare number is a constant entry.
            if isinstance(item, (int, float)) and not isinstance(item, bool):
                item = [[0, 0, item]]
            if not isinstance(item, list) or not all(isinstance(t, list) and len(t) == 3 for t in item):
                raise ProblemFileError(f"{key}: polynomial entries are lists of [deg_s, deg_theta, value]",
                                       entry.line)
            for ds, dt, _ in item:
                if int(ds) != ds or int(dt) != dt or ds < 0 or dt < 0:
                    raise ProblemFileError(f"{key}: degrees must be non-negative integers", entry.line)
                if dt != 0:
                    raise ProblemFileError(f"{key}: system coefficients depend on s only", entry.line)
            converted.append(item)
        entries.append(converted)
    try:
        return PolyMatrix.from_triples(entries, interval, (S,))
    except PIError as e:
        raise ProblemFileError(f"{key}: {e}", entry.line)


def _builtin_system(entries: Dict[str, Entry]) -> Tuple[OdePdeSystem, Tuple[str, Dict[str, float]]]:
    name_entry = entries["builtin"]
    name = name_entry.value
    if name not in BUILTINS:
        raise ProblemFileError(f"unknown builtin system {name!r}, expected one of {sorted(BUILTINS)}",
                               name_entry.line)
    accepted = inspect.signature(BUILTINS[name]).parameters
    params = {}
    for key, entry in entries.items():
        if key == "builtin":
            continue
        if key not in accepted:
            raise ProblemFileError(f"unknown parameter {key!r} for {name}, expected one of {list(accepted)}",
                                   entry.line)
        if accepted[key].annotation is bool:
            params[key] = _flag(entry, key)
        else:
            params[key] = _number(entry, key, integer=accepted[key].annotation is int)
    try:
        return builtin(name, params), (name, params)
    except PIError as e:
        raise ProblemFileError(str(e), name_entry.line)


def _custom_system(entries: Dict[str, Entry]) -> OdePdeSystem:
    for key, entry in entries.items():
        if key not in SYSTEM_KEYS:
            raise ProblemFileError(f"unknown system key {key!r}", entry.line)
    interval = (0.0, 1.0)
    if "interval" in entries:
        value = _json(entries["interval"], "interval")
        if not (isinstance(value, list) and len(value) == 2 and value[0] < value[1]):
            raise ProblemFileError("interval must be [a, b] with a < b", entries["interval"].line)
        interval = (float(value[0]), float(value[1]))
    kwargs = dict(interval=interval)
    for key in INTEGER_KEYS:
        if key in entries:
            kwargs[key] = _number(entries[key], key, integer=True)
    for key in MATRIX_KEYS:
        if key in entries:
            kwargs[key] = _matrix(entries[key], key)
    for key in POLY_KEYS:
        if key in entries:
            kwargs[key] = _poly(entries[key], key, interval)
    for group in ("disturbance", "control"):
        parts = {}
        for part in ("ode", "pde", "feedthrough"):
            key = f"{group}.{part}"
            if key in entries:
                entry = entries[key]
                parts[part] = _poly(entry, key, interval) if part == "pde" else _matrix(entry, key)
        if parts:
            kwargs[group] = InputBlock(**parts)
    if "name" in entries:
        kwargs["name"] = entries["name"].value
    first_line = min(entry.line for entry in entries.values()) if entries else None
    try:
        return OdePdeSystem(**kwargs)
    except (PIError, AssertionError) as e:
        raise ProblemFileError(f"invalid system: {e}", first_line)


def parse_problem(text: str) -> ProblemFile:
    sections = _sections(text)
    for name in ("system", "task"):
        if name not in sections:
            raise ProblemFileError(f"missing section [{name}]")
    system_entries = sections["system"]
    if "builtin" in system_entries:
        system, spec = _builtin_system(system_entries)
    else:
        system, spec = _custom_system(system_entries), None

    task_entries = sections["task"]
    for key, entry in task_entries.items():
        if key != "kind":
            raise ProblemFileError(f"unknown task key {key!r}", entry.line)
    if "kind" not in task_entries:
        raise ProblemFileError("[task] needs a kind")
    kind_entry = task_entries["kind"]
    if kind_entry.value not in TASKS:
        raise ProblemFileError(f"unknown task {kind_entry.value!r}, expected one of {list(TASKS)}", kind_entry.line)
    task = TASKS[kind_entry.value]

    options = sections.get("options", {})
    for key, entry in options.items():
        if key not in OPTION_KEYS:
            raise ProblemFileError(f"unknown option {key!r}", entry.line)
    lpi_values, solver_values, sim_values, sweep_values = {}, {}, {}, {}
    for key, entry in options.items():
        if key in ("degree", "max_degree", "max_slack_degree", "controller_degree"):
            lpi_values[key] = _number(entry, key, integer=True)
        elif key in LPI_KEYS:
            lpi_values[key] = _number(entry, key)
        elif key == "max_iterations":
            solver_values[key] = _number(entry, key, integer=True)
        elif key in SOLVER_KEYS:
            solver_values[key] = _number(entry, key)
        elif key == "grid":
            sim_values["grid_size"] = _number(entry, key, integer=True)
        elif key in ("step", "horizon"):
            sim_values[key] = _number(entry, key)
        elif key == "integrator":
            if entry.value not in INTEGRATORS:
                raise ProblemFileError(f"unknown integrator {entry.value!r}", entry.line)
            sim_values[key] = entry.value
        elif key == "disturbance":
            sim_values[key] = entry.value
        elif key == "iterations":
            sweep_values[key] = _number(entry, key, integer=True)
        elif key in ("lo", "hi"):
            sweep_values[key] = _number(entry, key)
        elif key == "parameter":
            sweep_values[key] = entry.value
        elif key == "test":
            if TASKS.get(entry.value) not in (PRIMAL_STABILITY, DUAL_STABILITY):
                raise ProblemFileError("sweep test must be stability_primal or stability_dual", entry.line)
            sweep_values[key] = TASKS[entry.value]

    seed = _number(options["seed"], "seed", integer=True) if "seed" in options else ProblemFile.seed
    with_controller = _flag(options["with_controller"], "with_controller") if "with_controller" in options else False
    try:
        lpi = LpiOptions(solver=SolverOptions(**solver_values, seed=seed), **lpi_values)
        sim = SimConfig(**sim_values)
    except PIError as e:
        raise ProblemFileError(str(e))
    sweep = None
    if task == MARGIN_SWEEP:
        if spec is None:
            raise ProblemFileError("margin_sweep needs a builtin system", kind_entry.line)
        sweep = SweepOptions(**sweep_values)
        if sweep.parameter in spec[1]:
            raise ProblemFileError(f"{sweep.parameter!r} is swept and cannot also be fixed",
                                   system_entries[sweep.parameter].line)
    elif sweep_values:
        raise ProblemFileError(f"sweep options given for task {kind_entry.value!r}",
                               min(options[k].line for k in options if k in SWEEP_KEYS))
    logger.info("parsed problem: %s on %s", kind_entry.value, system.name)
    return ProblemFile(system=system, task=task, lpi=lpi, sim=sim, sweep=sweep, builtin=spec, seed=seed,
                       with_controller=with_controller)


def read_problem(path) -> ProblemFile:
    return parse_problem(Path(path).read_text())


# certificates

def _plain(value):
    if torch.is_tensor(value):
        return _plain(value.tolist())
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def dumps_certificate(cert: Certificate) -> str:
    return json.dumps(_plain(cert.to_dict()), sort_keys=True, indent=1) + "\n"


def loads_certificate(text: str) -> Certificate:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProblemFileError(f"malformed certificate: {e.msg}", e.lineno)
    try:
        return Certificate.from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        raise ProblemFileError(f"incomplete certificate: {e}")


def write_certificate(cert: Certificate, path) -> None:
    Path(path).write_text(dumps_certificate(cert))


def read_certificate(path) -> Certificate:
    return loads_certificate(Path(path).read_text())
