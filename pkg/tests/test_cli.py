import pytest

from fixtures import *
from pie_pytorch import cli
from pie_pytorch.exceptions import InfeasibleError
from pie_pytorch.problem_file import read_certificate
from pie_pytorch.sdpa import read_sdpa

SCALAR_GAIN = """\
[system]
builtin = scalar_ode
a = -1.0

[task]
kind = gain

[options]
epsilon = 1e-6
"""

SIMULATION = """\
[system]
builtin = diffusion_dirichlet
lam = 1.0
with_io = true

[task]
kind = simulate

[options]
grid = 12
step = 1e-3
horizon = 0.01
disturbance = sin_1
"""


@pytest.fixture()
def problem(tmp_path):
    path = tmp_path / "scalar.txt"
    path.write_text(SCALAR_GAIN)
    return path


def test_run_writes_a_certificate(problem, tmp_path, capsys):
    assert cli.main(["run", str(problem), "--out", str(tmp_path / "out")]) == cli.EXIT_OK
    cert = read_certificate(tmp_path / "out" / "scalar.certificate.json")
    assert abs(cert.gamma - 1.0) < 1e-4
    assert "gamma:" in capsys.readouterr().out


def test_runs_are_deterministic(problem, tmp_path):
    for name in ("first", "second"):
        assert cli.main(["run", str(problem), "--out", str(tmp_path / name)]) == cli.EXIT_OK
    first = (tmp_path / "first" / "scalar.certificate.json").read_bytes()
    assert first == (tmp_path / "second" / "scalar.certificate.json").read_bytes()


def test_export_sdpa(problem, tmp_path):
    assert cli.main(["export-sdpa", str(problem), "--out", str(tmp_path)]) == cli.EXIT_OK
    exported = read_sdpa(tmp_path / "scalar.dat-s")
    assert exported.num_vars >= 1
    assert len(exported.blocks) == 2


def test_simulate_writes_traces(tmp_path):
    path = tmp_path / "heat.txt"
    path.write_text(SIMULATION)
    assert cli.main(["simulate", str(path), "--out", str(tmp_path)]) == cli.EXIT_OK
    lines = (tmp_path / "heat.csv").read_text().splitlines()
    assert lines[0] == "t,z0,energy"
    assert len(lines) == 12


def test_overrides(problem):
    args = cli._parser().parse_args(["run", str(problem), "--degree", "4", "--delta", "1e-3", "--seed", "7",
                                     "--grid", "40"])
    loaded = cli._load(args)
    assert loaded.lpi.degree == 4 and loaded.lpi.delta == 1e-3
    assert loaded.lpi.solver.seed == 7 and loaded.seed == 7
    assert loaded.sim.grid_size == 40
    assert loaded.lpi.epsilon == 1e-6


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert out.count("pass  ") == len(cli.SELFTESTS) == 6
    assert "two-state gain" in out and "Dirichlet diffusion" in out


def test_infeasible_tasks_exit_with_one(problem, monkeypatch):
    def infeasible(pie, options):
        raise InfeasibleError("no certificate")
    monkeypatch.setitem(cli.RUNNERS, "gain", infeasible)
    assert cli.main(["run", str(problem)]) == cli.EXIT_INFEASIBLE


def test_bad_inputs_exit_with_two(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("[system]\nbuiltin = transport\n[task]\nkind = gain\n[options]\nfoo = 1\n")
    assert cli.main(["run", str(bad)]) == cli.EXIT_ERROR
    assert cli.main(["run", str(tmp_path / "missing.txt")]) == cli.EXIT_ERROR
    # a simulation task has no SDP
    sim = tmp_path / "sim.txt"
    sim.write_text(SIMULATION)
    assert cli.main(["export-sdpa", str(sim), "--out", str(tmp_path)]) == cli.EXIT_ERROR
