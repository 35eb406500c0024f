import pytest
import torch

from fixtures import *
from pie_pytorch.exceptions import SdpaParseError
from pie_pytorch.sdp_solver import SdpProblem
from pie_pytorch.sdpa import OFFSET_TAG, export_sdpa, import_sdpa, read_sdpa, write_sdpa

EXAMPLE = """\
"two variables, one full and one diagonal block
2
2
{2, -2}
1.5 -2
0 1 1 2 1.0
1 1 1 1 3.0
2 1 2 2 0.25
1 2 2 2 -1
"""


def sample_problem(generator):
    full = torch.randn(3, 3, 3, dtype=DTYPE, generator=generator)
    full = full + full.transpose(1, 2)
    diagonal = torch.diag_embed(torch.randn(3, 2, dtype=DTYPE, generator=generator))
    return SdpProblem(c=torch.randn(2, dtype=DTYPE, generator=generator), blocks=[full, diagonal],
                      diagonal=(False, True), objective_offset=0.125)


def test_export_then_import_is_exact(generator):
    problem = sample_problem(generator)
    restored = import_sdpa(export_sdpa(problem))
    assert torch.equal(restored.c, problem.c)
    assert restored.diagonal == (False, True)
    assert restored.objective_offset == 0.125
    for F, G in zip(problem.blocks, restored.blocks):
        assert torch.equal(F, G)


def test_offset_is_a_comment(generator):
    text = export_sdpa(sample_problem(generator))
    comments = [line for line in text.splitlines() if line.startswith('"')]
    assert any(line.split()[0] == f'"{OFFSET_TAG}' for line in comments)
    assert text.splitlines()[len(comments)] == "2"


def test_separators_and_symmetric_entries():
    problem = import_sdpa(EXAMPLE)
    assert problem.block_sizes == [2, 2]
    assert problem.diagonal == (False, True)
    assert problem.c.tolist() == [1.5, -2.0]
    assert problem.blocks[0][0].tolist() == [[0.0, 1.0], [1.0, 0.0]]
    assert float(problem.blocks[0][2, 1, 1]) == 0.25
    assert float(problem.blocks[1][1, 1, 1]) == -1.0


@pytest.mark.parametrize("text, line", [
    ("1\n1\n1\n", 3),
    ("1\n1\n1\n1.0\n0 1 1 1\n", 5),
    ("1\n1\n1\n1.0\n0 2 1 1 1.0\n", 5),
    ("1\n1\n1\n1.0\n2 1 1 1 1.0\n", 5),
    ("1\n1\n-2\n1.0\n0 1 1 1 1.0\n0 1 1 2 1.0\n", 6),
    ("1\n1\n2\n1.0 2.0\n", 4),
    ("x\n1\n1\n1.0\n", 1),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(SdpaParseError) as error:
        import_sdpa(text)
    assert error.value.line == line
    assert f"line {line}" in str(error.value)


def test_files(tmp_path, generator):
    problem = sample_problem(generator)
    path = tmp_path / "problem.dat-s"
    write_sdpa(problem, path)
    assert torch.equal(read_sdpa(path).blocks[0], problem.blocks[0])
