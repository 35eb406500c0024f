"""
Sparse SDPA text format (.dat-s) for SdpProblem.

    "comment lines start with a double quote or an asterisk
    m                      number of decision variables
    nBlocks                number of blocks
    n1 n2 ...              block sizes, negative for diagonal blocks
    c1 c2 ... cm           objective
    k b i j v              entry (i, j) of block b of F_k, upper triangle, 1-indexed

SDPA's primal-dual pair uses the same sign convention as sdp_solver, so no
data is transformed on the way in or out.
"""
import logging
import re
from typing import List, Tuple

import torch

from pie_pytorch.common import DTYPE
from pie_pytorch.exceptions import SdpaParseError
from pie_pytorch.sdp_solver import SdpProblem

logger = logging.getLogger(__name__)

OFFSET_TAG = "objective_offset"
SEPARATORS = re.compile(r"[,(){}]")


def _number(value: float) -> str:
    return f"{value:.17g}"


def export_sdpa(problem: SdpProblem) -> str:
    lines = [f'"pie_pytorch sdp: {problem.num_vars} variables, {len(problem.blocks)} blocks']
    if problem.objective_offset != 0.0:
        lines.append(f'"{OFFSET_TAG} {_number(problem.objective_offset)}')
    lines.append(str(problem.num_vars))
    lines.append(str(len(problem.blocks)))
    lines.append(" ".join(str(-n if diagonal else n)
                          for n, diagonal in zip(problem.block_sizes, problem.diagonal)))
    lines.append(" ".join(_number(float(v)) for v in problem.c))
    for k in range(problem.num_vars + 1):
        for b, (F, diagonal) in enumerate(zip(problem.blocks, problem.diagonal)):
            matrix = F[k]
            mask = torch.eye(matrix.size(0), dtype=torch.bool) if diagonal else \
                torch.ones_like(matrix, dtype=torch.bool).triu()
            for i, j in ((mask & (matrix != 0)).nonzero().tolist()):
                lines.append(f"{k} {b + 1} {i + 1} {j + 1} {_number(float(matrix[i, j]))}")
    return "\n".join(lines) + "\n"


def _tokens(line: str) -> List[str]:
    return SEPARATORS.sub(" ", line).split()


def _ints(line: str, lineno: int, what: str) -> List[int]:
    values = _floats(line, lineno, what)
    if not all(v.is_integer() for v in values):
        raise SdpaParseError(f"malformed {what}: {line.strip()!r}", lineno)
    return [int(v) for v in values]


def _floats(line: str, lineno: int, what: str) -> List[float]:
    try:
        return [float(t) for t in _tokens(line)]
    except ValueError:
        raise SdpaParseError(f"malformed {what}: {line.strip()!r}", lineno)


def import_sdpa(text: str) -> SdpProblem:
    lines = text.splitlines()
    offset = 0.0
    position = 0
    while position < len(lines) and lines[position].lstrip()[:1] in ('"', "*"):
        comment = lines[position].lstrip()[1:].split()
        if len(comment) == 2 and comment[0] == OFFSET_TAG:
            offset = float(comment[1])
        position += 1

    header: List[Tuple[int, str]] = []
    while position < len(lines) and len(header) < 4:
        header.append((position + 1, lines[position]))
        position += 1
    if len(header) < 4:
        raise SdpaParseError("file ends inside the header", len(lines) or 1)

    (l_m, m_line), (l_nb, nb_line), (l_struct, struct_line), (l_c, c_line) = header
    counts = _ints(m_line, l_m, "variable count line")
    if len(counts) != 1 or counts[0] < 0:
        raise SdpaParseError(f"expected one non-negative variable count, got {m_line.strip()!r}", l_m)
    m = counts[0]
    block_count = _ints(nb_line, l_nb, "block count line")
    if len(block_count) != 1 or block_count[0] < 0:
        raise SdpaParseError(f"expected one non-negative block count, got {nb_line.strip()!r}", l_nb)
    sizes = _ints(struct_line, l_struct, "block structure line")
    if len(sizes) != block_count[0] or any(n == 0 for n in sizes):
        raise SdpaParseError(f"expected {block_count[0]} non-zero block sizes, got {struct_line.strip()!r}",
                             l_struct)
    c = _floats(c_line, l_c, "objective line")
    if len(c) != m:
        raise SdpaParseError(f"expected {m} objective coefficients, got {len(c)}", l_c)

    blocks = [torch.zeros(m + 1, abs(n), abs(n), dtype=DTYPE) for n in sizes]
    for index in range(position, len(lines)):
        line = lines[index]
        lineno = index + 1
        tokens = _tokens(line)
        if not tokens or line.lstrip()[:1] in ('"', "*"):
            continue
        if len(tokens) != 5:
            raise SdpaParseError(f"an entry needs 5 fields, got {len(tokens)}", lineno)
        try:
            k, b, i, j = (int(t) for t in tokens[:4])
            value = float(tokens[4])
        except ValueError:
            raise SdpaParseError(f"malformed entry {line.strip()!r}", lineno)
        if not 0 <= k <= m:
            raise SdpaParseError(f"matrix index {k} outside 0..{m}", lineno)
        if not 1 <= b <= len(sizes):
            raise SdpaParseError(f"block index {b} outside 1..{len(sizes)}", lineno)
        n = abs(sizes[b - 1])
        if not (1 <= i <= n and 1 <= j <= n):
            raise SdpaParseError(f"entry ({i}, {j}) outside block {b} of size {n}", lineno)
        if sizes[b - 1] < 0 and i != j:
            raise SdpaParseError(f"off-diagonal entry in diagonal block {b}", lineno)
        blocks[b - 1][k, i - 1, j - 1] = value
        blocks[b - 1][k, j - 1, i - 1] = value

    logger.debug("read sdpa problem: %d variables, block sizes %s", m, sizes)
    return SdpProblem(c=torch.tensor(c, dtype=DTYPE), blocks=blocks, diagonal=tuple(n < 0 for n in sizes),
                      objective_offset=offset)


def write_sdpa(problem: SdpProblem, path) -> None:
    with open(path, "w") as f:
        f.write(export_sdpa(problem))


def read_sdpa(path) -> SdpProblem:
    with open(path) as f:
        return import_sdpa(f.read())
