"""Problem file loading and saving.

On-disk format (1-based indices)::

    {
      "n": 8,
      "edges": [[j, l, w, owner], ...],   # j < l, w >= 0, owner is an agent id
      "agents": [[1, 2, 4], [1, 3, 4], ...]
    }

Diagonal entries are accepted and dropped with a warning: they cannot change
the optimum when every column has unit norm. All other violations raise
ProblemFileError with the offending field spelled out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ProblemFileError
from .partition import AgentPartition, build_partition, check_matrix_cover
from .problem import CoefficientMatrix


@dataclass
class ProblemData:
    matrix: CoefficientMatrix
    j_sets: list[list[int]]
    ownership: dict[tuple[int, int], int]
    warnings: list[str] = field(default_factory=list)

    def partition(self) -> AgentPartition:
        part = build_partition(self.j_sets, self.ownership, self.matrix.n)
        check_matrix_cover(self.matrix, part)
        return part


def _need(obj: dict, key: str, where: str):
    if key not in obj:
        raise ProblemFileError(f"{where}: missing required field '{key}'")
    return obj[key]


def parse_problem(doc: dict) -> ProblemData:
    if not isinstance(doc, dict):
        raise ProblemFileError("top level: expected a JSON object")
    n = _need(doc, "n", "top level")
    if not isinstance(n, int) or n < 1:
        raise ProblemFileError(f"field 'n': expected a positive integer, got {n!r}")
    agents = _need(doc, "agents", "top level")
    if not isinstance(agents, list) or not agents:
        raise ProblemFileError("field 'agents': expected a non-empty list of index lists")
    m = len(agents)
    j_sets: list[list[int]] = []
    for k, js in enumerate(agents):
        if not isinstance(js, list) or not js:
            raise ProblemFileError(f"agents[{k}]: expected a non-empty list of indices")
        out = []
        for i, j in enumerate(js):
            if not isinstance(j, int) or not (1 <= j <= n):
                raise ProblemFileError(
                    f"agents[{k}][{i}]: index {j!r} outside 1..{n}"
                )
            out.append(j - 1)
        j_sets.append(out)

    edges = _need(doc, "edges", "top level")
    if not isinstance(edges, list):
        raise ProblemFileError("field 'edges': expected a list")
    warnings: list[str] = []
    triples: list[tuple[int, int, float]] = []
    ownership: dict[tuple[int, int], int] = {}
    seen: set[tuple[int, int]] = set()
    for k, e in enumerate(edges):
        where = f"edges[{k}]"
        if not isinstance(e, list) or len(e) != 4:
            raise ProblemFileError(f"{where}: expected [j, l, w, owner]")
        j, l, w, owner = e
        if not isinstance(j, int) or not isinstance(l, int):
            raise ProblemFileError(f"{where}: endpoints must be integers")
        if not (1 <= j <= n and 1 <= l <= n):
            raise ProblemFileError(f"{where}: endpoint outside 1..{n}")
        if not isinstance(w, (int, float)) or isinstance(w, bool):
            raise ProblemFileError(f"{where}: weight must be a number")
        if w < 0:
            raise ProblemFileError(f"{where}: weight {w} is negative")
        if not isinstance(owner, int) or not (1 <= owner <= m):
            raise ProblemFileError(f"{where}: owner {owner!r} outside 1..{m}")
        if j == l:
            warnings.append(
                f"{where}: diagonal entry ({j},{j}) dropped; unit-diagonal "
                f"constraints make it irrelevant"
            )
            continue
        a, b = (j - 1, l - 1) if j < l else (l - 1, j - 1)
        if (a, b) in seen:
            raise ProblemFileError(f"{where}: duplicate entry ({a + 1},{b + 1})")
        seen.add((a, b))
        triples.append((a, b, float(w)))
        ownership[(a, b)] = owner - 1

    matrix = CoefficientMatrix.from_edges(n, triples)
    return ProblemData(matrix=matrix, j_sets=j_sets, ownership=ownership, warnings=warnings)


def load_problem(path: str | Path) -> ProblemData:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ProblemFileError(f"{path}: not valid JSON ({e})") from e
    return parse_problem(doc)


def save_problem(
    path: str | Path,
    matrix: CoefficientMatrix,
    j_sets: list[list[int]],
    ownership: dict[tuple[int, int], int],
) -> None:
    doc = {
        "n": matrix.n,
        "edges": [
            [int(j) + 1, int(l) + 1, float(w), int(ownership[(int(j), int(l))]) + 1]
            for j, l, w in zip(matrix.rows, matrix.cols, matrix.weights)
        ],
        "agents": [[j + 1 for j in js] for js in j_sets],
    }
    Path(path).write_text(json.dumps(doc, indent=1))
