"""Per-iteration solver records and the shared CSV trace schema.

Schema (both engines): ``iter,f,grad_norm,consensus_gap,dx_fro,max_s_norm,wall_ms``.
``max_s_norm`` is empty for synchronous runs. ``wall_ms`` is kept in memory
for reporting but written as an empty field: trace files must be
byte-identical across repeated seeded runs, and wall-clock time is not.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

CSV_HEADER = "iter,f,grad_norm,consensus_gap,dx_fro,max_s_norm,wall_ms"


@dataclass
class TraceRow:
    iteration: int
    f: float
    grad_norm: float
    consensus_gap: float
    dx_fro: float
    max_s_norm: float | None = None
    wall_ms: float = 0.0
    decrease_residual: float | None = None  # sync only, not part of the CSV


def _fmt(x: float) -> str:
    # repr gives the shortest round-trip form, stable across runs
    return repr(float(x))


@dataclass
class Trace:
    rows: list[TraceRow] = field(default_factory=list)

    def append(self, row: TraceRow) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def objective_values(self) -> list[float]:
        return [r.f for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for r in self.rows:
            s_field = "" if r.max_s_norm is None else _fmt(r.max_s_norm)
            buf.write(
                f"{r.iteration},{_fmt(r.f)},{_fmt(r.grad_norm)},"
                f"{_fmt(r.consensus_gap)},{_fmt(r.dx_fro)},{s_field},\n"
            )
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())
