"""Image segmentation front end.

Pixels become nodes of a 4-connected grid; an edge gets the Euclidean RGB
distance of its endpoints as weight when that distance exceeds a threshold,
and is dropped otherwise. The resulting instance is split into horizontal
pixel strips that overlap by one row, giving a path-shaped agent tree, and
solved with the asynchronous engine; a hyperplane rounding of the factor
yields the binary mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .async_engine import AsyncResult, make_schedule, run_async
from .errors import (
    CorruptHeaderError,
    TooManyAgentsError,
    TruncatedPixelDataError,
    UnsupportedFormatError,
)
from .oracles import cut_value, hyperplane_round
from .partition import AgentPartition, async_step_sizes, build_partition
from .problem import CoefficientMatrix, FactorState, choose_rank
from .trace import Trace


@dataclass
class PixelGraph:
    """Row-major pixel grid; node of pixel (r, c) is ``r * width + c``."""

    width: int
    height: int
    rgb: np.ndarray  # [height, width, 3], intensities 0..255
    matrix: CoefficientMatrix | None = field(default=None)

    @property
    def n(self) -> int:
        return self.width * self.height

    def node(self, r: int, c: int) -> int:
        return r * self.width + c


# -- PPM / PGM ---------------------------------------------------------------

def _header_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated integers, skipping # comments.

    Returns the values and the offset one whitespace past the last one.
    """
    vals: list[int] = []
    i = 0
    ln = len(data)
    while len(vals) < count:
        while i < ln and data[i:i + 1].isspace():
            i += 1
        if i < ln and data[i:i + 1] == b"#":
            while i < ln and data[i:i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < ln and not data[i:i + 1].isspace():
            i += 1
        tok = data[start:i]
        if not tok:
            raise CorruptHeaderError("header ended before all fields were read")
        try:
            vals.append(int(tok))
        except ValueError:
            raise CorruptHeaderError(f"expected integer in header, got {tok!r}") from None
    if i >= ln or not data[i:i + 1].isspace():
        raise CorruptHeaderError("missing whitespace after header")
    return vals, i + 1


def load_image(path: str | Path) -> PixelGraph:
    """Load a PPM image (ASCII P3 or binary P6, maxval 255)."""
    data = Path(path).read_bytes()
    if len(data) < 2:
        raise UnsupportedFormatError("file too short to hold a PPM header")
    magic = data[:2]
    if magic not in (b"P3", b"P6"):
        raise UnsupportedFormatError(f"unsupported magic {magic!r}; need P3 or P6")
    try:
        (w, h, maxval), offset = _header_tokens(data[2:], 3)
    except CorruptHeaderError:
        raise
    offset += 2
    if w < 1 or h < 1:
        raise CorruptHeaderError(f"non-positive image dimensions {w}x{h}")
    if maxval != 255:
        raise UnsupportedFormatError(f"maxval must be 255, got {maxval}")
    count = w * h * 3
    if magic == b"P6":
        body = data[offset:offset + count]
        if len(body) < count:
            raise TruncatedPixelDataError(
                f"need {count} bytes of pixel data, found {len(body)}"
            )
        rgb = np.frombuffer(body, dtype=np.uint8).astype(np.float64)
    else:
        toks = data[offset:].split()
        if len(toks) < count:
            raise TruncatedPixelDataError(
                f"need {count} pixel samples, found {len(toks)}"
            )
        try:
            rgb = np.array([int(t) for t in toks[:count]], dtype=np.float64)
        except ValueError:
            raise TruncatedPixelDataError("non-numeric pixel sample") from None
        if rgb.min() < 0 or rgb.max() > 255:
            raise TruncatedPixelDataError("pixel sample outside 0..255")
    return PixelGraph(width=w, height=h, rgb=rgb.reshape(h, w, 3))


def write_image_ppm(path: str | Path, rgb: np.ndarray) -> None:
    """Write an ASCII P3 image; used by fixture generators and demos."""
    h, w, _ = rgb.shape
    lines = [f"P3\n{w} {h}\n255\n"]
    flat = np.asarray(rgb, dtype=np.int64).reshape(-1)
    lines.append(" ".join(str(int(v)) for v in flat))
    lines.append("\n")
    Path(path).write_text("".join(lines))


def write_mask_pgm(path: str | Path, mask: np.ndarray) -> None:
    """Write a P2 mask with values in {0, 255}."""
    h, w = mask.shape
    body = "\n".join(" ".join(str(int(v)) for v in row) for row in np.asarray(mask))
    Path(path).write_text(f"P2\n{w} {h}\n255\n{body}\n")


# -- instance construction ----------------------------------------------------

def build_weights(graph: PixelGraph, threshold: float) -> CoefficientMatrix:
    """Thresholded RGB-distance weights on the 4-connected grid.

    Edge weight is the Euclidean RGB distance when strictly above the
    threshold, otherwise the edge is dropped; the result is cached on the
    graph for the partition step.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    h, w = graph.height, graph.width
    edges: list[tuple[int, int, float]] = []
    rgb = graph.rgb
    if w > 1:
        d = np.linalg.norm(rgb[:, 1:] - rgb[:, :-1], axis=2)
        rs, cs = np.where(d > threshold)
        for r, c in zip(rs, cs):
            edges.append((graph.node(r, c), graph.node(r, c + 1), float(d[r, c])))
    if h > 1:
        d = np.linalg.norm(rgb[1:, :] - rgb[:-1, :], axis=2)
        rs, cs = np.where(d > threshold)
        for r, c in zip(rs, cs):
            edges.append((graph.node(r, c), graph.node(r + 1, c), float(d[r, c])))
    matrix = CoefficientMatrix.from_edges(graph.n, edges)
    graph.matrix = matrix
    return matrix


def strip_rows(height: int, m_agents: int) -> list[tuple[int, int]]:
    """Inclusive row spans per agent; consecutive strips share one row."""
    if m_agents < 1:
        raise ValueError("need at least one agent")
    if m_agents > height:
        raise TooManyAgentsError(
            f"{m_agents} agents for {height} rows; strips need m <= height"
        )
    if m_agents == 1:
        return [(0, height - 1)]
    total = height + m_agents - 1  # rows counted once per containing strip
    base, extra = divmod(total, m_agents)
    spans = []
    start = 0
    for k in range(m_agents):
        span = base + (1 if k < extra else 0)
        end = start + span - 1
        spans.append((start, end))
        start = end  # next strip reuses this strip's last row
    assert spans[-1][1] == height - 1
    return spans


def strip_partition(graph: PixelGraph, m_agents: int) -> AgentPartition:
    """Horizontal strips with a one-row overlap: a path-shaped agent tree.

    Each edge is owned by the lowest-numbered agent containing both
    endpoints, which is also the deeper endpoint home, as the asynchronous
    engine requires. ``build_weights`` must run first.
    """
    if graph.matrix is None:
        raise ValueError("build_weights must be called before strip_partition")
    spans = strip_rows(graph.height, m_agents)
    w = graph.width
    j_sets = [
        list(range(r0 * w, (r1 + 1) * w))
        for r0, r1 in spans
    ]
    membership = np.full(graph.n, -1, dtype=np.int64)
    for a in range(m_agents - 1, -1, -1):
        membership[j_sets[a]] = a  # lowest-numbered agent wins
    ownership: dict[tuple[int, int], int] = {}
    for j, l in graph.matrix.entry_pairs():
        owner = max(membership[j], membership[l])
        ownership[(j, l)] = int(owner)
    return build_partition(j_sets, ownership, graph.n)


# -- end-to-end ---------------------------------------------------------------

@dataclass
class SegmentResult:
    mask: np.ndarray
    trace: Trace
    cut: float
    solver: AsyncResult
    matrix: CoefficientMatrix
    partition: AgentPartition


def segment(
    image_path: str | Path,
    threshold: float = 100.0,
    m_agents: int = 4,
    B: int = 3,
    seed: int = 0,
    schedule_mode: str = "uniform-random",
    sigma: float = 0.5,
    tol: float = 1e-7,
    max_iters: int = 20000,
    trials: int = 200,
    check_invariants: bool = False,
) -> SegmentResult:
    """Build, solve and round an image instance; returns the binary mask."""
    graph = load_image(image_path)
    matrix = build_weights(graph, threshold)
    part = strip_partition(graph, m_agents)
    steps = async_step_sizes(part, matrix, B=B, sigma=sigma)
    schedule = make_schedule(part.m, part.n, B, seed=seed, mode=schedule_mode)
    p = choose_rank(graph.n)
    init = FactorState.random(p, graph.n, np.random.default_rng(np.random.SeedSequence([int(seed), 0x1417])))
    result = run_async(
        matrix, part, steps, schedule, init,
        tol=tol, max_iters=max_iters, check_invariants=check_invariants,
    )
    best_val, cut = hyperplane_round(result.state, matrix, trials=trials, seed=seed)
    mask = np.where(cut.signs.reshape(graph.height, graph.width) > 0, 255, 0).astype(np.int64)
    assert math.isclose(best_val, cut_value(matrix, cut))
    return SegmentResult(
        mask=mask,
        trace=result.trace,
        cut=best_val,
        solver=result,
        matrix=matrix,
        partition=part,
    )
