"""Verification spine: centralized sweep baseline, brute-force MAXCUT,
hyperplane rounding, and the relaxation cut bound.

These are deliberately simple, standalone implementations; the engines are
tested against them, never the other way around.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, TooLargeError, ZeroVectorError
from .partition import StepSizes
from .problem import CoefficientMatrix, FactorState

_BRUTE_LIMIT = 24
_NORM_FLOOR = 1e-300


@dataclass
class CutAssignment:
    """One side-assignment per node, values in {-1, +1}."""

    signs: np.ndarray

    def __post_init__(self):
        self.signs = np.asarray(self.signs, dtype=np.int8)
        if not np.all(np.abs(self.signs) == 1):
            raise ValueError("cut assignment values must be -1 or +1")


def cut_value(M: CoefficientMatrix, cut: CutAssignment) -> float:
    """Total weight of edges whose endpoints get opposite signs."""
    if len(cut.signs) != M.n:
        raise DimensionMismatchError("assignment length must equal n")
    if M.nnz == 0:
        return 0.0
    differ = cut.signs[M.rows] != cut.signs[M.cols]
    return float(M.weights[differ].sum())


def mixing_sweep(M: CoefficientMatrix, V: FactorState, theta) -> FactorState:
    """One centralized Gauss-Seidel pass over all columns, in index order.

    ``v_j <- normalize(v_j - theta_j * g_j)`` with ``g_j`` summing
    already-updated columns at their new values and the rest at their old
    ones. Columns with empty rows are skipped.
    """
    th = theta.theta if isinstance(theta, StepSizes) else np.asarray(theta, dtype=np.float64)
    if M.n != V.n or len(th) != M.n:
        raise DimensionMismatchError("matrix, factor and step sizes disagree on n")
    W = V.V.copy()
    for j in range(M.n):
        idx, w = M.neighbors(j)
        if len(idx) == 0:
            continue
        g = W[:, idx] @ w
        moved = W[:, j] - th[j] * g
        nrm = float(np.linalg.norm(moved))
        if nrm <= _NORM_FLOOR:
            raise ZeroVectorError(f"column {j + 1} lost normalizability")
        W[:, j] = moved / nrm
    return FactorState(W, validate=False)


def brute_force_maxcut(M: CoefficientMatrix) -> tuple[float, CutAssignment]:
    """Exact maximum cut by enumerating assignments with node 0 pinned to +1."""
    n = M.n
    if n > _BRUTE_LIMIT:
        raise TooLargeError(f"brute force limited to n <= {_BRUTE_LIMIT}, got {n}")
    count = 1 << max(n - 1, 0)
    codes = np.arange(count, dtype=np.uint32)
    values = np.zeros(count, dtype=np.float64)
    # bit b of the code is the side of node b+1; node 0 stays on side 0
    for j, l, w in zip(M.rows, M.cols, M.weights):
        side_j = (codes >> (j - 1)) & 1 if j > 0 else np.zeros(count, dtype=np.uint32)
        side_l = (codes >> (l - 1)) & 1 if l > 0 else np.zeros(count, dtype=np.uint32)
        values += w * (side_j ^ side_l)
    best = int(np.argmax(values))
    signs = np.ones(n, dtype=np.int8)
    for b in range(1, n):
        if (best >> (b - 1)) & 1:
            signs[b] = -1
    return float(values[best]), CutAssignment(signs)


def hyperplane_round(
    V: FactorState, M: CoefficientMatrix, trials: int, seed: int
) -> tuple[float, CutAssignment]:
    """Randomized rounding: sign of a random direction against each column.

    Each trial draws its own generator from (seed, trial), so trials are
    order-independent and reproducible. sign(0) counts as +1.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    best_value = -1.0
    best_cut: CutAssignment | None = None
    for t in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), t]))
        r = rng.standard_normal(V.p)
        proj = r @ V.V
        signs = np.where(proj >= 0.0, 1, -1).astype(np.int8)
        cut = CutAssignment(signs)
        val = cut_value(M, cut)
        if val > best_value:
            best_value, best_cut = val, cut
    assert best_cut is not None
    return best_value, best_cut


def sdp_cut_bound(M: CoefficientMatrix, f_star: float) -> float:
    """``(sum_jl M_(j,l) - f_star) / 4``: an upper bound on the maximum cut
    whenever ``f_star`` is the global minimum of the relaxation."""
    return 0.25 * (M.total - f_star)
