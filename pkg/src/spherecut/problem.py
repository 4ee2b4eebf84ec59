"""Core mathematical objects: sparse coefficient matrix, unit-column factor.

The solvers minimize ``<M, X>`` over positive semidefinite ``X`` with unit
diagonal by writing ``X = V' V`` for a ``p x n`` factor ``V`` whose columns
live on the unit sphere. This module holds the two data types plus the
global diagnostics (objective, Riemannian gradient norm, Gram matrix) that
every engine and oracle shares.

All indices are 0-based internally; the JSON file layer converts from the
1-based on-disk convention.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatchError, ZeroVectorError

_ZERO_NORM_FLOOR = 1e-300
UNIT_NORM_TOL = 1e-12


def normalize(x: np.ndarray) -> np.ndarray:
    """Return ``x / ||x||``.

    Raises ZeroVectorError when the norm is at or below 1e-300; inside an
    engine that signals a step-size violation upstream, since admissible
    steps keep the denominator strictly positive.
    """
    nrm = float(np.linalg.norm(x))
    if nrm <= _ZERO_NORM_FLOOR:
        raise ZeroVectorError(f"cannot normalize vector with norm {nrm!r}")
    return x / nrm


def choose_rank(n: int) -> int:
    """Smallest convenient factor rank strictly above sqrt(2n).

    Returns ``ceil(sqrt(2n)) + 1``; solutions of the diagonally constrained
    SDP have rank at most ``ceil(sqrt(2n))``, and the strict inequality is
    what the saddle-escape guarantee needs.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    s = math.isqrt(2 * n)
    ceil_sqrt = s if s * s == 2 * n else s + 1
    return ceil_sqrt + 1


class CoefficientMatrix:
    """Sparse symmetric n x n matrix with zero diagonal, nonnegative weights.

    Entries are stored once per unordered pair (j < l) in lexicographic
    order, with a per-row adjacency index so engines can traverse one full
    symmetric row at a time.
    """

    def __init__(self, n: int, rows: np.ndarray, cols: np.ndarray, weights: np.ndarray):
        self.n = int(n)
        self.rows = rows
        self.cols = cols
        self.weights = weights
        self._build_adjacency()

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int, float]]) -> "CoefficientMatrix":
        """Build from ``(j, l, w)`` triples, 0-based, validating invariants."""
        if n < 1:
            raise ValueError("n must be >= 1")
        triples = []
        seen = set()
        for j, l, w in edges:
            j, l, w = int(j), int(l), float(w)
            if j == l:
                raise ValueError(f"diagonal entry ({j},{l}) not allowed")
            if not (0 <= j < n and 0 <= l < n):
                raise ValueError(f"entry ({j},{l}) out of range for n={n}")
            if w < 0:
                raise ValueError(f"negative weight {w} at ({j},{l})")
            if j > l:
                j, l = l, j
            if (j, l) in seen:
                raise ValueError(f"duplicate entry ({j},{l})")
            seen.add((j, l))
            triples.append((j, l, w))
        triples.sort()
        if triples:
            rows = np.array([t[0] for t in triples], dtype=np.int64)
            cols = np.array([t[1] for t in triples], dtype=np.int64)
            weights = np.array([t[2] for t in triples], dtype=np.float64)
        else:
            rows = np.empty(0, dtype=np.int64)
            cols = np.empty(0, dtype=np.int64)
            weights = np.empty(0, dtype=np.float64)
        return cls(n, rows, cols, weights)

    def _build_adjacency(self) -> None:
        nbr: list[list[tuple[int, float]]] = [[] for _ in range(self.n)]
        for j, l, w in zip(self.rows, self.cols, self.weights):
            nbr[j].append((int(l), float(w)))
            nbr[l].append((int(j), float(w)))
        self._nbr_idx: list[np.ndarray] = []
        self._nbr_w: list[np.ndarray] = []
        for j in range(self.n):
            nbr[j].sort()
            self._nbr_idx.append(np.array([i for i, _ in nbr[j]], dtype=np.int64))
            self._nbr_w.append(np.array([w for _, w in nbr[j]], dtype=np.float64))
        self._row_l1 = np.array([float(w.sum()) for w in self._nbr_w], dtype=np.float64)

    @property
    def nnz(self) -> int:
        """Stored (unordered) nonzero count."""
        return len(self.weights)

    @property
    def is_zero(self) -> bool:
        return self.nnz == 0 or not np.any(self.weights)

    @property
    def total(self) -> float:
        """Sum over all ordered pairs, i.e. twice the stored weight sum."""
        return 2.0 * float(self.weights.sum())

    def neighbors(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Ascending column indices and weights of symmetric row ``j``."""
        return self._nbr_idx[j], self._nbr_w[j]

    def row_l1(self, j: int) -> float:
        return float(self._row_l1[j])

    @property
    def row_l1_norms(self) -> np.ndarray:
        return self._row_l1

    def weight(self, j: int, l: int) -> float:
        """Symmetric query; 0.0 for pairs without a stored entry."""
        if j == l:
            return 0.0
        idx, w = self._nbr_idx[j], self._nbr_w[j]
        pos = np.searchsorted(idx, l)
        if pos < len(idx) and idx[pos] == l:
            return float(w[pos])
        return 0.0

    def entry_pairs(self) -> list[tuple[int, int]]:
        """Stored (j, l) pairs with j < l, lexicographic."""
        return [(int(j), int(l)) for j, l in zip(self.rows, self.cols)]

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n, self.n), dtype=np.float64)
        dense[self.rows, self.cols] = self.weights
        dense[self.cols, self.rows] = self.weights
        return dense

    def permuted(self, perm: np.ndarray) -> "CoefficientMatrix":
        """Relabel indices: old index j becomes ``perm[j]``."""
        perm = np.asarray(perm, dtype=np.int64)
        if perm.shape != (self.n,):
            raise DimensionMismatchError("permutation length must equal n")
        edges = [
            (int(perm[j]), int(perm[l]), float(w))
            for j, l, w in zip(self.rows, self.cols, self.weights)
        ]
        return CoefficientMatrix.from_edges(self.n, edges)


class FactorState:
    """The ``p x n`` factor of ``X = V'V``; every column is a unit vector."""

    def __init__(self, matrix: np.ndarray, validate: bool = True):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise DimensionMismatchError("factor must be a 2-d array")
        self.V = matrix
        if validate:
            norms = np.linalg.norm(matrix, axis=0)
            bad = np.abs(norms - 1.0) > UNIT_NORM_TOL
            if np.any(bad):
                j = int(np.argmax(bad))
                raise ValueError(f"column {j} has norm {norms[j]!r}, expected 1")

    @property
    def p(self) -> int:
        return self.V.shape[0]

    @property
    def n(self) -> int:
        return self.V.shape[1]

    def column(self, j: int) -> np.ndarray:
        return self.V[:, j]

    def copy(self) -> "FactorState":
        return FactorState(self.V.copy(), validate=False)

    def permuted(self, perm: np.ndarray) -> "FactorState":
        out = np.empty_like(self.V)
        out[:, np.asarray(perm, dtype=np.int64)] = self.V
        return FactorState(out, validate=False)

    @classmethod
    def random(cls, p: int, n: int, seed_or_rng) -> "FactorState":
        """Columns drawn i.i.d. standard normal, then normalized."""
        rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.default_rng(seed_or_rng)
        V = rng.standard_normal((p, n))
        V /= np.linalg.norm(V, axis=0, keepdims=True)
        return cls(V, validate=False)

    @classmethod
    def constant(cls, p: int, n: int, v0: np.ndarray | None = None, seed: int = 0) -> "FactorState":
        """All columns equal to one shared unit vector.

        This reproduces the common-start mode; note a shared start sits on a
        critical point of many instances, so the default engines use
        :meth:`random` instead.
        """
        if v0 is None:
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x0C0]))
            v0 = rng.standard_normal(p)
        v0 = normalize(np.asarray(v0, dtype=np.float64))
        if v0.shape != (p,):
            raise DimensionMismatchError("v0 must have length p")
        return cls(np.tile(v0[:, None], (1, n)), validate=False)


def _check_dims(M: CoefficientMatrix, V: FactorState) -> None:
    if M.n != V.n:
        raise DimensionMismatchError(f"matrix has n={M.n} but factor has n={V.n}")


def objective(M: CoefficientMatrix, V: FactorState) -> float:
    """``<M, V'V>`` over stored nonzeros; each unordered pair counts twice."""
    _check_dims(M, V)
    if M.nnz == 0:
        return 0.0
    lhs = V.V[:, M.rows]
    rhs = V.V[:, M.cols]
    return 2.0 * float(np.einsum("ij,ij,j->", lhs, rhs, M.weights))


def column_gradients(M: CoefficientMatrix, V: FactorState) -> np.ndarray:
    """``g_i = sum_j M_(i,j) v_j`` for every column, as a p x n array."""
    _check_dims(M, V)
    G = np.zeros_like(V.V)
    if M.nnz:
        np.add.at(G.T, M.rows, (V.V[:, M.cols] * M.weights).T)
        np.add.at(G.T, M.cols, (V.V[:, M.rows] * M.weights).T)
    return G


def riemannian_grad_norm(M: CoefficientMatrix, V: FactorState) -> float:
    """Frobenius norm of the gradient projected onto the sphere tangents.

    Squared value is ``sum_i (||g_i||^2 - <v_i, g_i>^2)``; zero exactly at
    critical points of the sphere-constrained objective, including saddles.
    """
    G = column_gradients(M, V)
    sq = np.einsum("ij,ij->j", G, G) - np.einsum("ij,ij->j", V.V, G) ** 2
    total = float(np.sum(np.maximum(sq, 0.0)))
    return math.sqrt(total)


def gram(V: FactorState) -> np.ndarray:
    """Materialize ``X = V'V`` (unit diagonal up to rounding, PSD)."""
    return V.V.T @ V.V


def gram_delta_fro(before: FactorState, after: FactorState) -> float:
    """``||X_after - X_before||_F`` via p x p Gram products (no n x n work)."""
    if before.V.shape != after.V.shape:
        raise DimensionMismatchError("factor shapes differ")
    g0 = before.V @ before.V.T
    g1 = after.V @ after.V.T
    g01 = before.V @ after.V.T
    sq = float(np.sum(g1 * g1) + np.sum(g0 * g0) - 2.0 * np.sum(g01 * g01))
    return math.sqrt(max(sq, 0.0))
