"""Agent decomposition: index sets, ownership, parent tree, step sizes.

Agents are numbered 0..m-1. Agent k's parent must be a lower-numbered agent
whose index set contains everything k shares with earlier agents (so the
overlap structure is tree-consistent). Each index then has exactly one home
agent, the first agent that contains it; the home agent is the only one that
moves that column. Coupling set S = indices shared with the parent,
uncoupling set R = the rest.

``reorder_indices`` produces a relabeling under which, for every agent,
child-home indices < own-home indices < parent-shared indices. The
synchronous engine needs that ordering to match the centralized sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    BadSigmaError,
    DisconnectedAgentsError,
    MultipleParentsError,
    OrphanIndexError,
    OwnershipViolationError,
    CyclicPrecedenceError,
)
from .problem import CoefficientMatrix


@dataclass(frozen=True)
class AgentPartition:
    n: int
    m: int
    j_sets: tuple[tuple[int, ...], ...]
    parent: tuple[int | None, ...]
    children: tuple[tuple[int, ...], ...]
    coupling: tuple[tuple[int, ...], ...]    # S: shared with parent
    uncoupling: tuple[tuple[int, ...], ...]  # R: home indices
    home: tuple[int, ...]                    # per column index
    ownership: dict[tuple[int, int], int]
    warnings: tuple[str, ...] = field(default=())

    @property
    def sn(self) -> int:
        """Shared-variable count: total size of the coupling sets."""
        return sum(len(s) for s in self.coupling)

    def depth(self, agent: int) -> int:
        d = 0
        a: int | None = agent
        while self.parent[a] is not None:
            a = self.parent[a]
            d += 1
        return d

    def child_sharers(self, agent: int, j: int) -> list[int]:
        """Children of ``agent`` whose index set contains ``j``."""
        return [c for c in self.children[agent] if j in self._j_lookup[c]]

    def __post_init__(self):
        object.__setattr__(self, "_j_lookup", tuple(frozenset(js) for js in self.j_sets))

    def contains(self, agent: int, j: int) -> bool:
        return j in self._j_lookup[agent]

    def describe(self) -> str:
        """Human-readable tree / S / R summary with 1-based labels."""
        lines = [f"agents m={self.m} n={self.n} sn={self.sn}"]
        for a in range(self.m):
            par = self.parent[a]
            par_s = "-" if par is None else str(par + 1)
            fmt = lambda xs: "{" + ",".join(str(x + 1) for x in xs) + "}"
            lines.append(
                f"agent {a + 1}: J={fmt(self.j_sets[a])} parent={par_s} "
                f"children={fmt(self.children[a]) if self.children[a] else '{}'} "
                f"S={fmt(self.coupling[a])} R={fmt(self.uncoupling[a])}"
            )
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)


def build_partition(
    j_sets: Sequence[Sequence[int]],
    ownership: Mapping[tuple[int, int], int],
    n: int,
) -> AgentPartition:
    """Validate and assemble the agent decomposition.

    Raises OrphanIndexError if some index in 0..n-1 belongs to no agent,
    DisconnectedAgentsError if an agent (other than the first) overlaps no
    earlier agent, MultipleParentsError if an agent's overlap with earlier
    agents fits inside no single earlier index set, and
    OwnershipViolationError for owners that do not contain both endpoints.
    """
    m = len(j_sets)
    if m < 1:
        raise ValueError("need at least one agent")
    sets: list[tuple[int, ...]] = []
    for a, js in enumerate(j_sets):
        js = sorted(set(int(j) for j in js))
        if not js:
            raise ValueError(f"agent {a + 1} has an empty index set")
        if js[0] < 0 or js[-1] >= n:
            raise OrphanIndexError(f"agent {a + 1} references an index outside 1..{n}")
        sets.append(tuple(js))

    covered: set[int] = set()
    for js in sets:
        covered.update(js)
    missing = sorted(set(range(n)) - covered)
    if missing:
        raise OrphanIndexError(
            f"indices {[j + 1 for j in missing]} belong to no agent"
        )

    parent: list[int | None] = [None] * m
    coupling: list[tuple[int, ...]] = [()] * m
    uncoupling: list[tuple[int, ...]] = [tuple(sets[0])] + [()] * (m - 1)
    seen: set[int] = set(sets[0])
    home: dict[int, int] = {j: 0 for j in sets[0]}
    lookups = [frozenset(js) for js in sets]
    for a in range(1, m):
        shared = tuple(j for j in sets[a] if j in seen)
        candidates = [b for b in range(a) if lookups[b] & lookups[a]]
        if not candidates:
            raise DisconnectedAgentsError(
                f"agent {a + 1} shares no index with any earlier agent"
            )
        hosts = [b for b in candidates if set(shared) <= lookups[b]]
        if not hosts:
            raise MultipleParentsError(
                f"agent {a + 1} shares {sorted(j + 1 for j in shared)} with earlier "
                f"agents, but no single earlier agent contains all of it"
            )
        parent[a] = hosts[0]
        coupling[a] = shared
        fresh = tuple(j for j in sets[a] if j not in seen)
        uncoupling[a] = fresh
        for j in fresh:
            home[j] = a
        seen.update(sets[a])

    children: list[list[int]] = [[] for _ in range(m)]
    for a in range(1, m):
        children[parent[a]].append(a)

    # each index must have exactly one home, i.e. one agent holding it in R
    homes_per_index: dict[int, list[int]] = {}
    for a in range(m):
        for j in uncoupling[a]:
            homes_per_index.setdefault(j, []).append(a)
    for j in range(n):
        owners = homes_per_index.get(j, [])
        if len(owners) != 1:
            raise OrphanIndexError(
                f"index {j + 1} has {len(owners)} home agents, expected exactly one"
            )

    warnings: list[str] = []
    for (j, l), owner in ownership.items():
        if j == l:
            raise OwnershipViolationError(f"diagonal entry ({j + 1},{l + 1}) in ownership")
        if not (0 <= owner < m):
            raise OwnershipViolationError(
                f"entry ({j + 1},{l + 1}) owned by unknown agent {owner + 1}"
            )
        if j not in lookups[owner] or l not in lookups[owner]:
            raise OwnershipViolationError(
                f"entry ({j + 1},{l + 1}) owned by agent {owner + 1}, whose index "
                f"set does not contain both endpoints"
            )

    # chained sharing (an index coupled both to a child and to the parent)
    # is legal but worth surfacing: messages for it relay through this agent
    for a in range(m):
        if parent[a] is None:
            continue
        s_par = set(coupling[a])
        for c in children[a]:
            overlap = s_par & set(coupling[c])
            if overlap:
                warnings.append(
                    f"indices {sorted(j + 1 for j in overlap)} are shared by agent "
                    f"{c + 1} and by agent {a + 1}'s parent; messages relay through "
                    f"agent {a + 1}"
                )
    for a in range(m):
        if a > 0 and not uncoupling[a]:
            warnings.append(f"agent {a + 1} has no home index; it only mirrors")

    part = AgentPartition(
        n=n,
        m=m,
        j_sets=tuple(sets),
        parent=tuple(parent),
        children=tuple(tuple(c) for c in children),
        coupling=tuple(coupling),
        uncoupling=tuple(uncoupling),
        home=tuple(home[j] for j in range(n)),
        ownership=dict(ownership),
        warnings=tuple(warnings),
    )
    return part


def check_matrix_cover(M: CoefficientMatrix, part: AgentPartition) -> None:
    """Every stored entry of M must appear in the ownership map and vice versa."""
    entries = set(M.entry_pairs())
    owned = set(part.ownership)
    missing = entries - owned
    extra = owned - entries
    if missing:
        j, l = sorted(missing)[0]
        raise OwnershipViolationError(
            f"matrix entry ({j + 1},{l + 1}) has no owner ({len(missing)} total)"
        )
    if extra:
        j, l = sorted(extra)[0]
        raise OwnershipViolationError(
            f"ownership lists ({j + 1},{l + 1}) which is not a stored entry"
        )


def async_ownership_violations(part: AgentPartition) -> list[tuple[int, int]]:
    """Entries whose owner is not the deeper of the two endpoint homes.

    The asynchronous engine's update for a home column must see its whole
    global row through local rows plus child messages; that holds exactly
    when each entry is owned by the deeper-homed endpoint's agent.
    """
    bad = []
    for (j, l), owner in part.ownership.items():
        hj, hl = part.home[j], part.home[l]
        required = hj if part.depth(hj) >= part.depth(hl) else hl
        if owner != required:
            bad.append((j, l))
    return sorted(bad)


def assumption_order_holds(part: AgentPartition) -> bool:
    """Exhaustive scan of the index-order predicate the sync analysis uses.

    For every agent: all child-home indices < all own-home indices < all
    parent-shared indices.
    """
    for a in range(part.m):
        child_homes = [j for c in part.children[a] for j in part.uncoupling[c]]
        own = part.uncoupling[a]
        shared = part.coupling[a]
        hi_child = max(child_homes, default=-1)
        lo_own = min(own, default=part.n)
        hi_own = max(own, default=-1)
        lo_shared = min(shared, default=part.n)
        if child_homes and own and hi_child >= lo_own:
            return False
        if own and shared and hi_own >= lo_shared:
            return False
        if child_homes and not own and shared and hi_child >= lo_shared:
            return False
    return True


def reorder_indices(part: AgentPartition) -> np.ndarray:
    """Permutation (old index -> new label) satisfying the order predicate.

    Returns the identity when the instance is already ordered. Otherwise
    home groups are laid out from the last agent down to the first, which
    puts every child-home block before its ancestors' blocks.
    """
    if assumption_order_holds(part):
        return np.arange(part.n, dtype=np.int64)
    perm = np.full(part.n, -1, dtype=np.int64)
    label = 0
    for a in range(part.m - 1, -1, -1):
        for j in part.uncoupling[a]:
            perm[j] = label
            label += 1
    if label != part.n or np.any(perm < 0):
        raise CyclicPrecedenceError("home groups failed to cover all indices")
    return perm


def permute_partition(part: AgentPartition, perm: np.ndarray) -> AgentPartition:
    """Relabel all index references; tree shape and ownership agents unchanged."""
    perm = np.asarray(perm, dtype=np.int64)
    remap = lambda xs: tuple(sorted(int(perm[j]) for j in xs))
    home = [0] * part.n
    for j, h in enumerate(part.home):
        home[int(perm[j])] = h
    ownership = {}
    for (j, l), owner in part.ownership.items():
        a, b = int(perm[j]), int(perm[l])
        ownership[(min(a, b), max(a, b))] = owner
    return AgentPartition(
        n=part.n,
        m=part.m,
        j_sets=tuple(remap(js) for js in part.j_sets),
        parent=part.parent,
        children=part.children,
        coupling=tuple(remap(s) for s in part.coupling),
        uncoupling=tuple(remap(r) for r in part.uncoupling),
        home=tuple(home),
        ownership=ownership,
        warnings=part.warnings,
    )


@dataclass(frozen=True)
class StepSizes:
    """Per-index diagonal step map; kind records which rule produced it."""

    theta: np.ndarray
    sigma: float
    kind: str

    def permuted(self, perm: np.ndarray) -> "StepSizes":
        out = np.empty_like(self.theta)
        out[np.asarray(perm, dtype=np.int64)] = self.theta
        return StepSizes(out, self.sigma, self.kind)


def sync_step_sizes(part: AgentPartition, M: CoefficientMatrix, sigma: float = 0.1) -> StepSizes:
    """``theta_j = (1 - sigma) / ||M_(j,:)||_1``, or 1.0 for empty rows.

    The denominator is the full symmetric row 1-norm: with single ownership
    it equals the owned-row sums of the home agent and its children. Strictly
    inside the admissible interval, so normalization denominators along a
    sweep stay >= sigma.
    """
    if not (0.0 < sigma < 1.0):
        raise BadSigmaError(f"sigma must lie in (0,1), got {sigma}")
    if M.n != part.n:
        raise ValueError("matrix and partition disagree on n")
    norms = M.row_l1_norms
    theta = np.where(norms > 0.0, (1.0 - sigma) / np.where(norms > 0.0, norms, 1.0), 1.0)
    return StepSizes(theta=theta, sigma=sigma, kind="sync")


def async_step_sizes(
    part: AgentPartition, M: CoefficientMatrix, B: int, sigma: float = 0.5
) -> StepSizes:
    """Uniform ``theta = (1 - sigma) / ((1 + B + n B) L)``.

    ``L`` is twice the largest owned-row 1-norm over agents, an upper bound
    on the Lipschitz constants of the per-agent gradients (the induced
    2-norm of a symmetric matrix is at most its max row 1-norm). All theta
    equal 1.0 when M is zero.
    """
    if not (0.0 < sigma < 1.0):
        raise BadSigmaError(f"sigma must lie in (0,1), got {sigma}")
    if B < 1:
        raise ValueError("B must be >= 1")
    if M.n != part.n:
        raise ValueError("matrix and partition disagree on n")
    row_sums = np.zeros((part.m, part.n), dtype=np.float64)
    for (j, l), owner in part.ownership.items():
        w = M.weight(j, l)
        row_sums[owner, j] += w
        row_sums[owner, l] += w
    L = 2.0 * float(row_sums.max()) if row_sums.size else 0.0
    if L <= 0.0:
        theta = np.ones(part.n, dtype=np.float64)
    else:
        theta = np.full(part.n, (1.0 - sigma) / ((1 + B + part.n * B) * L), dtype=np.float64)
    return StepSizes(theta=theta, sigma=sigma, kind="async")
