"""Asynchronous engine on a deterministic logical-tick simulator.

Time is a global tick counter. A schedule says which agents wake at each
tick and how stale every value they read may be: agent ``i`` reading column
``j`` at tick ``t`` sees the home value as of ``tau(i, j, t)``, with
``t - B + 1 <= tau <= t`` and ``tau = t`` for the agent's own home columns.
Message transport is folded into those stamps (a message composed at time u
is readable while u stays inside the window), so one mechanism models both
communication delay and stale activation.

Woken agents move their home columns with a Jacobi-style bracket assembled
from stamped reads of the last ``B`` global states, then the tick commits.
All updates within a tick read only committed history, so agent order inside
a tick cannot matter and runs are bitwise reproducible from the seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NoParentError,
    OwnershipViolationError,
    StaleBeyondBError,
    ZeroVectorError,
)
from .partition import AgentPartition, StepSizes, async_ownership_violations
from .problem import (
    CoefficientMatrix,
    FactorState,
    gram_delta_fro,
    objective,
    riemannian_grad_norm,
)
from .trace import Trace, TraceRow

SCHEDULE_MODES = ("uniform-random", "round-robin", "adversarial-max-delay")
_NORM_FLOOR = 1e-300


class DelaySchedule:
    """Deterministic activation times and staleness stamps.

    Rows are generated sequentially; ``row(t)`` must be called with
    consecutive ``t`` (the previous row stays cached). ``reset()`` replays
    from tick 0, reproducing the identical sequence for a given
    (m, n, B, seed, mode).

    Stamps are monotone in ``t`` per (agent, index): the mailbox keeps the
    latest delivered value, so an older value is never read after a newer
    one.
    """

    def __init__(self, m: int, n: int, B: int, seed: int = 0, mode: str = "uniform-random"):
        if B < 1:
            raise ValueError("B must be >= 1")
        if mode not in SCHEDULE_MODES:
            raise ValueError(f"unknown schedule mode {mode!r}")
        if m < 1 or n < 1:
            raise ValueError("m and n must be >= 1")
        self.m, self.n, self.B = int(m), int(n), int(B)
        self.seed, self.mode = int(seed), mode
        self.reset()

    def reset(self) -> None:
        self._t = -1
        self._active = np.zeros(self.m, dtype=bool)
        self._tau = np.zeros((self.m, self.n), dtype=np.int64)
        if self.mode == "uniform-random":
            self._rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x5C4ED]))
            self._next_act = self._rng.integers(0, self.B, size=self.m)
            self._tau_reg = np.zeros((self.m, self.n), dtype=np.int64)

    def row(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Activation mask and stamp matrix for tick ``t`` (sequential)."""
        if t == self._t:
            return self._active, self._tau
        if t != self._t + 1:
            raise ValueError(f"schedule is sequential: asked for t={t} after t={self._t}")
        B = self.B
        if self.mode == "uniform-random":
            active = self._next_act == t
            gaps = self._rng.integers(1, B + 1, size=self.m)
            self._next_act = np.where(active, self._next_act + gaps, self._next_act)
            delays = self._rng.integers(0, B, size=(self.m, self.n))
            np.maximum(self._tau_reg, t - delays, out=self._tau_reg)
            np.maximum(self._tau_reg, 0, out=self._tau_reg)
            tau = self._tau_reg.copy()
        elif self.mode == "round-robin":
            phases = np.arange(self.m, dtype=np.int64) % B
            active = (t % B) == phases
            offs = (np.arange(self.m)[:, None] + np.arange(self.n)[None, :]) % B
            tau = np.maximum(0, t - offs)
        else:  # adversarial-max-delay
            active = np.full(self.m, (t % B) == B - 1)
            tau = np.full((self.m, self.n), max(0, t - B + 1), dtype=np.int64)
        self._t, self._active, self._tau = t, active, tau
        return active, tau


def make_schedule(
    m: int, n: int, B: int, seed: int = 0, mode: str = "uniform-random"
) -> DelaySchedule:
    """Build a schedule satisfying the partial-asynchronism bounds.

    Modes: ``uniform-random`` draws seeded activation gaps in [1, B] and
    staleness offsets in [0, B-1]; ``round-robin`` wakes agent i at ticks
    congruent to i mod B with fixed per-pair offsets;
    ``adversarial-max-delay`` wakes everyone as late as allowed and pins
    every stamp to the oldest admissible time.
    """
    return DelaySchedule(m, n, B, seed=seed, mode=mode)


@dataclass
class ScheduleScan:
    ok: bool
    horizon: int
    violations: list[str] = field(default_factory=list)


def scan_schedule(schedule: DelaySchedule, horizon: int) -> ScheduleScan:
    """Exhaustively verify activation-window, stamp bounds and monotonicity."""
    schedule.reset()
    B, m = schedule.B, schedule.m
    violations: list[str] = []
    active_hist = np.zeros((horizon, m), dtype=bool)
    prev_tau: np.ndarray | None = None
    for t in range(horizon):
        active, tau = schedule.row(t)
        active_hist[t] = active
        lo = max(0, t - B + 1)
        if np.any(tau < lo) or np.any(tau > t):
            violations.append(f"t={t}: stamp outside [{lo}, {t}]")
        if prev_tau is not None and np.any(tau < prev_tau):
            violations.append(f"t={t}: stamp decreased")
        prev_tau = tau.copy()
    for start in range(0, horizon - B + 1):
        window = active_hist[start:start + B]
        idle = np.where(~window.any(axis=0))[0]
        for a in idle:
            violations.append(f"window [{start},{start + B}): agent {a + 1} never active")
    schedule.reset()
    return ScheduleScan(ok=not violations, horizon=horizon, violations=violations)


@dataclass
class AsyncDiagnostics:
    """Run-level maxima of the per-update and per-tick invariant residuals."""

    descent_ineq_max: float = 0.0     # (s'h + ||s||^2) / (1 + ||h||^2), sign kept
    descent_closed_max: float = 0.0   # |s'h + (1+y)||s||^2| / (1 + ||h||^2)
    consensus_slack_min: float = float("inf")  # min of (bound - gap) per tick
    stale_margin_min: float = float("inf")     # min of (stamp - (t - B + 1)) over reads


class AsyncEngine:
    """Stepwise asynchronous run over a fixed problem, schedule and steps."""

    def __init__(
        self,
        M: CoefficientMatrix,
        part: AgentPartition,
        steps: StepSizes,
        schedule: DelaySchedule,
        init: FactorState,
        check_invariants: bool = True,
        strict_ownership: bool = True,
    ):
        if M.n != part.n or init.n != part.n:
            raise ValueError("matrix, partition and factor disagree on n")
        if schedule.m != part.m or schedule.n != part.n:
            raise ValueError("schedule shape disagrees with the partition")
        if strict_ownership:
            bad = async_ownership_violations(part)
            if bad:
                j, l = bad[0]
                raise OwnershipViolationError(
                    f"entry ({j + 1},{l + 1}) is not owned by the deeper endpoint "
                    f"home; the asynchronous update would drop it "
                    f"({len(bad)} such entries)"
                )
        self.M, self.part, self.steps, self.schedule = M, part, steps, schedule
        self.check_invariants = check_invariants
        self.B = schedule.B
        self.n, self.p = part.n, init.p
        self.V = init.V.copy()
        self.ring = np.repeat(init.V[None, :, :], self.B, axis=0)
        self.t = 0
        self.theta = steps.theta
        home = np.asarray(part.home, dtype=np.int64)
        self._home_cols = [np.where(home == a)[0] for a in range(part.m)]
        # flattened neighbor structure per agent, home columns with entries only
        self._upd_cols: list[np.ndarray] = []
        self._nbr_idx: list[np.ndarray] = []
        self._nbr_w: list[np.ndarray] = []
        self._nbr_fresh: list[np.ndarray] = []  # neighbor is this agent's home
        self._row_ptr: list[np.ndarray] = []
        for a in range(part.m):
            cols, idxs, ws, ptr = [], [], [], [0]
            for j in self._home_cols[a]:
                nbr, w = M.neighbors(int(j))
                if len(nbr) == 0:
                    continue
                cols.append(int(j))
                idxs.append(nbr)
                ws.append(w)
                ptr.append(ptr[-1] + len(nbr))
            self._upd_cols.append(np.array(cols, dtype=np.int64))
            if cols:
                cat = np.concatenate(idxs)
                self._nbr_idx.append(cat)
                self._nbr_w.append(np.concatenate(ws))
                self._nbr_fresh.append(home[cat] == a)
            else:
                self._nbr_idx.append(np.empty(0, dtype=np.int64))
                self._nbr_w.append(np.empty(0, dtype=np.float64))
                self._nbr_fresh.append(np.empty(0, dtype=bool))
            self._row_ptr.append(np.array(ptr, dtype=np.int64))
        # coupled (agent, index) pairs for mailbox and consensus tracking
        cp = [(a, j) for a in range(part.m) for j in part.coupling[a]]
        self._cp_agent = np.array([a for a, _ in cp], dtype=np.int64)
        self._cp_col = np.array([j for _, j in cp], dtype=np.int64)
        self._mail_stamps = np.full(len(cp), -1, dtype=np.int64)
        self._s_hist = np.zeros((self.B, self.n), dtype=np.float64)
        self._filled = 0
        self._last_updates: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, float]] = {}
        self.diagnostics = AsyncDiagnostics()
        self.trace = Trace()

    # -- stepping -------------------------------------------------------------

    def _agent_brackets(self, a: int, t: int, tau: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Columns to update and their stamped-read brackets (rows of shape p)."""
        cols = self._upd_cols[a]
        if len(cols) == 0:
            return cols, np.empty((0, self.p))
        nbr = self._nbr_idx[a]
        stamps = np.where(self._nbr_fresh[a], t, tau[a, nbr])
        lo = max(0, t - self.B + 1)
        if stamps.min(initial=t) < lo:
            raise StaleBeyondBError(
                f"agent {a + 1} would read a stamp older than t-B+1 at t={t}"
            )
        if self.check_invariants and len(stamps):
            margin = float(stamps.min() - lo)
            self.diagnostics.stale_margin_min = min(
                self.diagnostics.stale_margin_min, margin
            )
        vals = self.ring[stamps % self.B, :, nbr]          # [K, p]
        weighted = vals * self._nbr_w[a][:, None]
        brackets = np.add.reduceat(weighted, self._row_ptr[a][:-1], axis=0)
        return cols, brackets

    def step(self) -> TraceRow:
        """Advance one tick: wake scheduled agents, commit, record a row."""
        t = self.t
        t0 = time.perf_counter()
        active, tau = self.schedule.row(t)
        before = FactorState(self.V, validate=False)
        newV = self.V.copy()
        tick_s = np.zeros(self.n, dtype=np.float64)
        self._last_updates.clear()
        for a in np.where(active)[0]:
            cols, brackets = self._agent_brackets(int(a), t, tau)
            if len(cols) == 0:
                continue
            cur = self.V[:, cols].T                        # [k, p]
            th = self.theta[cols]
            zero = ~brackets.any(axis=1)
            moved = cur - th[:, None] * brackets
            y = np.linalg.norm(moved, axis=1)
            if np.any((y <= _NORM_FLOOR) & ~zero):
                j = int(cols[np.argmax((y <= _NORM_FLOOR) & ~zero)])
                raise ZeroVectorError(
                    f"normalization denominator vanished at column {j + 1}"
                )
            out = np.where(zero[:, None], cur, moved / np.where(zero, 1.0, y)[:, None])
            newV[:, cols] = out.T
            s_vecs = (out - cur) / th[:, None]
            s_norms = np.linalg.norm(s_vecs, axis=1)
            tick_s[cols] = s_norms
            if self.check_invariants:
                for k, j in enumerate(cols):
                    self._last_updates[(int(a), int(j))] = (
                        brackets[k], s_vecs[k], float(y[k]),
                    )
                    h = brackets[k]
                    scale = 1.0 + float(np.dot(h, h))
                    sh = float(np.dot(s_vecs[k], h))
                    ss = float(np.dot(s_vecs[k], s_vecs[k]))
                    ineq = (sh + ss) / scale
                    closed = abs(sh + (1.0 + y[k]) * ss) / scale
                    d = self.diagnostics
                    d.descent_ineq_max = max(d.descent_ineq_max, ineq)
                    d.descent_closed_max = max(d.descent_closed_max, closed)

        # mailbox stamps for coupled pairs refresh every tick; never decrease
        if self.check_invariants and len(self._cp_agent):
            fresh = tau[self._cp_agent, self._cp_col]
            if np.any(fresh < self._mail_stamps):
                raise StaleBeyondBError("a mailbox stamp decreased")
            self._mail_stamps = fresh

        self._s_hist[t % self.B] = tick_s

        # consensus gap against the stamped copies, before committing the ring
        gap = 0.0
        if len(self._cp_agent):
            stamps = tau[self._cp_agent, self._cp_col]
            copies = self.ring[stamps % self.B, :, self._cp_col]   # [k, p]
            diffs = copies - newV[:, self._cp_col].T
            gaps = np.linalg.norm(diffs, axis=1)
            gap = float(gaps.max())
            if self.check_invariants:
                bound = self.theta[self._cp_col] * self._s_hist[:, self._cp_col].sum(axis=0)
                slack = float((bound + 1e-12 * (1.0 + bound) - gaps).min())
                self.diagnostics.consensus_slack_min = min(
                    self.diagnostics.consensus_slack_min, slack
                )

        self.ring[(t + 1) % self.B] = newV
        after = FactorState(newV, validate=False)
        row = TraceRow(
            iteration=t + 1,
            f=objective(self.M, after),
            grad_norm=riemannian_grad_norm(self.M, after),
            consensus_gap=gap,
            dx_fro=gram_delta_fro(before, after),
            max_s_norm=float(tick_s.max()) if self.n else 0.0,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )
        self.V = newV
        self.t = t + 1
        self._filled = min(self._filled + 1, self.B)
        self.trace.append(row)
        return row

    # -- contract surfaces -----------------------------------------------------

    def window_max_s(self) -> float:
        """Largest per-column step norm over the trailing B ticks."""
        return float(self._s_hist.max()) if self._filled else float("inf")

    def visible_value(self, agent: int, j: int) -> np.ndarray:
        """Column j as the agent's mailbox shows it at the current time.

        Peeks the schedule row for the current tick; the next ``step()``
        reuses the cached row, so peeking never perturbs the run.
        """
        if self.part.home[j] == agent:
            return self.V[:, j]
        _, tau = self.schedule.row(self.t)
        return self.ring[int(tau[agent, j]) % self.B, :, j]

    def message_to_parent(self, agent: int, j: int) -> np.ndarray:
        """Row-j aggregate the agent would forward up right now (Eq.-style
        own rows plus buffered child contributions, at stamped values)."""
        if self.part.parent[agent] is None:
            raise NoParentError(f"agent {agent + 1} is a root")
        return self._subtree_row_sum(agent, j)

    def _subtree_row_sum(self, agent: int, j: int) -> np.ndarray:
        total = np.zeros(self.p, dtype=np.float64)
        for c in sorted(self.part.child_sharers(agent, j), reverse=True):
            total += self._subtree_row_sum(c, j)
        nbr, w = self.M.neighbors(j)
        for l, wl in zip(nbr, w):
            if self.part.ownership.get((min(j, l), max(j, l))) == agent:
                total += wl * self.visible_value(agent, int(l))
        return total

    def descent_check(self, agent: int, j: int) -> tuple[float, float]:
        """Residuals of the update-direction descent inequality at the last
        tick: (s'h + ||s||^2, |s'h + (1+y)||s||^2|), both unscaled."""
        rec = self._last_updates.get((agent, j))
        if rec is None:
            return 0.0, 0.0
        h, s, y = rec
        sh = float(np.dot(s, h))
        ss = float(np.dot(s, s))
        return sh + ss, abs(sh + (1.0 + y) * ss)

    def state(self) -> FactorState:
        return FactorState(self.V.copy(), validate=False)


@dataclass
class AsyncResult:
    state: FactorState
    trace: Trace
    converged: bool
    ticks: int
    diagnostics: AsyncDiagnostics

    @property
    def f(self) -> float:
        return self.trace.rows[-1].f if self.trace.rows else float("nan")

    @property
    def grad_norm(self) -> float:
        return self.trace.rows[-1].grad_norm if self.trace.rows else float("nan")


def run_async(
    M: CoefficientMatrix,
    part: AgentPartition,
    steps: StepSizes,
    schedule: DelaySchedule,
    init: FactorState,
    tol: float = 1e-7,
    max_iters: int = 5000,
    check_invariants: bool = True,
    strict_ownership: bool = True,
) -> AsyncResult:
    """Drive the asynchronous engine until quiescence or the tick budget.

    Stops once every agent has been heard from within a trailing window of
    B ticks and the largest per-column step norm in that window is below
    ``tol`` (an instantaneous zero step says nothing about sleeping agents).
    """
    engine = AsyncEngine(
        M, part, steps, schedule, init,
        check_invariants=check_invariants,
        strict_ownership=strict_ownership,
    )
    converged = False
    for _ in range(max_iters):
        engine.step()
        if engine.t >= engine.B and engine.window_max_s() < tol:
            converged = True
            break
    return AsyncResult(
        state=engine.state(),
        trace=engine.trace,
        converged=converged,
        ticks=engine.t,
        diagnostics=engine.diagnostics,
    )
