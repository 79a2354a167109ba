"""Incremental estimation of r and f(a) over an event stream.

The state keeps only marginal tallies, never the events themselves. The last
``window`` resolves are re-estimated as votes arrive; older resolves have their
r frozen when they leave the window, and f(a) is frozen for ages that have
collected enough votes. Frozen values are constants thereafter, including
inside the denominators of the windowed fixed point.

Storage is a handful of arrays indexed by resolve ordinal or age plus one
entry per user; it does not grow with the number of votes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import AgingFunction, Event, EventKind, IntervalCounts
from .errors import (
    InsufficientHistory, OutOfOrderEvent, ValidationError,
)
from .estimation import FixedPointConfig, estimate, lagged_sums, poisson_interval

REOPTIMIZE_RULES = ("resolve", "never")


@dataclass(frozen=True)
class OnlineConfig:
    window: int = 500
    f_freeze_votes: int = 1000
    reoptimize: str = "resolve"  # re-run the windowed fixed point on each new resolve
    fixed_point: FixedPointConfig = field(default_factory=lambda: FixedPointConfig(tolerance=1e-6, max_iterations=500))
    keep_cells: bool = False  # also keep the (interval, resolve) table, for replay checks

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.f_freeze_votes < 1:
            raise ValueError("f_freeze_votes must be >= 1")
        if self.reoptimize not in REOPTIMIZE_RULES:
            raise ValueError(f"reoptimize must be one of {REOPTIMIZE_RULES}")


class _Grow:
    """Append-only float/int array with amortized doubling."""

    def __init__(self, dtype):
        self.a = np.zeros(16, dtype=dtype)
        self.n = 0

    def append(self, x):
        if self.n == self.a.size:
            self.a = np.concatenate([self.a, np.zeros_like(self.a)])
        self.a[self.n] = x
        self.n += 1

    def view(self):
        return self.a[: self.n]


class OnlineState:
    """Single-writer streaming state; mutate only through :func:`update` and
    :func:`windowed_reoptimize`."""

    def __init__(self, config: OnlineConfig | None = None):
        self.config = config or OnlineConfig()
        self.last_time = -np.inf
        self.ordinal = {}  # resolve id -> 0-based ordinal
        self._v = _Grow(np.int64)  # v_i
        self._vr = _Grow(np.int64)  # V^R_j
        self._va = _Grow(np.int64)  # V^A_a, index a - 1
        self._r = _Grow(np.float64)  # frozen r (nan while windowed)
        self._f = _Grow(np.float64)  # current f(a)
        self._f_frozen = _Grow(np.bool_)
        self.ids = _Grow(np.int64)
        self.creators = _Grow(np.int64)
        self.window_r = np.zeros(0)  # r of windowed resolves, from the last re-optimization
        self.users = {}  # user -> [event_count, first_time, last_time]
        self.cells = {} if self.config.keep_cells else None
        self.n_reoptimizations = 0
        self.converged = True  # outcome of the last re-optimization
        self.last_trace = []

    # -- sizes and views

    @property
    def n_resolves(self) -> int:
        return self._v.n

    @property
    def window_start(self) -> int:
        return max(0, self.n_resolves - self.config.window)

    @property
    def v(self):
        return self._v.view()

    @property
    def resolve_votes(self):
        return self._vr.view()

    @property
    def age_votes(self):
        return self._va.view()

    @property
    def frozen_r(self):
        return self._r.view()

    @property
    def f_values(self):
        return self._f.view()

    @property
    def f_frozen(self):
        return self._f_frozen.view()

    def parameter_count(self) -> int:
        """Number of stored numbers; grows with resolves and users, not votes."""
        return 7 * self.n_resolves + 3 * len(self.users) + self.window_r.size

    def interval_counts(self) -> IntervalCounts:
        if self.cells is None:
            raise ValueError("cell tracking is off; construct with OnlineConfig(keep_cells=True)")
        R = self.n_resolves
        keys = np.array(list(self.cells.keys()), dtype=np.int64).reshape(-1, 2)
        reps = np.array(list(self.cells.values()), dtype=np.int64)
        return IntervalCounts.from_cells(
            R, np.repeat(keys[:, 0], reps), np.repeat(keys[:, 1], reps),
            resolve_ids=self.ids.view().copy(), creators=self.creators.view().copy(),
        )

    def aging(self) -> AgingFunction:
        return AgingFunction(self.f_values.copy())

    def current_r(self) -> np.ndarray:
        """Frozen r for old resolves, windowed estimates for the rest."""
        r = self.frozen_r.copy()
        w0 = self.window_start
        r[w0:] = [_point(self, j) for j in range(w0, self.n_resolves)]
        return r


def _touch_user(state: OnlineState, user: int, t: float):
    rec = state.users.get(user)
    if rec is None:
        state.users[user] = [1, t, t]
    else:
        rec[0] += 1
        rec[2] = t


def _denominator(state: OnlineState, j: int) -> float:
    """D_j = sum_a f(a) v_{j+a-1} over the intervals observed so far."""
    v = state.v[j:]
    return float(np.dot(state.f_values[: v.size], v))


def _point(state: OnlineState, j: int) -> float:
    vr = state.resolve_votes[j]
    if vr == 0:
        return 0.0
    return float(vr / _denominator(state, j))


def update(state: OnlineState, event: Event) -> OnlineState:
    """Fold one event into the state (in place) and return it."""
    t = float(event.time)
    if t < state.last_time:
        raise OutOfOrderEvent(f"event at t={t} precedes t={state.last_time}")
    state.last_time = t
    kind = EventKind(event.kind)
    _touch_user(state, int(event.actor), t)
    if kind == EventKind.CREATE:
        _introduce(state, int(event.resolve), int(event.actor))
    elif kind == EventKind.VOTE:
        j = state.ordinal.get(int(event.resolve))
        if j is None:
            raise ValidationError(f"vote on unknown resolve {event.resolve}")
        i = state.n_resolves - 1
        state._v.a[i] += 1
        state._vr.a[j] += 1
        state._va.a[i - j] += 1
        if state.cells is not None:
            state.cells[(i, j)] = state.cells.get((i, j), 0) + 1
    return state


def _introduce(state: OnlineState, rid: int, creator: int):
    if rid in state.ordinal:
        raise ValidationError(f"resolve {rid} created twice")
    cfg = state.config
    # the resolve about to leave the window keeps its current estimate forever
    leaving = state.n_resolves - cfg.window
    if leaving >= 0:
        state._r.a[leaving] = _point(state, leaving)
    state.ordinal[rid] = state.n_resolves
    state.ids.append(rid)
    state.creators.append(creator)
    for arr in (state._v, state._vr, state._va):
        arr.append(0)
    state._r.append(np.nan)
    first = state._f.n == 0
    state._f.append(1.0)
    state._f_frozen.append(first)  # f(1) = 1 fixes the r <-> f scale
    if cfg.reoptimize == "resolve" and state.n_resolves > 1:
        windowed_reoptimize(state, cfg.fixed_point)


def estimate_new_resolve(state: OnlineState, j: int, level: float = 0.95):
    """(r_j, (lo, hi)) for the resolve with 0-based ordinal j, using the
    current f. Returns (nan, (0, inf)) before its first non-creation vote."""
    if not 0 <= j < state.n_resolves:
        raise ValidationError(f"resolve ordinal {j} not introduced")
    vr = int(state.resolve_votes[j])
    if vr == 0:
        return float("nan"), (0.0, float("inf"))
    D = _denominator(state, j)
    lo, hi = poisson_interval(vr, level)
    return vr / D, (float(lo) / D, float(hi) / D)


def streaming_user_rate(state: OnlineState, user: int, at: float, level: float = 0.95):
    """e_u / (at - first event time) with an exact Poisson interval."""
    rec = state.users.get(user)
    if rec is None or rec[0] < 2:
        raise InsufficientHistory(f"user {user} has fewer than 2 events")
    count, first, _ = rec
    T = float(at) - first
    if T <= 0:
        raise InsufficientHistory(f"no elapsed time for user {user}")
    lo, hi = poisson_interval(count, level)
    return count / T, (float(lo) / T, float(hi) / T)


def _restricted_loglik(v, vr, va, r, f, D):
    m = vr > 0
    n = va > 0
    return float(np.sum(vr[m] * np.log(r[m])) + np.sum(va[n] * np.log(f[n])) - r @ D)


def windowed_reoptimize(state: OnlineState, cfg: FixedPointConfig | None = None) -> OnlineState:
    """Alternating fixed point over the windowed r and the unfrozen f(a),
    with frozen values held constant. Ages whose vote count has reached the
    freeze threshold are frozen afterwards."""
    cfg = cfg or state.config.fixed_point
    R = state.n_resolves
    if R == 0:
        raise ValidationError("window is empty")
    w0 = state.window_start
    v = state.v.astype(float)
    vr = state.resolve_votes.astype(float)
    va = state.age_votes.astype(float)
    f = state.f_values
    free = ~state.f_frozen

    if w0 == 0 and not np.any(state.f_frozen[1:]):
        if R >= 2 and v.sum() > 0 and va[0] > 0:
            res = estimate(IntervalCounts(state.v, state.resolve_votes, state.age_votes, None), cfg)
            f[:] = res.f.values
            state.window_r = res.r
            state.last_trace = res.trace
            state.converged = res.converged
        _freeze_ages(state)
        state.n_reoptimizations += 1
        return state

    # frozen resolves contribute a fixed part of every E_a
    r_old = np.nan_to_num(state.frozen_r[:w0])
    E_frozen = lagged_sums(v, np.concatenate([r_old, np.zeros(R - w0)])) if w0 else np.zeros(R)
    vw = v[w0:]
    vrw = vr[w0:]
    K = R - w0
    r = np.array([_point(state, j) for j in range(w0, R)])
    trace = []
    converged = False
    for _ in range(cfg.max_iterations):
        D = lagged_sums(vw, f[:K])
        r_new = np.where(vrw > 0, vrw / np.where(D > 0, D, 1.0), 0.0)
        E = E_frozen.copy()
        E[:K] += lagged_sums(vw, r_new)
        f_new = f.copy()
        f_new[free] = 0.0
        upd = free & (va > 0)
        f_new[upd] = va[upd] / E[upd]
        D = lagged_sums(vw, f_new[:K])
        trace.append(_restricted_loglik(vw, vrw, va, r_new, f_new, D)
                     - float(E_frozen @ f_new))
        change = max(
            float(np.max(np.abs(r_new - r) / (r + 1e-12), initial=0.0)),
            float(np.max(np.abs(f_new - f) / (f + 1e-12), initial=0.0)),
        )
        r = r_new
        f[:] = f_new
        if change < cfg.tolerance:
            converged = True
            break
    state.window_r = r
    state.last_trace = trace
    state.n_reoptimizations += 1
    _freeze_ages(state)
    state.converged = converged
    if not converged:
        warnings.warn(f"windowed fixed point not converged after {cfg.max_iterations} sweeps",
                      RuntimeWarning, stacklevel=2)
    return state


def _freeze_ages(state: OnlineState):
    ripe = (state.age_votes >= state.config.f_freeze_votes) & ~state.f_frozen
    state._f_frozen.a[: state.n_resolves][ripe] = True


def replay(events, config: OnlineConfig | None = None, on_resolve=None) -> OnlineState:
    """Feed an iterable of events through a fresh state.

    ``on_resolve(state)`` is called after every resolve introduction.
    """
    state = OnlineState(config)
    for ev in events:
        update(state, ev)
        if on_resolve is not None and EventKind(ev.kind) == EventKind.CREATE:
            on_resolve(state)
    return state
