"""Generative model of user arrival, activity, voting and link formation.

Users arrive as a Poisson process, stay for an exponential lifetime and emit
actions at their own rate while active. Each action is a resolve creation,
an ideological link or a vote. Votes pick a resolve with probability
proportional to r_j f(age_j); links pick a currently active partner with
probability proportional to the partner's vote count.

Everything is generated column-wise and the sequential constraints are
enforced afterwards. A vote that would repeat an earlier (user, resolve)
pair swaps its target with another user's vote in the same interval, which
keeps both the allocation over resolves and every user's vote count.
Repeats with no valid partner come from users who have voted on most of what
is visible and are dropped, so the heaviest users realise fewer votes than
their nominal rate. A link that repeats an earlier pair is redrawn from the
same partner law.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .core import IDEOLOGICAL, AgingFunction, EventKind, EventLog, NetworkKind
from .errors import ConfigError, NoEligibleTarget

MAX_SWAP_ROUNDS = 64
MAX_REDRAW_ROUNDS = 64  # link partner redraws


@dataclass(frozen=True)
class PowerLawAging:
    s: float = 0.5
    breakpoint: int = 50
    s_after: float = 1.0

    def table(self, max_age: int) -> AgingFunction:
        return AgingFunction.power_law(max(max_age, 1), self.s, self.breakpoint, self.s_after)

    def to_dict(self):
        return {"s": self.s, "breakpoint": self.breakpoint, "s_after": self.s_after}


@dataclass(frozen=True)
class TableAging:
    """Explicit f(1..n); resolves older than n are never shown again."""

    table_values: tuple

    def table(self, max_age: int) -> AgingFunction:
        vals = np.zeros(max(max_age, 1))
        t = np.asarray(self.table_values, dtype=float)
        k = min(t.size, vals.size)
        vals[:k] = t[:k]
        return AgingFunction(vals)

    def to_dict(self):
        return {"table": list(self.table_values)}


_JSON_KEYS = {
    "alpha": "alpha", "tau": "tau", "q": "q", "lambda": "lam", "rho_mu": "rho_mu",
    "rho_sigma": "rho_sigma", "r_mu": "r_mu", "r_sigma": "r_sigma", "aging": "aging",
    "friends_attach_prob": "friends_attach_prob",
    "friends_also_ideological_prob": "friends_also_ideological_prob",
    "duration_days": "duration_days", "seed": "seed",
}


@dataclass(frozen=True)
class SimConfig:
    alpha: float = 9.3
    tau: float = 124.0
    q: float = 0.018
    lam: float = 0.043
    rho_mu: float = 0.03
    rho_sigma: float = 1.70
    r_mu: float = -3.11
    r_sigma: float = 0.69
    aging: object = field(default_factory=PowerLawAging)
    friends_attach_prob: float = 0.001
    friends_also_ideological_prob: float = 0.0
    duration_days: float = 500.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("alpha", "tau", "duration_days"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        for name in ("rho_sigma", "r_sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be >= 0, got {v!r}")
        for name in ("rho_mu", "r_mu"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        for name in ("q", "lam", "friends_attach_prob", "friends_also_ideological_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be a probability, got {v!r}")
        if self.q + self.lam > 1.0:
            raise ConfigError("q + lambda must not exceed 1")
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit non-negative integer")
        if isinstance(self.aging, PowerLawAging):
            if self.aging.breakpoint < 1:
                raise ConfigError("aging breakpoint must be >= 1")
        elif isinstance(self.aging, TableAging):
            t = np.asarray(self.aging.table_values, dtype=float)
            if t.size == 0 or t[0] != 1.0 or np.any(t <= 0) or not np.all(np.isfinite(t)):
                raise ConfigError("aging table must start at 1 and be positive")
        else:
            raise ConfigError("aging must be a power law or a table")

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        unknown = set(d) - set(_JSON_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {_JSON_KEYS[k]: v for k, v in d.items()}
        if "aging" in kw:
            a = kw["aging"]
            if not isinstance(a, dict):
                raise ConfigError("aging must be an object")
            if "table" in a:
                if set(a) != {"table"}:
                    raise ConfigError("aging table form takes only 'table'")
                kw["aging"] = TableAging(tuple(float(x) for x in a["table"]))
            else:
                extra = set(a) - {"s", "breakpoint", "s_after"}
                if extra:
                    raise ConfigError(f"unknown aging keys: {sorted(extra)}")
                kw["aging"] = PowerLawAging(**{k: (int(v) if k == "breakpoint" else float(v)) for k, v in a.items()})
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {}
        for key, attr in _JSON_KEYS.items():
            v = getattr(self, attr)
            out[key] = v.to_dict() if key == "aging" else v
        return out

    def replace(self, **kw) -> "SimConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return SimConfig(**d)


@dataclass(eq=False)
class SimOutput:
    log: EventLog
    planted_r: np.ndarray  # indexed by resolve id (= creation order)
    planted_rho: np.ndarray  # indexed by user id (= arrival order)
    aging: AgingFunction
    networks: dict  # NetworkKind -> (m, 2) int array
    arrival: np.ndarray
    lifetime: np.ndarray
    config: SimConfig
    dropped_votes: int = 0
    dropped_links: int = 0

    @property
    def departure(self):
        return self.arrival + self.lifetime

    def planted_json(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "r": self.planted_r.tolist(),
            "rho": self.planted_rho.tolist(),
            "arrival": self.arrival.tolist(),
            "lifetime": self.lifetime.tolist(),
            "aging": self.aging.values.tolist(),
            "links": {k.label: self.networks[k].tolist() for k in NetworkKind},
            "dropped_votes": self.dropped_votes,
            "dropped_links": self.dropped_links,
        }


def rng_streams(seed: int, names) -> dict:
    """Independent generators split off one seed, keyed by purpose."""
    children = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {name: np.random.Generator(np.random.PCG64(c)) for name, c in zip(names, children)}


# ---------------------------------------------------------------------------
# single-draw rules (reference form of the vectorized samplers below)


def choose_vote_target(ages, r, f: AgingFunction, rng: np.random.Generator) -> int:
    """Index of the resolve receiving the next vote, chosen with probability
    proportional to r_j f(a_j)."""
    ages = np.asarray(ages)
    if ages.size == 0:
        raise NoEligibleTarget("no resolves to vote on")
    w = np.asarray(r, float) * f(ages)
    total = w.sum()
    if total <= 0:
        raise NoEligibleTarget("all resolves have zero weight")
    return int(np.searchsorted(np.cumsum(w), rng.random() * total, side="right"))


def form_link(actor, candidates, vote_counts, rng: np.random.Generator, active=None):
    """Pick an ideological partner for ``actor``.

    The target is drawn from the active candidates other than ``actor`` with
    probability proportional to N_actor * N_target (the actor's factor
    cancels); the network is allies or nemeses with equal probability.
    """
    candidates = np.asarray(candidates)
    w = np.asarray(vote_counts, dtype=float).copy()
    w[candidates == actor] = 0.0
    if active is not None:
        w[~np.asarray(active, bool)] = 0.0
    total = w.sum()
    if total <= 0:
        raise NoEligibleTarget(f"user {actor} has no eligible partner")
    k = int(np.searchsorted(np.cumsum(w), rng.random() * total, side="right"))
    net = IDEOLOGICAL[int(rng.random() < 0.5)]
    return int(candidates[k]), net


# ---------------------------------------------------------------------------
# vectorized samplers


def draw_vote_targets(interval, r, f_values, rng: np.random.Generator) -> np.ndarray:
    """Vectorized ``choose_vote_target`` for many votes at once.

    ``interval[k]`` is the 0-based interval of vote k, so resolves 0..interval[k]
    exist and resolve j has age interval[k] - j + 1. Ages are proposed from f
    and accepted with probability r_j / max(r), which samples exactly from
    r_j f(a_j) / sum.
    """
    interval = np.asarray(interval, dtype=np.int64)
    r = np.asarray(r, dtype=float)
    f = np.asarray(f_values, dtype=float)
    if f.size < r.size:
        f = np.concatenate([f, np.zeros(r.size - f.size)])
    F = np.cumsum(f)
    rmax_prefix = np.maximum.accumulate(r) if r.size else r
    out = np.empty(interval.size, dtype=np.int64)
    pending = np.arange(interval.size)
    while pending.size:
        i = interval[pending]
        u = rng.random(pending.size) * F[i]
        a = np.minimum(np.searchsorted(F, u, side="right"), i)  # 0-based age
        j = i - a
        acc = rng.random(pending.size) * rmax_prefix[i] < r[j]
        out[pending[acc]] = j[acc]
        pending = pending[~acc]
    return out


def _first_occurrence_dups(keys: np.ndarray) -> np.ndarray:
    """Boolean mask of entries whose key appeared earlier in the array."""
    _, first = np.unique(keys, return_index=True)
    dup = np.ones(keys.size, bool)
    dup[first] = False
    return dup


def _swap_round(user, interval, target, movable, n_res, rng, attempts=8):
    """Swap the targets of each repeated vote and a random vote of another
    user in the same interval, where neither side ends up repeating.

    Each repeat tries up to ``attempts`` random partners. Swapping inside one
    interval leaves every interval's resolve tally and every user's vote
    count unchanged. Returns the number of repeats left.
    """
    keys = user * n_res + target
    dup = np.flatnonzero(_first_occurrence_dups(keys) & movable)
    if dup.size == 0:
        return 0
    existing = np.unique(keys)

    def absent(k):
        pos = np.minimum(np.searchsorted(existing, k), existing.size - 1)
        return existing[pos] != k

    lo = np.searchsorted(interval, interval[dup], "left")
    hi = np.searchsorted(interval, interval[dup], "right")
    partner = np.full(dup.size, -1, dtype=np.int64)
    pending = np.arange(dup.size)
    for _ in range(attempts):
        if not pending.size:
            break
        d = dup[pending]
        p = lo[pending] + (rng.random(pending.size) * (hi[pending] - lo[pending])).astype(np.int64)
        ok = (movable[p] & (user[p] != user[d]) & (target[p] != target[d])
              & absent(user[d] * n_res + target[p]) & absent(user[p] * n_res + target[d]))
        partner[pending[ok]] = p[ok]
        pending = pending[~ok]
    found = partner >= 0
    dup, partner = dup[found], partner[found]
    new_a = user[dup] * n_res + target[partner]
    new_b = user[partner] * n_res + target[dup]
    # a row may take part in one swap per round and new pairs must not collide
    rows = np.concatenate([dup, partner])
    reused = np.isin(rows, rows[_first_occurrence_dups(rows)])
    new = np.concatenate([new_a, new_b])
    collide = np.isin(new, new[_first_occurrence_dups(new)])
    bad = reused | collide
    bad = bad[: dup.size] | bad[dup.size:]
    dup, partner = dup[~bad], partner[~bad]
    target[dup], target[partner] = target[partner], target[dup].copy()
    return int(np.count_nonzero(_first_occurrence_dups(user * n_res + target) & movable))


def _distinct_votes(user, interval, target, movable, rng):
    """Remove repeated (user, resolve) votes.

    Repeats are resolved by swapping targets with another user's vote in the
    same interval, which keeps both the per-interval allocation over resolves
    and each user's vote count intact. Repeats that find no partner belong to
    users who have already voted on most of what is visible; they are dropped
    rather than redrawn, since a redraw would push them onto the newest
    resolves. Creation rows are never moved. ``interval`` must be
    non-decreasing. Returns (target, keep).
    """
    n_res = int(target.max()) + 1 if target.size else 1
    target = target.copy()
    left = None
    for _ in range(MAX_SWAP_ROUNDS):
        now = _swap_round(user, interval, target, movable, n_res, rng)
        # stop once a round fixes (almost) nothing: what is left is saturation
        if now == 0 or (left is not None and left - now <= 0.01 * left):
            break
        left = now
    keep = ~(_first_occurrence_dups(user * n_res + target) & movable)
    return target, keep


def _draw_partners(actor, t, vote_time, vote_user, arrival, end, rng, max_rounds=200):
    """Partner for each link action: a prior vote chosen uniformly (so users
    are weighted by their vote count so far), accepted if its author is still
    active and is not the actor. -1 when no partner is found."""
    n_prior = np.searchsorted(vote_time, t, side="left")
    out = np.full(actor.size, -1, dtype=np.int64)
    pending = np.flatnonzero(n_prior > 0)
    for _ in range(max_rounds):
        if not pending.size:
            break
        k = (rng.random(pending.size) * n_prior[pending]).astype(np.int64)
        w = vote_user[k]
        tt = t[pending]
        ok = (w != actor[pending]) & (arrival[w] <= tt) & (end[w] > tt)
        out[pending[ok]] = w[ok]
        pending = pending[~ok]
    return out


def simulate(config: SimConfig) -> SimOutput:
    config.validate()
    rng = rng_streams(config.seed, ["users", "actions", "interest", "votes", "links", "friends"])
    D = float(config.duration_days)

    # users
    g = rng["users"]
    n_users = int(g.poisson(config.alpha * D))
    arrival = np.sort(g.uniform(0.0, D, n_users))
    rho = g.lognormal(config.rho_mu, config.rho_sigma, n_users) if config.rho_sigma > 0 else np.full(n_users, math.exp(config.rho_mu))
    lifetime = g.exponential(config.tau, n_users)
    end = np.minimum(arrival + lifetime, D)

    # actions
    g = rng["actions"]
    span = end - arrival
    n_act = g.poisson(rho * span)
    a_user = np.repeat(np.arange(n_users, dtype=np.int64), n_act)
    a_time = arrival[a_user] + g.random(a_user.size) * span[a_user]
    u = g.random(a_user.size)
    a_kind = np.where(u < config.q, EventKind.CREATE, np.where(u < config.q + config.lam, EventKind.LINK, EventKind.VOTE)).astype(np.int8)
    order = np.argsort(a_time, kind="stable")
    a_user, a_time, a_kind = a_user[order], a_time[order], a_kind[order]

    # resolves
    is_create = a_kind == EventKind.CREATE
    R = int(is_create.sum())
    g = rng["interest"]
    r = g.lognormal(config.r_mu, config.r_sigma, R) if config.r_sigma > 0 else np.full(R, math.exp(config.r_mu))
    aging = config.aging.table(R)

    # votes (creations included, they block the creator from voting again)
    vc = (a_kind == EventKind.VOTE) | is_create
    v_user, v_time, v_create = a_user[vc], a_time[vc], is_create[vc]
    interval = np.cumsum(v_create) - 1  # creation rows sit in their own new interval
    has_resolve = interval >= 0
    dropped_votes = int(np.count_nonzero(~has_resolve))
    v_user, v_time, v_create, interval = v_user[has_resolve], v_time[has_resolve], v_create[has_resolve], interval[has_resolve]
    target = np.empty(v_user.size, dtype=np.int64)
    target[v_create] = np.arange(R)
    is_vote = ~v_create
    target[is_vote] = draw_vote_targets(interval[is_vote], r, aging.values, rng["votes"])
    target, keep = _distinct_votes(v_user, interval, target, is_vote, rng["votes"])
    dropped_votes += int(np.count_nonzero(~keep))
    v_user, v_time, v_create, target = v_user[keep], v_time[keep], v_create[keep], target[keep]

    # ideological links from link actions
    g = rng["links"]
    lk = a_kind == EventKind.LINK
    l_actor, l_time = a_user[lk], a_time[lk]
    l_net = np.where(g.random(l_actor.size) < 0.5, NetworkKind.ALLIES, NetworkKind.NEMESES).astype(np.int8)
    l_target = _draw_partners(l_actor, l_time, v_time, v_user, arrival, end, g)

    # friends at arrival, optionally doubled by an ideological link
    gf = rng["friends"]
    f_actor, f_target, f_time = [], [], []
    p = config.friends_attach_prob
    if p > 0:
        for uid in range(1, n_users):
            alive = np.flatnonzero(end[:uid] > arrival[uid])
            k = int(gf.binomial(alive.size, p)) if alive.size else 0
            if k:
                chosen = gf.choice(alive, size=k, replace=False)
                f_actor.append(np.full(k, uid))
                f_target.append(chosen)
                f_time.append(np.full(k, arrival[uid]))
    f_actor = np.concatenate(f_actor) if f_actor else np.zeros(0, np.int64)
    f_target = np.concatenate(f_target) if f_target else np.zeros(0, np.int64)
    f_time = np.concatenate(f_time) if f_time else np.zeros(0)
    both = gf.random(f_actor.size) < config.friends_also_ideological_prob
    fi_net = np.where(gf.random(int(both.sum())) < 0.5, NetworkKind.ALLIES, NetworkKind.NEMESES).astype(np.int8)

    link_actor = np.concatenate([f_actor, f_actor[both], l_actor])
    link_target = np.concatenate([f_target, f_target[both], l_target])
    link_time = np.concatenate([f_time, f_time[both], l_time])
    link_net = np.concatenate([np.full(f_actor.size, NetworkKind.FRIENDS, np.int8), fi_net, l_net])
    link_target, link_keep = _distinct_links(link_actor, link_target, link_time, link_net,
                                             v_time, v_user, arrival, end, g, n_users)
    dropped_links = int(np.count_nonzero(~link_keep))
    link_actor, link_target, link_time, link_net = (
        link_actor[link_keep], link_target[link_keep], link_time[link_keep], link_net[link_keep])

    # assemble
    n_v, n_l = v_user.size, link_actor.size
    time = np.concatenate([v_time, link_time])
    actor = np.concatenate([v_user, link_actor])
    kind = np.concatenate([np.where(v_create, EventKind.CREATE, EventKind.VOTE).astype(np.int8),
                           np.full(n_l, EventKind.LINK, np.int8)])
    resolve = np.concatenate([target, np.full(n_l, -1, np.int64)])
    tgt = np.concatenate([np.full(n_v, -1, np.int64), link_target])
    net = np.concatenate([np.full(n_v, -1, np.int8), link_net])
    order = np.argsort(time, kind="stable")
    log = EventLog.from_arrays(time[order], actor[order], kind[order], resolve[order], tgt[order], net[order],
                               validate=False)

    networks = {}
    for k in NetworkKind:
        m = link_net == k
        networks[k] = np.column_stack([link_actor[m], link_target[m]]).astype(np.int64)
    return SimOutput(log, r, rho, aging, networks, arrival, lifetime, config, dropped_votes, dropped_links)


def _distinct_links(actor, target, time, net, vote_time, vote_user, arrival, end, rng, n_users):
    """Redraw ideological links that repeat an earlier pair; friends
    duplicates are impossible by construction. Returns targets and keep-mask."""
    target = target.copy()
    keep = target >= 0
    top = max(n_users, 1)
    ideo = net != NetworkKind.FRIENDS
    for _ in range(MAX_REDRAW_ROUNDS):
        idx = np.flatnonzero(keep)
        lo = np.minimum(actor[idx], target[idx])
        hi = np.maximum(actor[idx], target[idx])
        keys = (net[idx].astype(np.int64) * top + lo) * top + hi
        order = np.argsort(time[idx], kind="stable")
        dup_sorted = _first_occurrence_dups(keys[order])
        dup = np.zeros(idx.size, bool)
        dup[order] = dup_sorted
        bad = idx[dup]
        if not bad.size:
            return target, keep
        if np.any(~ideo[bad]):
            # a friends link colliding with an earlier friends-borne ideological copy
            keep[bad[~ideo[bad]]] = False
            bad = bad[ideo[bad]]
        target[bad] = _draw_partners(actor[bad], time[bad], vote_time, vote_user, arrival, end, rng)
        keep[bad[target[bad] < 0]] = False
    idx = np.flatnonzero(keep)
    lo = np.minimum(actor[idx], target[idx])
    hi = np.maximum(actor[idx], target[idx])
    keys = (net[idx].astype(np.int64) * top + lo) * top + hi
    order = np.argsort(time[idx], kind="stable")
    dup = np.zeros(idx.size, bool)
    dup[order] = _first_occurrence_dups(keys[order])
    keep[idx[dup]] = False
    return target, keep


def fitness_network(fitness, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Static fitness graph: pair (i, j) is linked independently with
    probability min(1, scale * x_i x_j / sum(x)). Returns an (m, 2) edge array."""
    x = np.asarray(fitness, dtype=float)
    S = x.sum()
    edges = []
    for i in range(x.size - 1):
        p = np.minimum(1.0, scale * x[i] * x[i + 1:] / S)
        hit = np.flatnonzero(rng.random(p.size) < p)
        if hit.size:
            edges.append(np.column_stack([np.full(hit.size, i), hit + i + 1]))
    return np.concatenate(edges) if edges else np.zeros((0, 2), np.int64)
