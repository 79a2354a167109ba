"""Event-log data model, CSV ingestion and the derived count tables.

The log is stored column-wise (one numpy array per CSV column) because the
simulator and the estimators routinely handle logs with millions of events.
User and resolve identifiers are non-negative integers.

Index convention: arrays of per-resolve, per-interval and per-age quantities
are 0-based, so ``counts.interval_votes[0]`` is v_1 and ``f.values[0]`` is
f(1).
"""
from __future__ import annotations

import csv
import enum
import io
import os
from dataclasses import dataclass, field
from typing import IO, Iterator, NamedTuple, Union

import numpy as np
from scipy import sparse

from .errors import ParseError, ValidationError

CSV_HEADER = ("time", "user", "kind", "resolve", "target", "network")


class NetworkKind(enum.IntEnum):
    FRIENDS = 0
    ALLIES = 1
    NEMESES = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "NetworkKind":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown network {text!r}") from None


IDEOLOGICAL = (NetworkKind.ALLIES, NetworkKind.NEMESES)


class EventKind(enum.IntEnum):
    VOTE = 0
    CREATE = 1
    LINK = 2

    @property
    def label(self) -> str:
        return {0: "vote", 1: "create", 2: "link"}[int(self)]


_KIND_BY_LABEL = {k.label: k for k in EventKind}


class Event(NamedTuple):
    """One row of the log. ``resolve`` is -1 for links; ``target`` and
    ``network`` are -1 unless the event is a link."""

    time: float
    actor: int
    kind: EventKind
    resolve: int = -1
    target: int = -1
    network: int = -1

    @classmethod
    def vote(cls, time, actor, resolve):
        return cls(float(time), int(actor), EventKind.VOTE, int(resolve))

    @classmethod
    def create(cls, time, actor, resolve):
        return cls(float(time), int(actor), EventKind.CREATE, int(resolve))

    @classmethod
    def link(cls, time, actor, target, network):
        return cls(float(time), int(actor), EventKind.LINK, -1, int(target), int(NetworkKind(network)))


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventLog:
    """Time-ordered event log in columnar form.

    Construct through :meth:`from_events`, :meth:`from_arrays` or
    :func:`ingest_event_log`; all of them validate the log invariants.
    """

    time: np.ndarray
    actor: np.ndarray
    kind: np.ndarray
    resolve: np.ndarray
    target: np.ndarray
    network: np.ndarray

    @classmethod
    def from_arrays(cls, time, actor, kind, resolve=None, target=None, network=None, validate=True):
        n = len(time)
        fill = np.full(n, -1, dtype=np.int64)
        log = cls(
            time=_frozen(time, np.float64),
            actor=_frozen(actor, np.int64),
            kind=_frozen(kind, np.int8),
            resolve=_frozen(fill if resolve is None else resolve, np.int64),
            target=_frozen(fill if target is None else target, np.int64),
            network=_frozen(fill if network is None else network, np.int8),
        )
        if validate:
            validate_log(log)
        return log

    @classmethod
    def from_events(cls, events, validate=True):
        events = list(events)
        if not events:
            return cls.empty()
        cols = list(zip(*events))
        return cls.from_arrays(*cols, validate=validate)

    @classmethod
    def empty(cls):
        return cls.from_arrays(np.zeros(0), np.zeros(0), np.zeros(0))

    def __len__(self):
        return len(self.time)

    def __iter__(self) -> Iterator[Event]:
        for row in zip(
            self.time.tolist(),
            self.actor.tolist(),
            self.kind.tolist(),
            self.resolve.tolist(),
            self.target.tolist(),
            self.network.tolist(),
        ):
            yield Event(row[0], row[1], EventKind(row[2]), *row[3:])

    def __getitem__(self, i) -> Event:
        return Event(
            float(self.time[i]),
            int(self.actor[i]),
            EventKind(int(self.kind[i])),
            int(self.resolve[i]),
            int(self.target[i]),
            int(self.network[i]),
        )

    @property
    def n_votes(self) -> int:
        return int(np.count_nonzero(self.kind == EventKind.VOTE))

    @property
    def n_resolves(self) -> int:
        return int(np.count_nonzero(self.kind == EventKind.CREATE))

    def links(self, network: NetworkKind) -> np.ndarray:
        """(m, 2) array of the link pairs recorded for ``network``."""
        m = (self.kind == EventKind.LINK) & (self.network == int(network))
        return np.column_stack([self.actor[m], self.target[m]])


def validate_log(log: EventLog) -> None:
    """Raise :class:`ValidationError` naming the first violated invariant."""
    n = len(log)
    if n == 0:
        return
    if not np.all(np.isfinite(log.time)):
        raise ValidationError(f"event {int(np.argmin(np.isfinite(log.time)))}: non-finite time")
    bad = np.flatnonzero(np.diff(log.time) < 0)
    if bad.size:
        raise ValidationError(f"event {bad[0] + 1}: time decreases ({log.time[bad[0]]} -> {log.time[bad[0] + 1]})")
    bad = np.flatnonzero((log.kind < 0) | (log.kind > 2))
    if bad.size:
        raise ValidationError(f"event {bad[0]}: unknown kind {log.kind[bad[0]]}")
    if np.any(log.actor < 0):
        raise ValidationError(f"event {int(np.argmax(log.actor < 0))}: negative user id")

    is_create = log.kind == EventKind.CREATE
    is_vote = log.kind == EventKind.VOTE
    is_link = log.kind == EventKind.LINK
    rv = is_create | is_vote
    if np.any(log.resolve[rv] < 0):
        idx = np.flatnonzero(rv & (log.resolve < 0))[0]
        raise ValidationError(f"event {idx}: vote/create without resolve id")

    created_ids = log.resolve[is_create]
    uniq, first = np.unique(created_ids, return_index=True)
    if uniq.size != created_ids.size:
        dup_mask = np.ones(created_ids.size, bool)
        dup_mask[first] = False
        idx = np.flatnonzero(is_create)[np.flatnonzero(dup_mask)[0]]
        raise ValidationError(f"event {idx}: resolve {log.resolve[idx]} created twice")

    # every vote must follow the creation of its resolve
    vote_idx = np.flatnonzero(is_vote)
    if vote_idx.size:
        ok = np.zeros(vote_idx.size, bool)
        if uniq.size:
            create_pos = np.flatnonzero(is_create)[first]
            pos = np.minimum(np.searchsorted(uniq, log.resolve[vote_idx]), uniq.size - 1)
            known = uniq[pos] == log.resolve[vote_idx]
            ok[known] = create_pos[pos[known]] < vote_idx[known]
        if not ok.all():
            idx = vote_idx[np.flatnonzero(~ok)[0]]
            raise ValidationError(f"event {idx}: vote on resolve {log.resolve[idx]} before/without its creation")

    # (actor, resolve) at most once, the creation counting as the creator's vote
    rv_idx = np.flatnonzero(rv)
    if rv_idx.size:
        keys = log.actor[rv_idx] * (int(log.resolve.max()) + 1) + log.resolve[rv_idx]
        _, first_k = np.unique(keys, return_index=True)
        if first_k.size != keys.size:
            dup_mask = np.ones(keys.size, bool)
            dup_mask[first_k] = False
            idx = rv_idx[np.flatnonzero(dup_mask)[0]]
            raise ValidationError(f"event {idx}: user {log.actor[idx]} votes twice on resolve {log.resolve[idx]}")

    link_idx = np.flatnonzero(is_link)
    if link_idx.size:
        a, b, net = log.actor[link_idx], log.target[link_idx], log.network[link_idx]
        if np.any((net < 0) | (net > 2)):
            idx = link_idx[np.flatnonzero((net < 0) | (net > 2))[0]]
            raise ValidationError(f"event {idx}: link without valid network")
        if np.any(b < 0):
            raise ValidationError(f"event {link_idx[np.flatnonzero(b < 0)[0]]}: link without target")
        if np.any(a == b):
            raise ValidationError(f"event {link_idx[np.flatnonzero(a == b)[0]]}: self link")
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        top = int(hi.max()) + 1
        keys = (net.astype(np.int64) * top + lo) * top + hi
        _, first_k = np.unique(keys, return_index=True)
        if first_k.size != keys.size:
            dup_mask = np.ones(keys.size, bool)
            dup_mask[first_k] = False
            idx = link_idx[np.flatnonzero(dup_mask)[0]]
            raise ValidationError(f"event {idx}: duplicate link {log.actor[idx]}-{log.target[idx]}")


Source = Union[str, os.PathLike, IO[str], IO[bytes], bytes]


def _open_text(source):
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8")), True
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def _int_field(text, line, name, required):
    if text == "":
        if required:
            raise ParseError(line, f"missing {name}")
        return -1
    try:
        v = int(text)
    except ValueError:
        raise ParseError(line, f"{name} is not an integer: {text!r}") from None
    if v < 0:
        raise ParseError(line, f"{name} must be non-negative")
    return v


def ingest_event_log(source: Source) -> EventLog:
    """Parse an event CSV (path, bytes or file object) into a validated log."""
    fh, close = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, "missing header") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise ParseError(1, f"header must be {','.join(CSV_HEADER)}")
        times, actors, kinds, resolves, targets, networks = [], [], [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise ParseError(line, f"expected 6 fields, got {len(row)}")
            t, user, kind, res, tgt, net = row
            try:
                tf = float(t)
            except ValueError:
                raise ParseError(line, f"time is not a number: {t!r}") from None
            k = _KIND_BY_LABEL.get(kind)
            if k is None:
                raise ParseError(line, f"unknown kind {kind!r}")
            times.append(tf)
            actors.append(_int_field(user, line, "user", True))
            kinds.append(k)
            if k is EventKind.LINK:
                if res != "":
                    raise ParseError(line, "link rows must leave resolve empty")
                resolves.append(-1)
                targets.append(_int_field(tgt, line, "target", True))
                try:
                    networks.append(int(NetworkKind.parse(net)))
                except ValueError as exc:
                    raise ParseError(line, str(exc)) from None
            else:
                if tgt != "" or net != "":
                    raise ParseError(line, f"{kind} rows must leave target/network empty")
                resolves.append(_int_field(res, line, "resolve", True))
                targets.append(-1)
                networks.append(-1)
    finally:
        if close:
            fh.close()
    return EventLog.from_arrays(times, actors, kinds, resolves, targets, networks)


def write_event_log(log: EventLog, dest) -> None:
    """Write ``log`` in the event CSV format (times as shortest round-trip reprs)."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            _write_rows(log, fh)
    else:
        _write_rows(log, dest)


def _write_rows(log, fh):
    fh.write(",".join(CSV_HEADER) + "\n")
    labels = ("vote", "create", "link")
    nets = ("friends", "allies", "nemeses")
    chunk = []
    for t, u, k, r, tg, nw in zip(
        log.time.tolist(), log.actor.tolist(), log.kind.tolist(),
        log.resolve.tolist(), log.target.tolist(), log.network.tolist(),
    ):
        if k == 2:
            chunk.append(f"{t!r},{u},link,,{tg},{nets[nw]}\n")
        else:
            chunk.append(f"{t!r},{u},{labels[k]},{r},,\n")
        if len(chunk) >= 65536:
            fh.write("".join(chunk))
            chunk.clear()
    fh.write("".join(chunk))


# ---------------------------------------------------------------------------
# aging function


@dataclass(frozen=True, eq=False)
class AgingFunction:
    """Visibility multiplier f(a) tabulated for ages 1..len(values).

    f(1) = 1 is enforced. Estimated tables may contain zeros at ages that
    never received a vote; generated tables are strictly positive.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("aging table must be a non-empty vector")
        if v[0] != 1.0:
            raise ValueError(f"f(1) must equal 1, got {v[0]}")
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValueError("aging values must be finite and non-negative")
        object.__setattr__(self, "values", _frozen(v, np.float64))

    @property
    def max_age(self) -> int:
        return self.values.size

    def __call__(self, age):
        return self.values[np.asarray(age) - 1]

    @classmethod
    def power_law(cls, max_age: int, s: float = 0.5, breakpoint: int = 50, s_after: float = 1.0):
        """a^-s up to ``breakpoint``, then a continuous a^-s_after tail."""
        a = np.arange(1, max_age + 1, dtype=np.float64)
        f = a ** -s
        tail = a > breakpoint
        f[tail] = breakpoint ** -s * (a[tail] / breakpoint) ** -s_after
        return cls(f)

    def normalized(self):
        return AgingFunction(self.values / self.values[0])


# ---------------------------------------------------------------------------
# interval counts


@dataclass(frozen=True, eq=False)
class IntervalCounts:
    """Vote tallies between successive resolve introductions.

    ``cross[i, j]`` (0-based) is the number of votes resolve j+1 received
    during interval I_{i+1}; it is zero above the diagonal. Creation votes
    are excluded everywhere.
    """

    interval_votes: np.ndarray  # v_i
    resolve_votes: np.ndarray  # V^R_j
    age_votes: np.ndarray  # V^A_a
    cross: sparse.csr_matrix
    resolve_ids: np.ndarray = field(default=None)
    creators: np.ndarray = field(default=None)

    @property
    def n_resolves(self) -> int:
        return self.interval_votes.size

    @property
    def total_votes(self) -> int:
        return int(self.interval_votes.sum())

    def last_vote_age(self) -> np.ndarray:
        """Largest age at which each resolve received a vote (0 if none)."""
        coo = self.cross.tocoo()
        out = np.zeros(self.n_resolves, dtype=np.int64)
        np.maximum.at(out, coo.col, coo.row - coo.col + 1)
        return out

    @classmethod
    def from_cells(cls, n_resolves, interval, resolve, resolve_ids=None, creators=None):
        """Build from per-vote 0-based (interval, resolve ordinal) pairs."""
        R = int(n_resolves)
        interval = np.asarray(interval, dtype=np.int64)
        resolve = np.asarray(resolve, dtype=np.int64)
        if np.any(resolve > interval):
            raise ValidationError("vote on a resolve not yet introduced")
        v = np.bincount(interval, minlength=R)
        vr = np.bincount(resolve, minlength=R)
        va = np.bincount(interval - resolve, minlength=R)
        cross = sparse.csr_matrix(
            (np.ones(interval.size, dtype=np.int64), (interval, resolve)), shape=(R, R)
        )
        cross.sum_duplicates()
        return cls(_frozen(v, np.int64), _frozen(vr, np.int64), _frozen(va, np.int64), cross, resolve_ids, creators)


def compute_interval_counts(log: EventLog) -> IntervalCounts:
    """Tabulate v_i, V^R_j, V^A_a and n_{i,j} from a validated log."""
    is_create = log.kind == EventKind.CREATE
    R = int(np.count_nonzero(is_create))
    if R < 1:
        raise ValidationError("log contains no resolves")
    ids = log.resolve[is_create]
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    # interval index of each event = number of creations strictly before it, minus one
    n_created = np.cumsum(is_create)
    is_vote = log.kind == EventKind.VOTE
    interval = n_created[is_vote] - 1
    j = order[np.searchsorted(sorted_ids, log.resolve[is_vote])]
    return IntervalCounts.from_cells(R, interval, j, resolve_ids=_frozen(ids, np.int64),
                                     creators=_frozen(log.actor[is_create], np.int64))


# ---------------------------------------------------------------------------
# users and resolves


@dataclass(frozen=True)
class UserProfile:
    id: int
    first_vote_time: float
    last_vote_time: float
    event_count: int
    vote_count: int

    @property
    def activity_time(self) -> float:
        if np.isnan(self.first_vote_time):
            return 0.0
        return self.last_vote_time - self.first_vote_time

    @property
    def activity_rate(self) -> float:
        T = self.activity_time
        return self.event_count / T if T > 0 else float("nan")

    @property
    def is_active(self) -> bool:
        return self.activity_time >= 1.0


@dataclass(frozen=True)
class ResolveRecord:
    id: int
    ordinality: int
    creator: int
    vote_count: int
    interestingness: float = float("nan")


def user_activity_table(log: EventLog) -> dict:
    """Per-user arrays: ids, first/last vote time, event and vote counts.

    A creation counts as a vote (it carries the creator's first vote).
    Links count as events but do not move the vote-time endpoints.
    """
    if len(log) == 0:
        empty = np.zeros(0)
        return {"user": empty.astype(np.int64), "first_vote": empty, "last_vote": empty,
                "events": empty.astype(np.int64), "votes": empty.astype(np.int64)}
    users, inv = np.unique(log.actor, return_inverse=True)
    U = users.size
    events = np.bincount(inv, minlength=U)
    voting = log.kind != EventKind.LINK
    votes = np.bincount(inv[voting], minlength=U)
    first = np.full(U, np.inf)
    last = np.full(U, -np.inf)
    np.minimum.at(first, inv[voting], log.time[voting])
    np.maximum.at(last, inv[voting], log.time[voting])
    first[votes == 0] = np.nan
    last[votes == 0] = np.nan
    return {"user": users, "first_vote": first, "last_vote": last, "events": events, "votes": votes}


def compute_user_profiles(log: EventLog) -> list[UserProfile]:
    tab = user_activity_table(log)
    return [
        UserProfile(int(u), float(f), float(l), int(e), int(v))
        for u, f, l, e, v in zip(tab["user"], tab["first_vote"], tab["last_vote"], tab["events"], tab["votes"])
    ]


def activity_rates(log: EventLog, active_only: bool = True) -> np.ndarray:
    """rho_u = e_u / T_u for users with T_u > 0 (and T_u >= 1 if ``active_only``)."""
    tab = user_activity_table(log)
    T = tab["last_vote"] - tab["first_vote"]
    keep = np.nan_to_num(T, nan=0.0) >= 1.0 if active_only else np.nan_to_num(T, nan=0.0) > 0
    return tab["events"][keep] / T[keep]


def resolve_records(log: EventLog, counts: IntervalCounts | None = None, r=None) -> list[ResolveRecord]:
    counts = counts if counts is not None else compute_interval_counts(log)
    out = []
    for j in range(counts.n_resolves):
        out.append(ResolveRecord(
            int(counts.resolve_ids[j]), j + 1, int(counts.creators[j]), int(counts.resolve_votes[j]),
            float(r[j]) if r is not None else float("nan"),
        ))
    return out
