"""Network observables computed from an event log plus its link sets."""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np
from scipy import integrate, sparse

from .core import IDEOLOGICAL, EventKind, EventLog, NetworkKind
from .errors import EmptyNetwork, InsufficientData, NoTriples, ParseError, ValidationError
from .fitting import DistributionFit, fit_truncated_power_law

LINKS_HEADER = ("network", "user_a", "user_b")


class LinkType(enum.Enum):
    ONLY_FRIENDS = "only_friends"
    NON_FRIENDS = "non_friends"
    FRIENDS_AND_IDEOLOGICAL = "friends_and_ideological"
    UNLINKED = "unlinked"


LINK_TYPES = (LinkType.ONLY_FRIENDS, LinkType.NON_FRIENDS, LinkType.FRIENDS_AND_IDEOLOGICAL)


def _canonical(pairs) -> np.ndarray:
    p = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return np.sort(p, axis=1)


@dataclass(frozen=True)
class LinkSet:
    """Undirected pairs per network, stored as sorted (min, max) rows."""

    networks: dict  # NetworkKind -> (m, 2) int64

    def __post_init__(self):
        nets = {}
        for kind in NetworkKind:
            p = _canonical(self.networks.get(kind, np.empty((0, 2))))
            if np.any(p[:, 0] == p[:, 1]):
                raise ValidationError(f"self-link in {kind.label} network")
            if np.any(p < 0):
                raise ValidationError(f"negative user id in {kind.label} network")
            if len(np.unique(p, axis=0)) != len(p):
                raise ValidationError(f"duplicate pair in {kind.label} network")
            p.setflags(write=False)
            nets[kind] = p
        object.__setattr__(self, "networks", nets)

    def __getitem__(self, kind: NetworkKind) -> np.ndarray:
        return self.networks[NetworkKind(kind)]

    def n_links(self, kind: NetworkKind) -> int:
        return len(self[kind])

    def users(self) -> np.ndarray:
        """Users with at least one link in any network."""
        return np.unique(np.concatenate([p.ravel() for p in self.networks.values()]))

    def pair_set(self, kind: NetworkKind) -> set:
        return set(map(tuple, self[kind].tolist()))

    @classmethod
    def from_log(cls, log: EventLog) -> "LinkSet":
        return cls({k: log.links(k) for k in NetworkKind})

    @classmethod
    def from_pairs(cls, **by_label) -> "LinkSet":
        return cls({NetworkKind.parse(k): v for k, v in by_label.items()})


def read_links(source) -> LinkSet:
    """Parse a links CSV with header network,user_a,user_b."""
    if isinstance(source, (bytes, bytearray)):
        fh = io.StringIO(source.decode())
    elif isinstance(source, str) and "\n" in source:
        fh = io.StringIO(source)
    else:
        fh = open(source, newline="")
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LINKS_HEADER:
            raise ParseError(1, f"expected header {','.join(LINKS_HEADER)}")
        rows = {k: [] for k in NetworkKind}
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(line, f"expected 3 fields, got {len(row)}")
            try:
                kind = NetworkKind.parse(row[0])
                a, b = int(row[1]), int(row[2])
            except ValueError as exc:
                raise ParseError(line, str(exc)) from None
            rows[kind].append((a, b))
    return LinkSet({k: np.array(v, dtype=np.int64).reshape(-1, 2) for k, v in rows.items()})


def write_links(links: LinkSet, dest) -> None:
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LINKS_HEADER)
        for kind in NetworkKind:
            for a, b in links[kind].tolist():
                w.writerow((kind.label, a, b))


# --------------------------------------------------------------- degrees

def degrees(links: LinkSet, kind: NetworkKind) -> np.ndarray:
    """Degree of every user that has at least one link in this network."""
    p = links[kind]
    if len(p) == 0:
        raise EmptyNetwork(f"{NetworkKind(kind).label} network has no links")
    _, counts = np.unique(p.ravel(), return_counts=True)
    return counts


@dataclass(frozen=True)
class DegreeSummary:
    network: NetworkKind
    degree: np.ndarray  # distinct degrees
    count: np.ndarray  # users with that degree
    fit: DistributionFit | None  # None when too few users or a single degree value


def degree_distributions(links: LinkSet, networks=tuple(NetworkKind)) -> dict:
    out = {}
    for kind in networks:
        d = degrees(links, kind)
        deg, cnt = np.unique(d, return_counts=True)
        try:
            fit = fit_truncated_power_law(d)
        except InsufficientData:
            fit = None
        out[NetworkKind(kind)] = DegreeSummary(NetworkKind(kind), deg, cnt, fit)
    return out


# ----------------------------------------------------------- common votes

def vote_matrix(log: EventLog) -> sparse.csr_matrix:
    """Binary user x resolve matrix; resolve creation counts as a vote."""
    m = log.kind != EventKind.LINK
    users, resolves = log.actor[m], log.resolve[m]
    n_u = int(log.actor.max()) + 1 if len(log) else 0
    if log.kind.size and np.any(log.kind == EventKind.LINK):
        n_u = max(n_u, int(log.target[log.kind == EventKind.LINK].max()) + 1)
    n_r = int(resolves.max()) + 1 if resolves.size else 0
    M = sparse.csr_matrix((np.ones(users.size, dtype=np.int32), (users, resolves)), shape=(n_u, n_r))
    M.data[:] = 1
    return M


def common_votes(M: sparse.csr_matrix, a, b) -> np.ndarray:
    """Number of resolves both users voted on, for each pair (a[k], b[k])."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    n = M.shape[0]
    out = np.zeros(a.size, dtype=np.int64)
    ok = (a < n) & (b < n)
    if np.any(ok):
        prod = M[a[ok]].multiply(M[b[ok]])
        out[ok] = np.asarray(prod.sum(axis=1)).ravel()
    return out


@dataclass(frozen=True)
class PairStats:
    pair: tuple
    common_votes: int
    link_type: LinkType


def pair_link_type(links: LinkSet, a: int, b: int) -> LinkType:
    key = (min(a, b), max(a, b))
    fr = key in links.pair_set(NetworkKind.FRIENDS)
    ideo = any(key in links.pair_set(k) for k in IDEOLOGICAL)
    if fr and ideo:
        return LinkType.FRIENDS_AND_IDEOLOGICAL
    if fr:
        return LinkType.ONLY_FRIENDS
    if ideo:
        return LinkType.NON_FRIENDS
    return LinkType.UNLINKED


def pair_stats(log: EventLog, links: LinkSet, a: int, b: int) -> PairStats:
    M = vote_matrix(log)
    return PairStats((a, b), int(common_votes(M, [a], [b])[0]), pair_link_type(links, a, b))


def survival_curve(values) -> tuple[np.ndarray, np.ndarray]:
    """(c, fraction of values > c) for c = 0 .. max(values)."""
    v = np.asarray(values, dtype=np.int64)
    c = np.arange(int(v.max()) + 1 if v.size else 1)
    counts = np.bincount(v, minlength=c.size)
    greater = v.size - np.cumsum(counts)
    return c, greater / max(v.size, 1)


def random_pairs(users, n_pairs: int, rng: np.random.Generator) -> np.ndarray:
    users = np.asarray(users)
    if users.size < 2:
        raise InsufficientData("need at least two users to sample random pairs")
    a = rng.integers(users.size, size=n_pairs)
    b = rng.integers(users.size - 1, size=n_pairs)
    b = b + (b >= a)
    return np.column_stack([users[a], users[b]])


def common_votes_distribution(log: EventLog, links: LinkSet, n_random_pairs: int = 100_000,
                              seed: int = 0) -> dict:
    """Survival curves of common votes for each network and for random pairs.

    Returns {label: (c, fraction with more than c common votes)} with labels
    friends, allies, nemeses and random.
    """
    M = vote_matrix(log)
    out = {}
    for kind in NetworkKind:
        p = links[kind]
        if len(p) == 0:
            continue
        out[kind.label] = survival_curve(common_votes(M, p[:, 0], p[:, 1]))
    rp = random_pairs(links.users(), n_random_pairs, np.random.default_rng(seed))
    out["random"] = survival_curve(common_votes(M, rp[:, 0], rp[:, 1]))
    return out


# ------------------------------------------------------------ link types

def user_vote_counts(log: EventLog, n_users: int | None = None) -> np.ndarray:
    m = log.kind != EventKind.LINK
    n = n_users if n_users is not None else (int(log.actor.max()) + 1 if len(log) else 0)
    return np.bincount(log.actor[m], minlength=n)


def user_link_type_fractions(links: LinkSet) -> tuple[np.ndarray, np.ndarray]:
    """Per linked user, the fraction of its partners of each link type.

    Returns (users, fractions) with fractions of shape (n, 3) ordered as
    LINK_TYPES.
    """
    def directed(pairs):
        return np.concatenate([pairs, pairs[:, ::-1]]) if len(pairs) else pairs.reshape(0, 2)

    fr = directed(links[NetworkKind.FRIENDS])
    ideo = directed(np.concatenate([links[k] for k in IDEOLOGICAL]))
    # a pair in both allies and nemeses still counts as one ideological partner
    ideo = np.unique(ideo, axis=0) if len(ideo) else ideo
    edges = np.concatenate([fr, ideo])
    flags = np.concatenate([np.full(len(fr), 1), np.full(len(ideo), 2)])
    if len(edges) == 0:
        raise EmptyNetwork("no links in any network")
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges, flags = edges[order], flags[order]
    new_pair = np.ones(len(edges), dtype=bool)
    new_pair[1:] = np.any(edges[1:] != edges[:-1], axis=1)
    pid = np.cumsum(new_pair) - 1
    pair_flag = np.zeros(pid[-1] + 1, dtype=np.int64)
    np.bitwise_or.at(pair_flag, pid, flags)
    owner = edges[new_pair, 0]
    users, inverse = np.unique(owner, return_inverse=True)
    frac = np.zeros((users.size, 3))
    for col, flag in enumerate((1, 2, 3)):
        frac[:, col] = np.bincount(inverse, weights=(pair_flag == flag), minlength=users.size)
    frac /= frac.sum(axis=1, keepdims=True)
    return users, frac


@dataclass(frozen=True)
class LinkTypeBucket:
    quantile: int
    n_users: int
    mean_votes: float
    mean: np.ndarray  # (3,) ordered as LINK_TYPES
    sem: np.ndarray


def link_type_fractions(log: EventLog, links: LinkSet, n_quantiles: int = 10) -> list[LinkTypeBucket]:
    """Linked users bucketed by vote count (ties by user id); per bucket the
    mean fraction of each link type and its standard error."""
    users, frac = user_link_type_fractions(links)
    votes = user_vote_counts(log, n_users=int(users.max()) + 1)[users]
    order = np.lexsort((users, votes))
    buckets = []
    for q, idx in enumerate(np.array_split(order, min(n_quantiles, users.size))):
        f = frac[idx]
        sem = f.std(axis=0, ddof=1) / np.sqrt(len(idx)) if len(idx) > 1 else np.zeros(3)
        buckets.append(LinkTypeBucket(q, len(idx), float(votes[idx].mean()), f.mean(axis=0), sem))
    return buckets


# ---------------------------------------------------------- transitivity

def adjacency(pairs: np.ndarray, n: int | None = None) -> sparse.csr_matrix:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n = n if n is not None else (int(pairs.max()) + 1 if len(pairs) else 0)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    return sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))


def global_clustering(pairs) -> float:
    """3 x triangles / connected triples of an undirected simple graph."""
    A = adjacency(pairs)
    d = np.asarray(A.sum(axis=1)).ravel()
    triples = float(np.sum(d * (d - 1)))
    if triples == 0:
        raise NoTriples("graph has no connected triples")
    closed = float((A @ A).multiply(A).sum())  # = 6 x triangles
    return closed / triples


def transitivity(links: LinkSet, network: NetworkKind) -> float:
    return global_clustering(links[network])


# ---------------------------------------------------- no-links prediction

def no_links_probability(lam: float, tau: float, rho_mu: float, rho_sigma: float) -> float:
    """E[exp(-lam rho t)] over rho ~ Lognormal(rho_mu, rho_sigma), t ~ Exp(tau).

    The t average is 1 / (1 + lam rho tau); the rho average is a 1-D integral
    over the standard normal.
    """
    if lam < 0 or tau < 0 or rho_sigma < 0:
        raise ValueError("lam, tau and rho_sigma must be non-negative")
    if lam == 0 or tau == 0:
        return 1.0
    c = lam * tau
    if rho_sigma == 0:
        return 1.0 / (1.0 + c * np.exp(rho_mu))

    def integrand(z):
        with np.errstate(over="ignore"):  # the tail term tends to zero
            return np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * (1.0 + c * np.exp(rho_mu + rho_sigma * z)))

    val, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-10, epsrel=1e-10, limit=200)
    return float(val)
