"""Batch maximum-likelihood estimation of interestingness and aging.

The votes resolve j receives in interval I_i are modelled as independent
Poisson counts with mean v_i r_j f(i - j + 1). The marginals v, V^R and V^A
are sufficient statistics, so the estimator never touches the cross table.
It alternates the two exact block maximizers

    r_j  = V^R_j / sum_a f(a) v_{a+j-1}
    f(a) = V^A_a / sum_j r_j v_{a+j-1}

and rescales to f(1) = 1 after each sweep.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, stats

from .core import AgingFunction, IntervalCounts
from .errors import DegenerateCounts, EmptyBucket, RangeError

_DIRECT_MAX = 2048


@dataclass(frozen=True)
class FixedPointConfig:
    tolerance: float = 1e-8
    max_iterations: int = 10_000
    init: str = "data"  # r proportional to V^R, f flat
    init_scale: float = 1.0  # starting f level; r starts at the inverse scale

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.init != "data":
            raise ValueError(f"unknown init rule {self.init!r}")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")


@dataclass(eq=False)
class EstimationResult:
    r: np.ndarray
    f: AgingFunction
    log_likelihood: float
    iterations: int
    converged: bool
    ci: np.ndarray  # (R, 2)
    trace: list = field(default_factory=list)  # log-likelihood after every sweep

    def to_json(self) -> dict:
        return {
            "r": self.r.tolist(),
            "f": self.f.values.tolist(),
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
            "ci": self.ci.tolist(),
        }


def lagged_sums(v, w) -> np.ndarray:
    """out[k] = sum_{m >= 0} w[m] v[k + m] (0-based), the common form of both
    denominators: D_j with w = f, and E_a with w = r."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    n = v.size
    if n <= _DIRECT_MAX:
        return np.convolve(v, w[::-1])[n - 1:]
    out = signal.fftconvolve(v, w[::-1])[n - 1:]
    return np.maximum(out, 0.0)


def log_likelihood(counts: IntervalCounts, r, f) -> float:
    """Poisson log-likelihood with the log-factorial constants dropped."""
    v = counts.interval_votes.astype(float)
    vr, va = counts.resolve_votes, counts.age_votes
    r = np.asarray(r, float)
    f = np.asarray(f, float)
    D = lagged_sums(v, f)
    return _loglik(v, vr, va, r, f, D)


def _xlogy(x, y):
    m = x > 0
    return float(np.sum(x[m] * np.log(y[m])))


def _loglik(v, vr, va, r, f, D):
    return _xlogy(v, v) + _xlogy(vr, r) + _xlogy(va, f) - float(r @ D)


def poisson_interval(k, level=0.95):
    """Exact (Garwood) interval for a Poisson mean given count(s) k."""
    k = np.asarray(k, dtype=float)
    a = 1.0 - level
    lo = np.where(k > 0, stats.chi2.ppf(a / 2, 2 * k) / 2, 0.0)
    hi = stats.chi2.ppf(1 - a / 2, 2 * k + 2) / 2
    return lo, hi


def conditional_ci(vr, D, level=0.95) -> np.ndarray:
    """Interval for r_j = V^R_j / D_j treating the denominator as fixed."""
    lo, hi = poisson_interval(vr, level)
    D = np.asarray(D, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ci = np.column_stack([np.where(D > 0, lo / D, 0.0), np.where(D > 0, hi / D, np.inf)])
    return ci


def _ratio(num, den):
    out = np.zeros_like(den)
    m = num > 0
    out[m] = num[m] / den[m]
    return out


def estimate(counts: IntervalCounts, cfg: FixedPointConfig | None = None) -> EstimationResult:
    cfg = cfg or FixedPointConfig()
    v = counts.interval_votes.astype(float)
    vr = counts.resolve_votes.astype(float)
    va = counts.age_votes.astype(float)
    R = v.size
    if R < 2:
        raise DegenerateCounts("need at least two resolves")
    if not np.any(v > 0):
        raise DegenerateCounts("no votes in any interval")
    if va[0] <= 0:
        raise DegenerateCounts("no votes at age 1, f(1) = 1 cannot be imposed")

    f = np.full(R, cfg.init_scale)
    r = vr / v.sum() / cfg.init_scale
    D = lagged_sums(v, f)
    trace = [_loglik(v, vr, va, r, f, D)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        r_new = _ratio(vr, D)
        E = lagged_sums(v, r_new)
        f_new = _ratio(va, E)
        c = f_new[0]
        f_new /= c
        r_new *= c
        D = lagged_sums(v, f_new)
        trace.append(_loglik(v, vr, va, r_new, f_new, D))
        change = max(
            float(np.max(np.abs(r_new - r) / (r + 1e-12))),
            float(np.max(np.abs(f_new - f) / (f + 1e-12))),
        )
        r, f = r_new, f_new
        if change < cfg.tolerance:
            converged = True
            break
    if not converged:
        warnings.warn(f"fixed point not converged after {it} sweeps", RuntimeWarning, stacklevel=2)
    return EstimationResult(
        r=r, f=AgingFunction(f), log_likelihood=trace[-1], iterations=it, converged=converged,
        ci=conditional_ci(vr, D), trace=trace,
    )


def stationarity_residuals(counts: IntervalCounts, r, f):
    """Relative residuals of r_j D_j = V^R_j and f(a) E_a = V^A_a."""
    v = counts.interval_votes.astype(float)
    vr = counts.resolve_votes.astype(float)
    va = counts.age_votes.astype(float)
    D = lagged_sums(v, f)
    E = lagged_sums(v, r)
    res_r = np.abs(np.asarray(r) * D - vr) / np.maximum(vr, 1.0)
    res_f = np.abs(np.asarray(f) * E - va) / np.maximum(va, 1.0)
    return res_r, res_f


def expected_votes(j: int, A: int, r, f, v) -> float:
    """mu_j(A) = r_j sum_{a=1}^{A} f(a) v_{j+a-1}, with 1-based j and A."""
    R = len(v)
    if not 1 <= j <= R:
        raise RangeError(f"resolve {j} outside 1..{R}")
    if not 1 <= A <= R - j + 1:
        raise RangeError(f"age {A} outside 1..{R - j + 1} for resolve {j}")
    fv = f.values if isinstance(f, AgingFunction) else np.asarray(f, float)
    seg = np.asarray(v, float)[j - 1: j - 1 + A]
    return float(r[j - 1] * np.dot(fv[:A], seg))


def next_vote_distribution(ages, r, f) -> np.ndarray:
    """Probability that the next vote goes to each resolve, given their ages.

    Falls back to uniform if every resolve has zero weight.
    """
    ages = np.asarray(ages, dtype=np.int64)
    fv = f.values if isinstance(f, AgingFunction) else np.asarray(f, float)
    fa = np.zeros(ages.size)
    inside = ages <= fv.size
    fa[inside] = fv[ages[inside] - 1]
    w = np.asarray(r, float) * fa
    tot = w.sum()
    if tot <= 0:
        return np.full(ages.size, 1.0 / ages.size)
    return w / tot


@dataclass(frozen=True)
class PersistenceRow:
    threshold: int
    ratio: float
    stderr: float
    n_eligible: int
    n_receiving: int
    p_value: float


def persistence_ratio(r, counts: IntervalCounts, thresholds, n_permutations: int = 1000, seed: int = 0):
    """Mean r of resolves still receiving votes at or after each age, relative
    to the mean r of all resolves that reached that age.

    The p-value is a one-sided randomization test: the receiving set is
    compared with random subsets of the same size drawn from the eligible set.
    """
    r = np.asarray(r, float)
    R = counts.n_resolves
    final_age = R - np.arange(R)
    last_age = counts.last_vote_age()
    rng = np.random.default_rng(seed)
    rows = []
    for A in thresholds:
        elig = final_age >= A
        recv = last_age >= A
        n_e, n_r = int(elig.sum()), int(recv.sum())
        if n_e == 0 or n_r == 0:
            raise EmptyBucket(f"no qualifying resolves at age threshold {A}")
        r_e, r_r = r[elig], r[recv]
        m_e, m_r = r_e.mean(), r_r.mean()
        ratio = m_r / m_e if m_e > 0 else float("nan")
        se = ratio * np.sqrt(
            (r_r.var(ddof=1) / n_r if n_r > 1 else 0.0) / m_r ** 2
            + (r_e.var(ddof=1) / n_e if n_e > 1 else 0.0) / m_e ** 2
        ) if m_r > 0 else float("nan")
        hits = 0
        for _ in range(n_permutations):
            idx = rng.choice(n_e, size=n_r, replace=False)
            if r_e[idx].mean() >= m_r:
                hits += 1
        rows.append(PersistenceRow(int(A), float(ratio), float(se), n_e, n_r, (1 + hits) / (1 + n_permutations)))
    return rows
