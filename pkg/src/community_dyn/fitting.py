"""Maximum-likelihood fits for the long-tailed families seen in the data.

Families and parameterizations
------------------------------
zipf         P(v) ~ v^-(nu + 1) on integers [xmin, xmax]
lognormal    ln x ~ Normal(mu, sigma)
exponential  density ~ exp(-t / tau), optionally truncated to [lo, hi]
tpl          P(d) ~ d^-tau exp(-d / kappa) on integers d >= xmin
dpln         double Pareto lognormal (alpha, beta, mu, sigma); ln x is
             normal-Laplace: mu + sigma Z + E1 / alpha - E2 / beta

Every fit returns a :class:`DistributionFit` with Wald 95% intervals from the
observed information, computed on a log scale for scale parameters so the
intervals stay positive.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special, stats

from .errors import DegenerateSample, InsufficientData, NonPositiveSample

Z95 = stats.norm.ppf(0.975)
FAMILIES = ("zipf", "lognormal", "exponential", "tpl", "dpln")


@dataclass(frozen=True)
class DistributionFit:
    family: str
    params: dict
    ci: dict  # name -> (lo, hi)
    log_likelihood: float
    n: int
    fit_range: tuple | None = None
    converged: bool = True
    extra: dict = field(default_factory=dict)

    def covers(self, name: str, value: float) -> bool:
        lo, hi = self.ci[name]
        return lo <= value <= hi

    def density(self, x):
        """pmf for the discrete families, pdf otherwise."""
        p = self.params
        lo, hi = self.fit_range or (None, None)
        if self.family == "zipf":
            return zipf_pmf(x, p["nu"], xmin=lo or 1, xmax=hi)
        if self.family == "tpl":
            return tpl_pmf(x, p["tau"], p["kappa"], xmin=lo or 1)
        if self.family == "lognormal":
            return stats.lognorm.pdf(x, s=p["sigma"], scale=np.exp(p["mu"]))
        if self.family == "exponential":
            return exponential_pdf(x, p["tau"], lo, hi)
        if self.family == "dpln":
            return dpln_pdf(x, p["alpha"], p["beta"], p["mu"], p["sigma"])
        raise ValueError(self.family)

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "params": dict(self.params),
            "ci": {k: list(v) for k, v in self.ci.items()},
            "loglik": self.log_likelihood,
            "n": self.n,
            "fit_range": None if self.fit_range is None else list(self.fit_range),
            "converged": self.converged,
        }


# ----------------------------------------------------------------- helpers

def _as_array(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    return x


def _as_integers(samples, minimum: int, name: str) -> np.ndarray:
    x = _as_array(samples)
    if x.size < minimum:
        raise InsufficientData(f"{name} needs at least {minimum} samples, got {x.size}")
    if np.any(x < 1):
        raise NonPositiveSample(f"{name} requires integer samples >= 1")
    if np.any(x != np.round(x)):
        raise ValueError(f"{name} requires integer samples")
    return x


def numeric_hessian(fun, x, step=1e-4) -> np.ndarray:
    """Central-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    k = x.size
    h = step * np.maximum(1.0, np.abs(x))
    H = np.empty((k, k))
    with np.errstate(invalid="ignore"):
        _fill_hessian(fun, x, h, H)
    return H


def _fill_hessian(fun, x, h, H):
    k = x.size
    f0 = fun(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (fun(x + ei) - 2 * f0 + fun(x - ei)) / h[i] ** 2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)
            ) / (4 * h[i] * h[j])


def _wald(theta, neg_ll, names, log_scale):
    """95% intervals from the inverse observed information of neg_ll at theta.

    Parameters flagged in log_scale are optimized as logs; their intervals
    are exponentiated back.
    """
    H = numeric_hessian(neg_ll, theta)
    try:
        cov = np.linalg.inv(H)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        se = np.full(len(theta), np.inf)
    se = np.where(np.isfinite(se), se, np.inf)
    ci = {}
    for t, s, name, is_log in zip(theta, se, names, log_scale):
        lo, hi = t - Z95 * s, t + Z95 * s
        with np.errstate(over="ignore"):  # a flat tail parameter has an unbounded interval
            ci[name] = (float(np.exp(lo)), float(np.exp(hi))) if is_log else (float(lo), float(hi))
    return ci


def log_binned_histogram(samples, bins_per_decade: int = 10):
    """Counts in logarithmically spaced bins; returns (bin_center, count)."""
    x = _as_array(samples)
    x = x[x > 0]
    if x.size == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    lo, hi = np.log10(x.min()), np.log10(x.max())
    n_bins = max(1, int(np.ceil((hi - lo) * bins_per_decade)))
    edges = np.logspace(lo, hi, n_bins + 1)
    edges[-1] *= 1 + 1e-12
    counts, edges = np.histogram(x, bins=edges)
    centers = np.sqrt(edges[:-1] * edges[1:])
    keep = counts > 0
    return centers[keep], counts[keep]


# -------------------------------------------------------------------- zipf

def _zipf_log_norm(s, xmin, xmax):
    z = special.zeta(s, xmin)
    if xmax is not None:
        z = z - special.zeta(s, xmax + 1)
    return np.log(z)


def zipf_pmf(x, nu, xmin=1, xmax=None):
    s = nu + 1.0
    x = np.asarray(x, dtype=float)
    inside = (x >= xmin) & (True if xmax is None else x <= xmax)
    return np.where(inside, np.exp(-s * np.log(np.maximum(x, 1.0)) - _zipf_log_norm(s, xmin, xmax)), 0.0)


def sample_zipf(nu, n, rng):
    """Discrete power law P(v) ~ v^-(nu+1), v >= 1."""
    return rng.zipf(nu + 1.0, size=n).astype(float)


def fit_zipf(samples, xmin: int | None = None, xmax: int | None = None) -> DistributionFit:
    """Discrete power-law MLE with exact Hurwitz-zeta normalization.

    Samples outside [xmin, xmax] are discarded before fitting.
    """
    x = _as_integers(samples, 10, "fit_zipf")
    lo = int(xmin) if xmin is not None else int(x.min())
    x = x[(x >= lo) & (True if xmax is None else x <= xmax)]
    if x.size < 10:
        raise InsufficientData("fewer than 10 samples inside the fit range")
    if np.all(x == x[0]):
        raise DegenerateSample("all samples are equal")
    n = x.size
    sum_log = float(np.log(x).sum())

    def neg_ll(s):
        return s * sum_log + n * _zipf_log_norm(s, lo, xmax)

    upper = 20.0
    res = optimize.minimize_scalar(neg_ll, bounds=(1.0 + 1e-6 if xmax is None else 1e-6, upper),
                                   method="bounded", options={"xatol": 1e-10})
    s = float(res.x)
    h = 1e-4
    info = (neg_ll(s + h) - 2 * neg_ll(s) + neg_ll(s - h)) / h ** 2
    se = 1.0 / np.sqrt(info) if info > 0 else np.inf
    nu = s - 1.0
    return DistributionFit(
        "zipf", {"nu": nu}, {"nu": (nu - Z95 * se, nu + Z95 * se)}, float(-res.fun), n,
        fit_range=(lo, xmax), converged=bool(res.success),
    )


# --------------------------------------------------------------- lognormal

def fit_lognormal(samples) -> DistributionFit:
    """Closed-form MLE on the logs of the samples."""
    x = _as_array(samples)
    if x.size < 2:
        raise InsufficientData("fit_lognormal needs at least 2 samples")
    if np.any(x <= 0):
        raise NonPositiveSample("lognormal samples must be positive")
    y = np.log(x)
    n = y.size
    mu = float(y.mean())
    sigma = float(np.sqrt(np.mean((y - mu) ** 2)))
    se_mu = sigma / np.sqrt(n)
    se_sigma = sigma / np.sqrt(2 * n)
    if sigma > 0:
        ll = float(-n * (np.log(sigma) + 0.5 * np.log(2 * np.pi) + 0.5) - y.sum())
    else:
        ll = float("inf")
    return DistributionFit(
        "lognormal", {"mu": mu, "sigma": sigma},
        {"mu": (mu - Z95 * se_mu, mu + Z95 * se_mu),
         "sigma": (max(0.0, sigma - Z95 * se_sigma), sigma + Z95 * se_sigma)},
        ll, n,
    )


# ------------------------------------------------------------- exponential

def exponential_pdf(t, tau, lo=None, hi=None):
    t = np.asarray(t, dtype=float)
    lo = 0.0 if lo is None else lo
    mass = np.exp(-lo / tau) - (0.0 if hi is None else np.exp(-hi / tau))
    inside = (t >= lo) & (True if hi is None else t <= hi)
    return np.where(inside, np.exp(-t / tau) / (tau * mass), 0.0)


def fit_exponential(samples, range: tuple | None = None) -> DistributionFit:  # noqa: A002
    """MLE of tau for exp(-t/tau), truncated to range=(lo, hi) if given.

    Without a range the estimate is the sample mean with an exact chi-square
    interval.
    """
    x = _as_array(samples)
    if range is None:
        if x.size < 2:
            raise InsufficientData("fit_exponential needs at least 2 samples")
        if np.any(x < 0):
            raise NonPositiveSample("exponential samples must be non-negative")
        n = x.size
        total = float(x.sum())
        if total <= 0:
            raise DegenerateSample("all samples are zero")
        tau = total / n
        ci = (2 * total / stats.chi2.ppf(0.975, 2 * n), 2 * total / stats.chi2.ppf(0.025, 2 * n))
        return DistributionFit("exponential", {"tau": tau}, {"tau": ci},
                               float(-n * np.log(tau) - n), n)

    lo, hi = float(range[0]), float(range[1])
    if not hi > lo:
        raise InsufficientData(f"empty fit range [{lo}, {hi}]")
    x = x[(x >= lo) & (x <= hi)]
    n = x.size
    if n < 2:
        raise InsufficientData("fewer than 2 samples inside the fit range")
    if np.all(x == x[0]):
        raise DegenerateSample("all samples are equal")
    shifted = float(x.sum()) - n * lo
    width = hi - lo

    def neg_ll(log_tau):
        tau = np.exp(log_tau)
        # log(tau (1 - exp(-width/tau))), the truncated normalizer after shifting by lo
        return shifted / tau + n * (log_tau + np.log(-np.expm1(-width / tau)))

    res = optimize.minimize_scalar(neg_ll, bounds=(np.log(width) - 20, np.log(width) + 20),
                                   method="bounded", options={"xatol": 1e-10})
    theta = np.array([res.x])
    tau = float(np.exp(res.x))
    ci = _wald(theta, lambda t: neg_ll(t[0]), ["tau"], [True])
    ll = float(-res.fun - n * lo / tau)
    return DistributionFit("exponential", {"tau": tau}, ci, ll, n, fit_range=(lo, hi),
                           converged=bool(res.success))


# ------------------------------------------------------ truncated power law

_TPL_DIRECT = 4000


def _tpl_log_norm(tau, kappa, xmin=1):
    d = np.arange(xmin, xmin + _TPL_DIRECT, dtype=float)
    logs = -tau * np.log(d) - d / kappa
    top = logs.max()
    head = np.exp(logs - top).sum()
    start = xmin + _TPL_DIRECT - 0.5
    tail, _ = integrate.quad(lambda u: np.exp(-tau * np.log(u) - u / kappa - top), start, np.inf,
                             limit=200)
    return top + np.log(head + tail)


def tpl_pmf(d, tau, kappa, xmin=1):
    d = np.asarray(d, dtype=float)
    logz = _tpl_log_norm(tau, kappa, xmin)
    with np.errstate(divide="ignore"):
        out = np.exp(-tau * np.log(np.maximum(d, 1.0)) - d / kappa - logz)
    return np.where(d >= xmin, out, 0.0)


def sample_tpl(tau, kappa, n, rng, xmin=1):
    """Exact inverse-CDF sampling on a support cut where the tail mass < 1e-15."""
    top = xmin + int(np.ceil(40 * kappa)) + 10
    d = np.arange(xmin, top + 1, dtype=float)
    p = np.exp(-tau * np.log(d) - d / kappa)
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    return d[np.minimum(np.searchsorted(cdf, rng.random(n)), d.size - 1)]


def fit_truncated_power_law(degrees, xmin: int = 1, n_starts: int = 8, seed: int = 0) -> DistributionFit:
    """Joint MLE of (tau, kappa) for P(d) ~ d^-tau exp(-d/kappa), d >= xmin."""
    x = _as_integers(degrees, 10, "fit_truncated_power_law")
    x = x[x >= xmin]
    if x.size < 10:
        raise InsufficientData("fewer than 10 samples at or above xmin")
    if np.all(x == x[0]):
        raise DegenerateSample("all samples are equal")
    n = x.size
    s_log = float(np.log(x).sum())
    s_lin = float(x.sum())

    def neg_ll(theta):
        tau, log_kappa = theta
        if not -5 < tau < 10 or not -5 < log_kappa < 25:
            return np.inf
        kappa = np.exp(log_kappa)
        return tau * s_log + s_lin / kappa + n * _tpl_log_norm(tau, kappa, xmin)

    rng = np.random.default_rng(seed)
    base = np.array([1.5, np.log(max(float(x.mean()), 2.0)) + 1.0])
    starts = [base] + [base + rng.normal(0, [0.5, 1.0]) for _ in range(n_starts - 1)]
    best = _multistart(neg_ll, starts)
    theta = best.x
    ci = _wald(theta, neg_ll, ["tau", "kappa"], [False, True])
    return DistributionFit(
        "tpl", {"tau": float(theta[0]), "kappa": float(np.exp(theta[1]))}, ci,
        float(-best.fun), n, fit_range=(xmin, None), converged=bool(best.success),
    )


def _multistart(neg_ll, starts):
    """Coarse Nelder-Mead from each start, then a tight run from the best."""
    best = None
    for x0 in starts:
        res = optimize.minimize(neg_ll, x0, method="Nelder-Mead",
                                options={"xatol": 1e-4, "fatol": 1e-4, "maxiter": 2000})
        if best is None or res.fun < best.fun:
            best = res
    res = optimize.minimize(neg_ll, best.x, method="Nelder-Mead",
                            options={"xatol": 1e-8, "fatol": 1e-9, "maxiter": 4000})
    return res if res.fun <= best.fun else best


# -------------------------------------------------------------------- dpln

def _log_mills_term(w):
    """log(exp(w^2 / 2) Phi(-w)), stable for large |w|."""
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    pos = w > 0
    out[pos] = np.log(0.5 * special.erfcx(w[pos] / np.sqrt(2.0)))
    out[~pos] = 0.5 * w[~pos] ** 2 + special.log_ndtr(-w[~pos])
    return out


def dpln_logpdf_log(y, alpha, beta, mu, sigma):
    """Log density of Y = ln X (the normal-Laplace law)."""
    z = (np.asarray(y, dtype=float) - mu) / sigma
    # phi(z) R(w) = exp((w^2 - z^2) / 2) Phi^c(w), with R the Mills ratio
    t1 = _log_mills_term(alpha * sigma - z)
    t2 = _log_mills_term(beta * sigma + z)
    return np.log(alpha * beta / (alpha + beta)) - 0.5 * z ** 2 + np.logaddexp(t1, t2)


def dpln_pdf(x, alpha, beta, mu, sigma):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(dpln_logpdf_log(np.log(x[pos]), alpha, beta, mu, sigma) - np.log(x[pos]))
    return out


def sample_dpln(alpha, beta, mu, sigma, n, rng):
    """Lognormal body times a double-Pareto factor."""
    y = mu + sigma * rng.standard_normal(n) + rng.exponential(size=n) / alpha - rng.exponential(size=n) / beta
    return np.exp(y)


def fit_dpln(samples, n_starts: int = 8, seed: int = 0) -> DistributionFit:
    """MLE of (alpha, beta, mu, sigma) by multistart simplex on log scales.

    The likelihood is that of ln X (the Jacobian term -sum ln x is added to the
    reported value so it is comparable with fit_lognormal).
    """
    x = _as_array(samples)
    if x.size < 100:
        raise InsufficientData(f"fit_dpln needs at least 100 samples, got {x.size}")
    if np.any(x <= 0):
        raise NonPositiveSample("dpln samples must be positive")
    if np.all(x == x[0]):
        raise DegenerateSample("all samples are equal")
    y = np.log(x)
    n = y.size
    m, s = float(y.mean()), float(y.std())

    def neg_ll(theta):
        la, lb, mu, ls = theta
        if max(abs(la), abs(lb), abs(ls)) > 12:
            return np.inf
        val = -dpln_logpdf_log(y, np.exp(la), np.exp(lb), mu, np.exp(ls)).sum()
        return val if np.isfinite(val) else np.inf

    rng = np.random.default_rng(seed)
    base = np.array([np.log(3.0 / s), np.log(3.0 / s), m, np.log(0.7 * s)])
    starts = [base] + [base + rng.normal(0, [0.7, 0.7, 0.3 * s, 0.4]) for _ in range(n_starts - 1)]
    best = _multistart(neg_ll, starts)
    la, lb, mu, ls = best.x
    ci = _wald(best.x, neg_ll, ["alpha", "beta", "mu", "sigma"], [True, True, False, True])
    params = {"alpha": float(np.exp(la)), "beta": float(np.exp(lb)), "mu": float(mu), "sigma": float(np.exp(ls))}
    return DistributionFit("dpln", params, ci, float(-best.fun - y.sum()), n,
                           converged=bool(best.success))


def fit_family(family: str, samples, **kw) -> DistributionFit:
    fitters = {
        "zipf": fit_zipf, "lognormal": fit_lognormal, "exponential": fit_exponential,
        "tpl": fit_truncated_power_law, "dpln": fit_dpln,
    }
    if family not in fitters:
        raise ValueError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")
    return fitters[family](samples, **kw)


PUBLISHED = {
    "zipf": {"nu": 0.45},
    "lognormal": {"mu": 0.03, "sigma": 1.70},
    "exponential": {"tau": 124.0},
    "tpl": {"tau": 1.25, "kappa": 27.0},
    "dpln": {"alpha": 2.4, "beta": 2.5, "mu": 3.67, "sigma": 0.38},
}


def sample_family(family: str, params: dict, n: int, rng) -> np.ndarray:
    if family == "zipf":
        return sample_zipf(params["nu"], n, rng)
    if family == "lognormal":
        return rng.lognormal(params["mu"], params["sigma"], n)
    if family == "exponential":
        return rng.exponential(params["tau"], n)
    if family == "tpl":
        return sample_tpl(params["tau"], params["kappa"], n, rng)
    if family == "dpln":
        return sample_dpln(params["alpha"], params["beta"], params["mu"], params["sigma"], n, rng)
    raise ValueError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")


def interval_coverage(family: str, params: dict | None = None, n: int = 10_000, reps: int = 200,
                      seed: int = 0, **fit_kw) -> dict:
    """Fraction of replications whose 95% interval contains each planted value."""
    params = params or PUBLISHED[family]
    hits = dict.fromkeys(params, 0)
    for child in np.random.SeedSequence(seed).spawn(reps):
        fit = fit_family(family, sample_family(family, params, n, np.random.default_rng(child)), **fit_kw)
        for name, value in params.items():
            hits[name] += fit.covers(name, value)
    return {name: float(h / reps) for name, h in hits.items()}
