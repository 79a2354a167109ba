"""Command-line front end.

Every subcommand writes its outputs plus a ``manifest.json`` into ``--out``;
``--from-manifest`` re-runs a recorded invocation. Data errors exit 1 and
usage or configuration errors exit 2, each with a JSON error body on stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .core import compute_interval_counts, ingest_event_log, user_activity_table, write_event_log
from .errors import CommunityDynError, ConfigError, ParseError
from .estimation import FixedPointConfig, estimate
from .fitting import FAMILIES, fit_family, fit_lognormal, log_binned_histogram
from .network import (
    LinkSet, common_votes_distribution, degree_distributions, link_type_fractions,
    read_links, transitivity, write_links,
)
from .online import OnlineConfig, estimate_new_resolve, replay
from .simulator import SimConfig, simulate

SUBCOMMANDS = ("simulate", "estimate", "fit", "analyze", "online", "recover")
THREADS_ENV = "COMMUNITY_DYN_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="community-dyn", description="Simulate, estimate and analyze voting communities.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, *, events=False, links=False, seed=False, fp=False):
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--from-manifest", dest="from_manifest", help="re-run a recorded invocation")
        if seed:
            sp.add_argument("--seed", type=int)
        if events:
            sp.add_argument("--events", help="event CSV")
        if links:
            sp.add_argument("--links", help="links CSV")
        if fp:
            sp.add_argument("--tol", type=float)
            sp.add_argument("--max-iter", dest="max_iter", type=int)

    common(sub.add_parser("simulate", help="generate events.csv, planted.json, links.csv"), seed=True)
    common(sub.add_parser("estimate", help="fit r and f to an event log"), events=True, fp=True)
    sp = sub.add_parser("fit", help="fit a distribution family to a one-column sample")
    common(sp)
    sp.add_argument("--family", choices=FAMILIES)
    sp.add_argument("--samples", help="one-column numeric CSV")
    sp.add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"),
                    help="truncation range (exponential, zipf)")
    sp.add_argument("--hist", action="store_true", help="also write a log-binned histogram")
    sp = sub.add_parser("analyze", help="network summaries from events and links")
    common(sp, events=True, links=True, seed=True)
    sp.add_argument("--pairs", type=int, default=100_000, help="random pairs for the baseline")
    sp.add_argument("--quantiles", type=int, default=10)
    sp = sub.add_parser("online", help="stream an event log through the online estimator")
    common(sp, events=True, fp=True)
    sp.add_argument("--window", type=int)
    common(sub.add_parser("recover", help="simulate, estimate and compare with the planted values"),
           seed=True, fp=True)
    return p


# ------------------------------------------------------------------ utils

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return d


def _require(args, name):
    val = getattr(args, name, None)
    if val is None:
        raise UsageError(f"--{name.replace('_', '-')} is required for {args.command}")
    return val


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_samples(path) -> np.ndarray:
    """One numeric column; a non-numeric first row is taken as a header."""
    vals = []
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip():
                continue
            try:
                vals.append(float(row[0]))
            except ValueError:
                if line == 1:
                    continue
                raise ParseError(line, f"not a number: {row[0]!r}") from None
    return np.array(vals)


@dataclass(frozen=True)
class FitOptions:
    tolerance: float = FixedPointConfig.tolerance
    max_iterations: int = FixedPointConfig.max_iterations

    def fixed_point(self) -> FixedPointConfig:
        try:
            return FixedPointConfig(tolerance=self.tolerance, max_iterations=self.max_iterations)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class OnlineOptions:
    window: int = OnlineConfig.window
    f_freeze_votes: int = OnlineConfig.f_freeze_votes
    reoptimize: str = OnlineConfig.reoptimize
    tolerance: float = 1e-6
    max_iterations: int = 500

    def online(self) -> OnlineConfig:
        try:
            return OnlineConfig(self.window, self.f_freeze_votes, self.reoptimize,
                                FixedPointConfig(self.tolerance, self.max_iterations))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _options(cls, config_path, overrides):
    d = _load_json(config_path) if config_path else {}
    known = set(cls.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    d.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**d)


def _sim_config(args) -> SimConfig:
    d = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        d["seed"] = args.seed
    if "seed" not in d:
        raise UsageError(f"{args.command} needs a seed (--seed or a 'seed' config key)")
    return SimConfig.from_dict(d)


# ------------------------------------------------------------ subcommands

def cmd_simulate(args, out: Path) -> dict:
    cfg = _sim_config(args)
    sim = simulate(cfg)
    write_event_log(sim.log, out / "events.csv")
    _dump(sim.planted_json(), out / "planted.json")
    write_links(LinkSet(sim.networks), out / "links.csv")
    return {"config": cfg.to_dict(), "seed": cfg.seed}


def _estimation_json(counts, res) -> dict:
    d = res.to_json()
    d["resolve_ids"] = counts.resolve_ids.tolist()
    d["resolve_votes"] = counts.resolve_votes.tolist()
    return d


def cmd_estimate(args, out: Path) -> dict:
    opts = _options(FitOptions, args.config, {"tolerance": args.tol, "max_iterations": args.max_iter})
    log = ingest_event_log(_require(args, "events"))
    counts = compute_interval_counts(log)
    res = estimate(counts, opts.fixed_point())
    _dump(_estimation_json(counts, res), out / "estimates.json")
    return {"config": asdict(opts)}


def cmd_fit(args, out: Path) -> dict:
    family = _require(args, "family")
    d = _load_json(args.config) if args.config else {}
    unknown = set(d) - {"range"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    rng_ = args.range or d.get("range")
    x = read_samples(_require(args, "samples"))
    kw = {}
    if rng_ is not None:
        if family == "exponential":
            kw["range"] = tuple(rng_)
        elif family == "zipf":
            kw["xmin"], kw["xmax"] = int(rng_[0]), int(rng_[1])
        else:
            raise UsageError(f"--range is not supported for {family}")
    fit = fit_family(family, x, **kw)
    _dump(fit.to_json(), out / "fit.json")
    if args.hist:
        c, n = log_binned_histogram(x)
        _write_csv(out / "hist.csv", ("bin_center", "count"), zip(c.tolist(), n.tolist()))
    return {"config": {"family": family, "range": None if rng_ is None else list(rng_), "hist": args.hist}}


def cmd_analyze(args, out: Path) -> dict:
    d = _load_json(args.config) if args.config else {}
    unknown = set(d) - {"pairs", "quantiles", "seed"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    seed = args.seed if args.seed is not None else d.get("seed")
    if seed is None:
        raise UsageError("analyze needs a seed (--seed or a 'seed' config key)")
    pairs = int(d.get("pairs", args.pairs))
    quantiles = int(d.get("quantiles", args.quantiles))
    log = ingest_event_log(_require(args, "events"))
    links = read_links(_require(args, "links"))
    summary = {"networks": {}}
    for kind, ds in degree_distributions(links, [k for k in links.networks if links.n_links(k)]).items():
        _write_csv(out / f"degree_{kind.label}.csv", ("degree", "count"), zip(ds.degree.tolist(), ds.count.tolist()))
        entry = {"links": links.n_links(kind), "users": int(ds.count.sum()),
                 "fit": None if ds.fit is None else ds.fit.to_json()}
        try:
            entry["transitivity"] = transitivity(links, kind)
        except CommunityDynError:
            entry["transitivity"] = None
        summary["networks"][kind.label] = entry
    curves = common_votes_distribution(log, links, n_random_pairs=pairs, seed=seed)
    rows = [(g, int(c), float(s)) for g, (cs, ss) in curves.items() for c, s in zip(cs, ss)]
    _write_csv(out / "common_votes.csv", ("group", "c", "fraction_greater"), rows)
    buckets = link_type_fractions(log, links, quantiles)
    _write_csv(out / "link_types.csv",
               ("quantile", "n_users", "mean_votes", "only_friends", "non_friends",
                "friends_and_ideological", "sem_only_friends", "sem_non_friends",
                "sem_friends_and_ideological"),
               [(b.quantile, b.n_users, b.mean_votes, *b.mean.tolist(), *b.sem.tolist()) for b in buckets])
    _dump(summary, out / "network_summary.json")
    return {"config": {"pairs": pairs, "quantiles": quantiles}, "seed": seed}


def trajectory_ages(max_age: int) -> set:
    """Ages at which online trajectories are recorded: 1..10, then about ten
    per decade."""
    grid = set(range(1, 11))
    grid.update(int(round(x)) for x in np.logspace(1, np.log10(max(max_age, 10)), 10 * 6))
    return grid


def cmd_online(args, out: Path) -> dict:
    opts = _options(OnlineOptions, args.config,
                    {"window": args.window, "tolerance": args.tol, "max_iterations": args.max_iter})
    log = ingest_event_log(_require(args, "events"))
    grid = trajectory_ages(log.n_resolves)
    rows = []

    def record(state, final=False):
        n = state.n_resolves
        lo = state.window_start
        for j in range(lo, n if final else n - 1):
            age = n - j if final else n - 1 - j
            if not final and age not in grid:
                continue
            r, (a, b) = estimate_new_resolve(state, j)
            if np.isfinite(r):
                rows.append((int(state.ids.a[j]), age, r, a, b))

    state = replay(log, opts.online(), on_resolve=record)
    record(state, final=True)
    rows.sort(key=lambda t: (t[0], t[1]))
    _write_csv(out / "trajectories.csv", ("resolve", "age", "r_estimate", "ci_lo", "ci_hi"), rows)
    _dump({"resolve_ids": state.ids.view().tolist(), "r": state.current_r().tolist(),
           "f": state.f_values.tolist(), "f_frozen": state.f_frozen.tolist(),
           "window": opts.window, "converged": state.converged}, out / "online_final.json")
    return {"config": asdict(opts)}


def recovery_report(sim, counts, res, min_votes=50, min_age_votes=100) -> dict:
    """Planted-vs-estimated comparison for a simulated log."""
    m = counts.resolve_votes >= min_votes
    planted = np.asarray(sim.planted_r)[counts.resolve_ids]
    r_corr = float(np.corrcoef(np.log(res.r[m]), np.log(planted[m]))[0, 1]) if m.sum() > 2 else float("nan")
    fa = counts.age_votes >= min_age_votes
    f_true = sim.aging.values[: counts.n_resolves]
    rel = np.abs(res.f.values[fa] / f_true[fa] - 1)
    tab = user_activity_table(sim.log)
    T = tab["last_vote"] - tab["first_vote"]
    active = np.nan_to_num(T) >= 1
    rate = tab["events"][active] / T[active]
    rho_true = sim.planted_rho[tab["user"][active]]
    rfit = fit_lognormal(res.r[res.r > 0])
    return {
        "n_events": len(sim.log),
        "n_votes": sim.log.n_votes,
        "n_resolves": counts.n_resolves,
        "n_users": int(tab["user"].size),
        "estimator": {"iterations": res.iterations, "converged": res.converged,
                      "log_likelihood": res.log_likelihood},
        "r": {"min_votes": min_votes, "n_compared": int(m.sum()), "corr_log": r_corr,
              "fit_lognormal": rfit.to_json()},
        "f": {"min_age_votes": min_age_votes, "n_ages": int(fa.sum()),
              "max_rel_error": float(rel.max()) if rel.size else float("nan"),
              "l2_rel_error": float(np.linalg.norm(res.f.values[fa] - f_true[fa]) / np.linalg.norm(f_true[fa]))
              if rel.size else float("nan")},
        "rho": {"n_active": int(active.sum()),
                "corr_log": float(np.corrcoef(np.log(rate), np.log(rho_true))[0, 1]) if active.sum() > 2 else float("nan")},
    }


def cmd_recover(args, out: Path) -> dict:
    cfg = _sim_config(args)
    opts = FitOptions(**{k: v for k, v in {"tolerance": args.tol, "max_iterations": args.max_iter}.items()
                         if v is not None})
    sim = simulate(cfg)
    counts = compute_interval_counts(sim.log)
    res = estimate(counts, opts.fixed_point())
    _dump(recovery_report(sim, counts, res), out / "report.json")
    _dump(_estimation_json(counts, res), out / "estimates.json")
    return {"config": {"simulation": cfg.to_dict(), "fixed_point": asdict(opts)}, "seed": cfg.seed}


HANDLERS = {
    "simulate": cmd_simulate, "estimate": cmd_estimate, "fit": cmd_fit,
    "analyze": cmd_analyze, "online": cmd_online, "recover": cmd_recover,
}
INPUT_FLAGS = ("config", "events", "links", "samples")


# ------------------------------------------------------------------- main

def _manifest_argv(path, out_override):
    m = _load_json(path)
    for key, digest in m.get("inputs", {}).items():
        if not Path(key).exists() or sha256(key) != digest:
            raise ConfigError(f"manifest input {key} is missing or has changed")
    argv = list(m["argv"])
    if out_override is not None:
        argv += ["--out", out_override]
    return argv


def _portable_argv(argv):
    """argv without --out, with input paths made absolute."""
    out, skip = [], False
    for k, a in enumerate(argv):
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        prev = argv[k - 1] if k else ""
        if prev in tuple(f"--{f}" for f in INPUT_FLAGS):
            a = str(Path(a).resolve())
        out.append(a)
    return out


def _thread_limit():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return nullcontext()
    try:
        k = int(n)
        if k < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=k)


def _error(kind, exc, code):
    body = {"error": kind, "message": str(exc), "exit_code": code}
    if getattr(exc, "line", None) is not None:
        body["line"] = exc.line
    print(json.dumps(body), file=sys.stderr)
    return code


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"choose a subcommand: {', '.join(SUBCOMMANDS)}")
        if args.from_manifest:
            out_override = args.out if "--out" in argv else None
            argv = _manifest_argv(args.from_manifest, out_override)
            args = build_parser().parse_args(argv)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with _thread_limit():
            info = HANDLERS[args.command](args, out)
        recorded = _portable_argv(argv)
        inputs = {}
        for flag in INPUT_FLAGS:
            p = getattr(args, flag, None)
            if p:
                inputs[str(Path(p).resolve())] = sha256(p)
        manifest = {
            "subcommand": args.command,
            "argv": recorded,
            "config": info.get("config"),
            "seed": info.get("seed"),
            "inputs": inputs,
            "version": __version__,
        }
        _dump(manifest, out / "manifest.json")
        return 0
    except UsageError as exc:
        return _error("UsageError", exc, 2)
    except ConfigError as exc:
        return _error("ConfigError", exc, 2)
    except CommunityDynError as exc:
        return _error(type(exc).__name__, exc, 1)
    except (OSError, ValueError) as exc:
        return _error(type(exc).__name__, exc, 1)


def main():
    sys.exit(run())
