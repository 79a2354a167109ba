"""Online-vs-batch agreement of r as a function of the re-estimation window.

    python3 scripts/online_window.py --days 60 --windows 50 200 500 full --out online.json
"""
import argparse
import json
import time

import numpy as np

from community_dyn.core import compute_interval_counts
from community_dyn.estimation import estimate
from community_dyn.online import OnlineConfig, replay
from community_dyn.simulator import SimConfig, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--days", type=float, default=60)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--windows", nargs="+", default=["50", "200", "500", "full"])
    ap.add_argument("--min-votes", type=int, default=50)
    ap.add_argument("--out", default="online.json")
    args = ap.parse_args()
    sim = simulate(SimConfig(duration_days=args.days, seed=args.seed))
    counts = compute_interval_counts(sim.log)
    batch = estimate(counts).r
    m = counts.resolve_votes >= args.min_votes
    rows = []
    for w in args.windows:
        K = counts.n_resolves if w == "full" else int(w)
        t0 = time.perf_counter()
        state = replay(sim.log, OnlineConfig(window=K))
        diff = np.abs(state.current_r()[m] / batch[m] - 1)
        rows.append({"window": K, "resolves_compared": int(m.sum()), "median_rel_diff": float(np.median(diff)),
                     "max_rel_diff": float(diff.max()), "seconds": time.perf_counter() - t0})
        print(json.dumps(rows[-1]))
    with open(args.out, "w") as fh:
        json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
