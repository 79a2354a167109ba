"""Coverage of the 95% intervals for every fitted family at its published parameters.

    python3 scripts/calibration.py --reps 200 --n 10000 --out calibration.json
"""
import argparse
import json
import time

from community_dyn.fitting import FAMILIES, PUBLISHED, interval_coverage


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=4)
    ap.add_argument("--starts", type=int, default=1, help="optimizer starts for tpl and dpln")
    ap.add_argument("--out", default="calibration.json")
    args = ap.parse_args()
    out = {}
    for family in FAMILIES:
        kw = {"n_starts": args.starts} if family in ("tpl", "dpln") else {}
        t0 = time.perf_counter()
        cover = interval_coverage(family, PUBLISHED[family], n=args.n, reps=args.reps, seed=args.seed, **kw)
        out[family] = {"planted": PUBLISHED[family], "coverage": cover, "seconds": time.perf_counter() - t0}
        print(family, json.dumps(out[family]))
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=1)


if __name__ == "__main__":
    main()
