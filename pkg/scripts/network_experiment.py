"""Network summaries of a full-scale simulation: degree fits, transitivity
against degree-preserving rewiring, vote-count exponent and no-links share.

    python3 scripts/network_experiment.py --config scripts/full_scale.json --rewirings 5
"""
import argparse
import json

import numpy as np

from community_dyn.core import EventKind, NetworkKind, user_activity_table
from community_dyn.fitting import fit_zipf
from community_dyn.network import LinkSet, degree_distributions, global_clustering, no_links_probability, transitivity
from community_dyn.simulator import SimConfig, simulate


def rewired_clustering(pairs, n, rng):
    """Mean clustering over degree-preserving double-edge-swap rewirings."""
    import networkx as nx

    vals = []
    for _ in range(n):
        G = nx.Graph(pairs.tolist())
        nx.double_edge_swap(G, nswap=10 * G.number_of_edges(), max_tries=10 ** 8, seed=int(rng.integers(2 ** 31)))
        vals.append(global_clustering(np.array(G.edges())))
    return float(np.mean(vals))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="scripts/full_scale.json")
    ap.add_argument("--rewirings", type=int, default=5)
    ap.add_argument("--out", default="network.json")
    args = ap.parse_args()
    sim = simulate(SimConfig.from_json(args.config))
    links = LinkSet(sim.networks)
    rng = np.random.default_rng(0)
    out = {"networks": {}}
    for kind, ds in degree_distributions(links).items():
        entry = {"links": links.n_links(kind), "fit": None if ds.fit is None else ds.fit.to_json()}
        if kind != NetworkKind.FRIENDS and args.rewirings:
            obs = transitivity(links, kind)
            base = rewired_clustering(links[kind], args.rewirings, rng)
            entry.update(transitivity=obs, rewired=base, ratio=obs / base)
        out["networks"][kind.label] = entry
    votes = user_activity_table(sim.log)["votes"]
    out["votes_per_user_nu"] = {xmin: fit_zipf(votes[votes > 0], xmin=xmin).params["nu"] for xmin in (1, 5, 10, 30)}
    log = sim.log
    ideological = (log.kind == EventKind.LINK) & (log.network != NetworkKind.FRIENDS)
    U = sim.planted_rho.size
    own = np.bincount(log.actor[ideological], minlength=U)
    complete = sim.departure <= sim.config.duration_days
    c = sim.config
    out["no_links"] = {"integral": no_links_probability(c.lam, c.tau, c.rho_mu, c.rho_sigma),
                       "complete_lifetimes_share": float(np.mean(own[complete] == 0))}
    print(json.dumps(out, indent=1, default=float))
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=1, default=float)


if __name__ == "__main__":
    main()
