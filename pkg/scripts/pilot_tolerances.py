"""Pilot runs behind the default tolerances.

Repeats the trend experiments on seeds disjoint from the default seed, with
more replicates if asked, and prints the statistics the tolerances in
configs/README.md were read from.
"""

import argparse

from brwpolymer.experiments import RUNNERS, load_config

PILOTED = ("theorem-a", "overlap", "meander-fdd", "prop-exp")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1001, 1002, 1003])
    ap.add_argument("--replicates", type=int, default=None)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--only", nargs="*", default=list(PILOTED))
    args = ap.parse_args()
    for name in args.only:
        for seed in args.seeds:
            cfg = load_config(name, seed=seed)
            if args.replicates:
                cfg.sim.replicates = args.replicates
            rep = RUNNERS[name](cfg, threads=args.threads)
            for s in rep.statistics:
                print(f"{name:12s} seed={seed} {s.name:40s} {s.estimate: .5f} +- {s.standard_error:.5f}", flush=True)


if __name__ == "__main__":
    main()
