"""Run every experiment with its default (or overridden) seed and summarise pass flags."""

import argparse
import sys

from brwpolymer.experiments import RUNNERS, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default="results")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", nargs="*", default=list(RUNNERS))
    args = ap.parse_args()
    failed = []
    for name in args.only:
        rep = RUNNERS[name](load_config(name, seed=args.seed), threads=args.threads)
        rep.write(args.out)
        status = "pass" if rep.all_pass else "FAIL " + ", ".join(rep.failures)
        print(f"{name:12s} {rep.wall_clock:7.1f}s  {status}", flush=True)
        if not rep.all_pass:
            failed.append(name)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
