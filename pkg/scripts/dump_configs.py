"""Write the default configuration of every experiment to configs/<name>.yaml."""

import argparse
from pathlib import Path

import yaml

from brwpolymer.experiments.config import DEFAULTS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "configs"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, cfg in DEFAULTS.items():
        path = out / f"{name.replace('-', '_')}.yaml"
        path.write_text(yaml.safe_dump(cfg, sort_keys=True))
        print(path)


if __name__ == "__main__":
    main()
