"""Deflating balloon run; a thin wrapper around ``febe solve``."""
import argparse
import os
import sys

from febe import cli
from febe.config import parse_config

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--full", action="store_true", help="full-size mesh (hours of runtime)")
    p.add_argument("--n-steps", type=int)
    p.add_argument("--output-dir")
    args = p.parse_args()
    name = "balloon.cfg" if args.full else "desk_balloon.cfg"
    cfg = parse_config(os.path.join(HERE, "..", "configs", name))
    if args.n_steps is not None:
        cfg = cfg.replace(n_steps=args.n_steps)
    return cli.run_solve(cfg, cli.output_dir(cfg, args.output_dir))


if __name__ == "__main__":
    sys.exit(main())
