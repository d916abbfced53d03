"""Train, evaluate and plot the synthetic-oracle configuration, then print the tables.

    python3 scripts/run_synthetic.py [--output runs/synthetic] [--seed 0]
"""
import argparse
import sys
import time
from pathlib import Path

from chfsurrogate.cli import main

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "synthetic.json"


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(CONFIG))
    ap.add_argument("--output")
    ap.add_argument("--seed", type=int)
    args = ap.parse_args(argv)
    extra = []
    if args.output:
        extra += ["--output", args.output]
    if args.seed is not None:
        extra += ["--seed", str(args.seed)]
    t0 = time.perf_counter()
    for cmd in ("train", "evaluate", "plot"):
        code = main([cmd, "--config", args.config, *extra])
        if code:
            return code
    print(f"total {time.perf_counter() - t0:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(run())
