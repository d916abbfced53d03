"""Inside- vs outside-hull error of the UQ means across shuffle/training seeds.

The gap is reported, not asserted: on smooth synthetic data it need not favour
the inside subset for every seed.

    python3 scripts/hull_seed_experiment.py --seeds 0 1 2 3 4 [--out hull_seeds.json]
"""
import argparse
import json
import tempfile
from pathlib import Path

import numpy as np

from chfsurrogate.pipeline import load_config, run_evaluate, run_train

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "synthetic.json"


def one_seed(config: str, seed: int, workdir: Path) -> dict:
    cfg = load_config(config, seed_override=seed, output_override=str(workdir / f"seed_{seed}"))
    run_train(cfg)
    m = json.loads(run_evaluate(cfg).read_text())
    row = {"seed": seed, **m["hull_counts"]}
    for model in ("DNN", "CVAE"):
        for side in ("inside", "outside"):
            rep = m["table3"][model][side]["report"]
            row[f"{model}_{side}"] = None if rep is None else rep["mean_abs_rel_error"]
    return row


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(CONFIG))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", help="write the per-seed rows as JSON")
    args = ap.parse_args(argv)
    with tempfile.TemporaryDirectory() as tmp:
        rows = [one_seed(args.config, s, Path(tmp)) for s in args.seeds]
    print(f"{'seed':>4} {'in':>5} {'out':>5} {'DNN in':>8} {'DNN out':>8} {'CVAE in':>8} {'CVAE out':>8}")
    for r in rows:
        print(f"{r['seed']:>4} {r['inside']:>5} {r['outside']:>5} {r['DNN_inside']:>8.4g} {r['DNN_outside']:>8.4g} "
              f"{r['CVAE_inside']:>8.4g} {r['CVAE_outside']:>8.4g}")
    for model in ("DNN", "CVAE"):
        wins = sum(r[f"{model}_inside"] <= r[f"{model}_outside"] for r in rows)
        gap = np.mean([r[f"{model}_outside"] - r[f"{model}_inside"] for r in rows])
        print(f"{model}: inside <= outside in {wins}/{len(rows)} seeds; mean gap {gap:.4g} points")
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
