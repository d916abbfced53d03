"""Full pipeline on the public NRC CHF table (supply the CSV yourself).

    python3 scripts/run_nrc.py --data path/to/nrc_chf.csv [--workers 4] [--output runs/nrc]

The CSV needs the columns D_m, L_m, P_kPa, G_kgm2s, Tin_C, X_out, dHin_kJkg,
CHF_kWm2 (any order, '#' comments allowed). Expect hours on one core: the
default configuration trains a 20-member ensemble of 8x256 networks.
"""
import argparse
import json
import sys
import tempfile
from pathlib import Path

from chfsurrogate.cli import main as chf

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "nrc.json"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", required=True)
    ap.add_argument("--config", default=str(CONFIG))
    ap.add_argument("--output", default="runs/nrc")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int)
    args = ap.parse_args(argv)
    if chf(["ingest", "--data", args.data, "--out", str(Path(tempfile.gettempdir()) / "nrc_summary.json")]):
        return 2
    doc = json.loads(Path(args.config).read_text())
    doc["dataset"] = str(Path(args.data).resolve())
    cfg = Path(tempfile.mkdtemp()) / "nrc.json"
    cfg.write_text(json.dumps(doc))
    extra = ["--output", args.output, "--workers", str(args.workers)]
    if args.seed is not None:
        extra += ["--seed", str(args.seed)]
    for cmd in ("train", "evaluate", "plot"):
        code = chf([cmd, "--config", str(cfg), *extra])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
