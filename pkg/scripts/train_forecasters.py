"""Regenerate the per-node forecasters shipped in models/ (about 2 minutes).

    python3 scripts/train_forecasters.py [--out models]
"""

import argparse
from pathlib import Path

from cyberder import harness
from cyberder.scenario import load_config

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "default.json")
    ap.add_argument("--out", default=ROOT / "models")
    args = ap.parse_args()
    _, report = harness.train_forecasters(load_config(args.config), output_dir=args.out)
    worst = max(v["holdout_rmse_pu"] for v in report.values() if "holdout_rmse_pu" in v)
    print(f"{len(report)} nodes trained; worst held-out RMSE {worst:.2e} p.u.")


if __name__ == "__main__":
    main()
