"""Seed-averaged tracking RMSE per late-message strategy at the configured loss rate.

    python3 scripts/compare_strategies.py [--seeds 5]
"""

import argparse
import json
from pathlib import Path

from cyberder import harness
from cyberder.scenario import load_config

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "default.json")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--json", help="also write the result here")
    args = ap.parse_args()
    cfg = load_config(args.config)
    res = harness.compare_strategies(cfg, seeds=range(1, args.seeds + 1))
    ideal = res["ideal"]
    print(f"{'strategy':>10} {'rmse_kw':>18} {'minus_ideal_kw':>16}")
    print(f"{'ideal':>10} {ideal:>18.10f} {0.0:>16.3e}")
    for name in ("previous", "skip", "lstm"):
        print(f"{name:>10} {res[name]:>18.10f} {res[name] - ideal:>16.3e}")
    if args.json:
        Path(args.json).write_text(json.dumps(res, indent=1))


if __name__ == "__main__":
    main()
