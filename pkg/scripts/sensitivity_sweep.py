"""Tracking error against loss rate, uplink vs downlink, for chosen strategies.

    python3 scripts/sensitivity_sweep.py --rates 0.01,0.05,0.1 --strategies previous,skip
"""

import argparse
from pathlib import Path

from cyberder import harness
from cyberder.scenario import load_config

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "default.json")
    ap.add_argument("--rates", default="0.01,0.05,0.1")
    ap.add_argument("--strategies", default="previous")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", default=ROOT / "out" / "sweep")
    args = ap.parse_args()
    cfg = load_config(args.config)
    rows = harness.run_sensitivity_sweep(
        cfg,
        [float(r) for r in args.rates.split(",")],
        strategies=args.strategies.split(","),
        seeds=range(1, args.seeds + 1),
        output_dir=args.out,
    )
    for r in rows:
        print(f"{r['loss_rate']:.2f} {r['direction']:>8} {r['strategy']:>8} d*={r['d_star_ms']:.3f} ms  degradation {r['degradation_kw']:.3e} kW")
    print(f"table and plot in {args.out}")


if __name__ == "__main__":
    main()
