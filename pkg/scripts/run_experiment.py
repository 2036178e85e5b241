"""Full-horizon run of every strategy on the default scenario.

    python3 scripts/run_experiment.py [--config configs/default.json] [--out out/runs]

One output directory per strategy plus an ideal-network baseline.  Prints
[whole-horizon RMSE, delay-window RMSE] in kW for each.
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

from cyberder import harness
from cyberder.cyber import Strategy
from cyberder.scenario import load_config

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "default.json")
    ap.add_argument("--out", default=ROOT / "out" / "runs")
    args = ap.parse_args()
    cfg = load_config(args.config)
    out = Path(args.out)
    summary = {}
    ideal = replace(cfg, strategy=Strategy.PREVIOUS_VALUE, delay=replace(cfg.delay, uplink=False, downlink=False))
    metrics, _ = harness.run_experiment(ideal, out / "ideal")
    summary["ideal"] = [metrics.tracking_rmse, metrics.window_tracking_rmse]
    for strategy in Strategy:
        metrics, _ = harness.run_experiment(replace(cfg, strategy=strategy), out / strategy.value)
        summary[strategy.value] = [metrics.tracking_rmse, metrics.window_tracking_rmse]
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
