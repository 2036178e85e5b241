"""Command-line entry point: ``cyberder <subcommand> ...``.

Exit status 0 on success, 2 for missing or malformed inputs and bad
arguments, 1 for failures during a run.  Every error is a single line on
stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .cyber import Strategy, calibrate_threshold
from .feeder import FeederError, load_feeder, solve_power_flow
from .forecast import TrainingDiverged
from .linmodel import linearize_analytic, linearize_numeric
from .scenario import ScenarioError, load_config

EXIT_INPUT = 2
EXIT_RUNTIME = 1


class InputError(Exception):
    pass


def _csv_list(text: str, convert=str) -> list:
    try:
        return [convert(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _node_id(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.delay = replace(cfg.delay, seed=args.seed)
        cfg.training = replace(cfg.training, seed=args.seed)
    return cfg


def read_injections(path, feeder) -> np.ndarray:
    """CSV ``node,p_kw,q_kvar`` of net injections (generation positive).
    Nodes not listed inject nothing."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"injections file not found: {path}")
    s = np.zeros(feeder.n, dtype=complex)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["node", "p_kw", "q_kvar"]:
            raise InputError(f"{path}: expected header node,p_kw,q_kvar")
        for k, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise InputError(f"{path}: row {k}: expected 3 fields")
            node = _node_id(row[0].strip())
            try:
                p, q = float(row[1]), float(row[2])
                pos = feeder.index(node) - 1
            except (ValueError, KeyError, FeederError) as exc:
                raise InputError(f"{path}: row {k}: {exc}") from exc
            if pos < 0:
                raise InputError(f"{path}: row {k}: the head node has no injection")
            s[pos] += complex(p, q) / feeder.base_kva
    return s


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.strategy:
        cfg.strategy = Strategy.parse(args.strategy)
    out = Path(args.output) if args.output else None
    metrics, _ = harness.run_experiment(cfg, output_dir=out)
    summary = {
        "strategy": cfg.strategy.value,
        "tracking_rmse_kw": metrics.tracking_rmse,
        "window_tracking_rmse_kw": metrics.window_tracking_rmse,
        "voltage_violations": metrics.voltage_violation_count,
        "max_excursion_pu": metrics.max_excursion,
        "late_messages": metrics.late_message_count,
        "forecast_rmse_pu": metrics.forecast_rmse,
    }
    print(json.dumps(summary, indent=1))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    seeds = list(range(cfg.delay.seed, cfg.delay.seed + args.seeds))
    rows = harness.run_sensitivity_sweep(
        cfg,
        args.rates,
        directions=args.direction,
        strategies=args.strategies,
        seeds=seeds,
        output_dir=args.output or cfg.resolve(cfg.output_dir),
    )
    print(f"{'rate':>6} {'direction':>9} {'strategy':>9} {'d*_ms':>8} {'rmse_kw':>12} {'delta_kw':>12}")
    for r in rows:
        print(
            f"{r['loss_rate']:>6.3f} {r['direction']:>9} {r['strategy']:>9} {r['d_star_ms']:>8.4f} "
            f"{r['tracking_rmse_kw']:>12.6f} {r['degradation_kw']:>12.3e}"
        )
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.output) if args.output else cfg.resolve(cfg.lstm_dir)
    _, report = harness.train_forecasters(cfg, output_dir=out)
    for node, entry in report.items():
        if "error" in entry:
            print(f"node {node}: {entry['error']}")
        else:
            print(f"node {node}: train RMSE {entry['train_rmse_pu']:.3e} p.u., held-out {entry['holdout_rmse_pu']:.3e} p.u.")
    print(f"models written to {out}")
    return 1 if any("error" in e for e in report.values()) else 0


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    model = cfg.delay.model()
    d_star = calibrate_threshold(model, args.rate, args.samples)
    print(f"d* = {d_star:.4f} ms for a {args.rate:g} loss rate")
    return 0


def cmd_powerflow(args) -> int:
    feeder = load_feeder(args.feeder)
    s = read_injections(args.injections, feeder)
    sol = solve_power_flow(feeder, s)
    if not sol.converged:
        raise RuntimeError(f"power flow did not converge after {sol.iterations} sweeps")
    print(f"{'node':>8} {'|V| p.u.':>14} {'angle deg':>12}")
    print(f"{str(feeder.head):>8} {feeder.head_voltage:>14.10f} {0.0:>12.6f}")
    for node, v in zip(feeder.nodes[1:], sol.voltages):
        print(f"{str(node):>8} {abs(v):>14.10f} {np.degrees(np.angle(v)):>12.6f}")
    p0 = sol.head_power * feeder.base_kva
    print(f"head power {p0.real:.6f} kW {p0.imag:.6f} kvar; {sol.iterations} sweeps")
    return 0


def cmd_linearize(args) -> int:
    feeder = load_feeder(args.feeder)
    model = linearize_numeric(feeder) if args.numeric else linearize_analytic(feeder)
    if args.output:
        model.save(args.output)
        print(f"model written to {args.output}")
    else:
        print(json.dumps(model.to_dict()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cyberder", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="override the delay and training seeds")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full-horizon experiment")
    p.add_argument("config")
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--output", help="output directory (default: config output_dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="tracking error vs loss rate")
    p.add_argument("config")
    p.add_argument("--rates", type=lambda t: _csv_list(t, float), default=[0.01, 0.05, 0.1])
    p.add_argument("--direction", type=_csv_list, default=["uplink", "downlink"])
    p.add_argument("--strategies", type=_csv_list, default=["previous"])
    p.add_argument("--seeds", type=int, default=5, help="delay seeds averaged per cell")
    p.add_argument("--output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train per-node forecasters")
    p.add_argument("config")
    p.add_argument("--output", help="model directory (default: config lstm_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate-delay", help="deadline for a target loss rate")
    p.add_argument("config")
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("powerflow", help="solve one power flow")
    p.add_argument("feeder", help="feeder JSON or bundled:<name>")
    p.add_argument("injections", help="CSV node,p_kw,q_kvar")
    p.set_defaults(func=cmd_powerflow)

    p = sub.add_parser("linearize", help="build the linear grid model")
    p.add_argument("feeder")
    p.add_argument("--numeric", action="store_true", help="finite-difference Jacobian instead of the analytic model")
    p.add_argument("--output")
    p.set_defaults(func=cmd_linearize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        msg = str(exc) if exc.filename is None else f"file not found: {exc.filename}"
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except (ScenarioError, FeederError, InputError, ValueError) as exc:
        print(f"error: {str(exc).splitlines()[0]}", file=sys.stderr)
        return EXIT_INPUT
    except (RuntimeError, TrainingDiverged) as exc:
        print(f"error: {str(exc).splitlines()[0]}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
