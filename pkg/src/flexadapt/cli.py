"""Command-line front end: collect, train, run, metrics.

Every subcommand takes --config, either a path to an INI file or the name of a
bundled preset, and one --seed that drives all randomness.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import PRESETS, ConfigError, load_config, load_preset, parse_windows
from .dynamics import AnalyticRegressor, DynamicsError, true_parameters
from .network import OutputLayer, TrainingError, load_network, save_network, write_loss_history
from .scenario import (CONTROLLERS, PD, ScenarioError, compute_metrics, export_csv, read_dataset,
                       read_run_csv, run_scenario, write_dataset)


def _config(name):
    if Path(name).exists():
        return load_config(name)
    if name in PRESETS:
        return load_preset(name)
    raise ConfigError(f"{name}: no such file or preset (presets: {', '.join(PRESETS)})")


def cmd_collect(args):
    cfg = _config(args.config)
    data = cfg.collect(seed=args.seed)
    write_dataset(data, args.out)
    print(f"wrote {len(data)} samples to {args.out}")


def cmd_train(args):
    cfg = _config(args.config)
    data = read_dataset(args.data)
    net, out, hist = cfg.train(data, seed=args.seed)
    save_network(args.weights, net, out)
    if args.loss:
        write_loss_history(args.loss, hist)
    print(f"held-out MSE {hist.test_mse[0]:.3e} -> {hist.test_mse[-1]:.3e}; weights in {args.weights}")


def cmd_run(args):
    cfg = _config(args.config)
    scenario = cfg.scenario(seed=args.seed)
    controller = args.controller or cfg.controller
    true_params = None
    if args.analytic:
        net = AnalyticRegressor(scenario.model)
        out = OutputLayer(true_parameters(scenario.model))
        true_params = true_parameters
    elif args.weights:
        net, out = load_network(args.weights)
    elif controller == PD:
        net, out = None, None
    else:
        raise ConfigError("adaptive controllers need --weights or --analytic")
    log = run_scenario(scenario, controller, net, out, true_params=true_params)
    export_csv(log, args.out)
    windows = parse_windows(args.windows) if args.windows else cfg.windows
    report = compute_metrics(log, windows)
    if args.metrics:
        export_csv(report, args.metrics)
    print(f"{controller}: {len(log)} ticks; l2 {report.l2.round(5).tolist()} "
          f"linf {report.linf.round(5).tolist()}")
    for (a, b), f in zip(report.windows, report.frobenius):
        print(f"  window [{a:g}, {b:g}) Frobenius {f:.5f}")


def cmd_metrics(args):
    log = read_run_csv(args.run)
    report = compute_metrics(log, parse_windows(args.windows or ""))
    export_csv(report, args.out)
    print(f"wrote metrics for {len(log)} ticks to {args.out}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")

    parser = argparse.ArgumentParser(prog="flexadapt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", parents=[common], help="simulate excitations and write a dataset CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", parents=[common], help="train the regressor network offline")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True, help="output weight file")
    p.add_argument("--loss", help="optional loss-history CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", parents=[common], help="run a scenario and log it to CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--weights", help="trained weight file")
    p.add_argument("--analytic", action="store_true",
                   help="use the closed-form pendulum regressor with true parameters")
    p.add_argument("--controller", choices=CONTROLLERS)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="optional metrics CSV")
    p.add_argument("--windows", help="override windows, e.g. '0:25,25:50'")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("metrics", parents=[common], help="tracking-error metrics of a run CSV")
    p.add_argument("--run", required=True)
    p.add_argument("--windows")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"flexadapt: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
