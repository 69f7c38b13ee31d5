"""Command line front end: run scenarios, sweep parameters, export traces.

Flag values override config-file values, which override defaults. All
outputs are CSV files plus the effective config as JSON; nothing is
interactive and nothing talks to a network. Exit status is 0 only when
every requested epoch completed.
"""

import argparse
import sys

from .config import config_from_args, parse_config
from .errors import ConfigError, LocsyncError
from .estimators import ALGORITHMS
from .experiment import SWEEP_AXES, export_traces, run_experiment, run_sweep

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_BAD_CONFIG = 2


def _add_common_flags(parser):
    parser.add_argument("--config", metavar="PATH",
                        help="scenario config file (JSON)")
    parser.add_argument("--algorithm", choices=sorted(ALGORITHMS),
                        help="estimation algorithm")
    parser.add_argument("--topology", metavar="full|k:<n>",
                        help="full graph or symmetrized k-nearest-neighbor")
    parser.add_argument("--msg-types", metavar="LIST", dest="msg_types",
                        help="comma-separated message types, e.g. 2,3")
    parser.add_argument("--rate", type=float, metavar="HZ",
                        help="epochs per second")
    parser.add_argument("--duration", type=float, metavar="S",
                        help="scenario length in seconds")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="run seed; fixes all randomness")
    parser.add_argument("--name", metavar="NAME",
                        help="scenario name used in output file names")
    parser.add_argument("--out", metavar="DIR", default="results",
                        help="output directory (default: results)")


def _parse_msg_types(text):
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigError(f"msg_types: expected comma-separated integers, "
                          f"got {text!r}")


def _config_from(args):
    flags = {}
    for key in ("algorithm", "topology", "rate", "duration", "seed", "name"):
        value = getattr(args, key)
        if value is not None:
            flags[key] = value
    if args.msg_types is not None:
        flags["msg_types"] = _parse_msg_types(args.msg_types)
    return parse_config(args.config, config_from_args(flags))


def _print_report(result):
    report = result.report
    cfg = result.config
    print(f"run {result.run_id}: algorithm={cfg.algorithm} "
          f"epochs={report.n_epochs} nodes={cfg.n_nodes}")
    if report.failure_epoch is not None:
        print(f"  FAILED at epoch {report.failure_epoch}: "
              f"{report.failure_message}")
    print("  node  steady_loc_m  final_loc_m  steady_sync_s  final_sync_s")
    steady_sync = report.steady_sync.as_dict()
    final_sync = report.sync.as_dict()
    for node, steady, final in zip(report.steady_loc.node_ids,
                                   report.steady_loc.values,
                                   report.loc.values):
        tag = "*" if node == cfg.master else " "
        mobile = "m" if node in report.mobile_ids else " "
        print(f"  {node:>3}{tag}{mobile} {steady:12.4f} {final:12.4f} "
              f"{steady_sync.get(node, 0.0):14.3e} "
              f"{final_sync.get(node, 0.0):13.3e}")
    print(f"  mean  {report.steady_loc.mean:11.4f} {report.loc.mean:12.4f} "
          f"{report.steady_sync.mean:14.3e} {report.sync.mean:13.3e}")
    if report.mobile is not None:
        rmse = ", ".join(f"node {k}: {v:.3f} m" for k, v in zip(
            report.mobile.node_ids, report.mobile.rmse_3d))
        print(f"  mobile 3d rmse: {rmse}")
    for path in result.csv_paths:
        print(f"  wrote {path}")


def cmd_run(args):
    cfg = _config_from(args)
    result = run_experiment(cfg, out_dir=args.out)
    _print_report(result)
    return EXIT_OK if result.report.completed() else EXIT_RUN_FAILED


def _parse_sweep_values(axis, text):
    parts = [p.strip() for p in text.split(",") if p.strip() != ""]
    if not parts:
        raise ConfigError(f"values: no values given in {text!r}")
    try:
        if axis == "connectivity":
            return [int(p) for p in parts]
        if axis == "noise":
            return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"values: bad value for axis {axis!r} in {text!r}")
    for p in parts:
        if p not in ALGORITHMS:
            raise ConfigError(f"values: unknown algorithm {p!r}")
    return parts


def cmd_sweep(args):
    cfg = _config_from(args)
    values = _parse_sweep_values(args.axis, args.values)
    results = run_sweep(cfg, args.axis, values, out_dir=args.out)
    ok = True
    for value, result in results:
        print(f"[{args.axis}={value}]")
        _print_report(result)
        ok = ok and result.report.completed()
    return EXIT_OK if ok else EXIT_RUN_FAILED


def cmd_export_traces(args):
    cfg = _config_from(args)
    path = export_traces(cfg, args.out)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="locsync",
        description="Joint localization and clock synchronization: simulate "
                    "a UWB node network and run a network estimator over it.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate one scenario and report")
    _add_common_flags(run_p)
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", help="repeat a scenario along one axis")
    _add_common_flags(sweep_p)
    sweep_p.add_argument("--axis", required=True, choices=SWEEP_AXES,
                         help="parameter to vary")
    sweep_p.add_argument("--values", required=True, metavar="LIST",
                         help="comma-separated axis values, run in order")
    sweep_p.set_defaults(func=cmd_sweep)

    traces_p = sub.add_parser("export-traces",
                              help="write the raw exchange log as CSV")
    _add_common_flags(traces_p)
    traces_p.set_defaults(func=cmd_export_traces)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except LocsyncError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED


if __name__ == "__main__":
    sys.exit(main())
