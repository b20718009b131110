"""Command line front end.

Subcommands: run (execute a config), oracle (print the comparison points for
a config's instance), estimate (fit sensitivity and decay from a records
CSV), sweep (grid one config parameter), report (render figures and a table
from a run directory). Exit codes: 0 success, 2 invalid config or usage,
3 runtime failure.
"""

import argparse
import logging
import sys

import numpy as np

from .analysis import oracle_report
from .errors import DecriskError, ValidationError
from .experiment import ExperimentConfig, build_instance, execute, resolve_constants, sweep
from .reporting import render_run_report
from .sfpark import estimate_block_params, load_records

log = logging.getLogger(__name__)


def _config_path(args):
    path = args.config_flag or args.config
    if path is None:
        raise ValidationError(["a config file is required (positional or --config)"])
    return path


def _add_config_arguments(sub):
    sub.add_argument("config", nargs="?", help="config file (TOML or JSON, or a run manifest)")
    sub.add_argument("--config", dest="config_flag", help="config file (alternative to positional)")


def _add_run_arguments(sub):
    sub.add_argument("--out", help="output directory (overrides the config)")
    sub.add_argument("--workers", type=int, default=1, help="parallel seed workers")
    sub.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="decrisk",
        description="Risk minimization against decision-dependent, slowly adapting data.",
    )
    parser.add_argument(
        "--log-level",
        default="warning",
        choices=["debug", "info", "warning", "error"],
        help="logging verbosity",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("run", help="execute a config across its seeds")
    _add_config_arguments(sub)
    _add_run_arguments(sub)

    sub = commands.add_parser("oracle", help="print optimum, stable point, and their gap")
    _add_config_arguments(sub)

    sub = commands.add_parser("estimate", help="fit sensitivity and decay from records")
    sub.add_argument("records", help="records CSV")
    sub.add_argument("--block", required=True, help="block id to fit")
    sub.add_argument(
        "--window",
        default="1200-1500",
        help="time window as start-end minutes (default 1200-1500)",
    )

    sub = commands.add_parser("sweep", help="grid one config parameter across values")
    _add_config_arguments(sub)
    _add_run_arguments(sub)
    sub.add_argument("--param", required=True, help="dotted path, e.g. scenario.lam")
    sub.add_argument("--values", required=True, help="comma separated values")

    sub = commands.add_parser("report", help="render figures and report.csv for a run directory")
    sub.add_argument("run_dir", help="directory written by the run subcommand")
    return parser


def _parse_value(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _parse_window(text):
    parts = text.replace(":", "-").split("-")
    if len(parts) != 2:
        raise ValidationError([f"window must be start-end, got {text!r}"])
    return int(parts[0]), int(parts[1])


def _cmd_run(args):
    config = ExperimentConfig.load(_config_path(args))
    manifest = execute(
        config, workers=args.workers, seed_offset=args.seed_offset, out_dir=args.out
    )
    out_dir = manifest.get("out_dir")
    if out_dir:
        print(f"wrote {out_dir}")
    print(f"final mean distance to optimum: {manifest['outcome']['final_mean_distance']:.6g}")
    occ = manifest["outcome"].get("predicted_final_occupancy")
    if occ is not None:
        occ_text = ", ".join(f"{v:.4f}" for v in occ)
        print(f"predicted final occupancy: {occ_text}")
    return 0


def _cmd_oracle(args):
    config = ExperimentConfig.load(_config_path(args))
    config.validate()
    env, model, cs, _ = build_instance(config)
    constants = resolve_constants(config, env, model, cs)
    report = oracle_report(model, env.map, cs)
    with np.printoptions(precision=6, suppress=True):
        print(f"x_star: {np.asarray(report.x_star)}  ({report.x_star_method})")
        print(f"x_stable: {np.asarray(report.x_stable)}  ({report.x_stable_method})")
    print(f"gap: {report.gap:.6g}")
    print(f"alpha: {constants.alpha:.6g}  grad_lipschitz: {constants.grad_lipschitz:.6g}")
    return 0


def _cmd_estimate(args):
    frame = load_records(args.records)
    window = _parse_window(args.window)
    params = estimate_block_params(frame, args.block, window)
    print(f"block: {params['block_id']}  window: {params['window'][0]}-{params['window'][1]}")
    print(f"A: {params['A']:.6g}")
    lam = params["lambda"]
    if params["lambda_degenerate"]:
        print("lambda: degenerate (observations never move between weeks)")
    else:
        print(f"lambda: {lam:.6g}")
    print(f"nominal_rate: {params['nominal_rate']:.2f}  p0_samples: {params['n_p0_samples']}")
    return 0


def _cmd_sweep(args):
    config = ExperimentConfig.load(_config_path(args))
    values = [_parse_value(v) for v in args.values.split(",") if v != ""]
    if not values:
        raise ValidationError(["--values must list at least one value"])
    table, _ = sweep(
        config,
        args.param,
        values,
        workers=args.workers,
        seed_offset=args.seed_offset,
        out_dir=args.out,
    )
    print(table.to_string(index=False))
    return 0


def _cmd_report(args):
    written = render_run_report(args.run_dir)
    for path in written:
        print(f"wrote {path}")
    return 0


_HANDLERS = {
    "run": _cmd_run,
    "oracle": _cmd_oracle,
    "estimate": _cmd_estimate,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()))
    try:
        return _HANDLERS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DecriskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
