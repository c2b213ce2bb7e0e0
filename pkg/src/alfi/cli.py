"""Command-line interface: train, eval, report, selftest.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numeric failure,
4 selftest failure.
"""

from __future__ import annotations

import argparse
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import evaluate as ev
from . import meta
from .meta import ConfigError, TrainingDiverged
from .rng import RandomSource
from .simulators import get_simulator, simulator_names

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_SELFTEST = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(prog="alfi", description="Learned iterative likelihood-free inference.")
    sub = parser.add_subparsers(dest="command")

    p_train = sub.add_parser("train", help="meta-train an updater")
    p_train.add_argument("--sim", required=True, choices=simulator_names())
    p_train.add_argument("--config", help="TOML file with TrainConfig keys")
    p_train.add_argument("--seed", type=int, help="overrides the config seed")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--log", help="training log CSV path (default: <out>.log.csv)")
    p_train.add_argument("--quiet", action="store_true")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--problems", type=int, default=100)
    p_eval.add_argument("--t-test", type=int, default=None)
    p_eval.add_argument("--n-init", type=int, default=500)
    p_eval.add_argument("--seed", type=int, default=1)
    p_eval.add_argument("--out", required=True, help="report output directory")

    p_report = sub.add_parser("report", help="render SVG figures from a report directory")
    p_report.add_argument("--report", required=True, help="directory written by eval")

    p_self = sub.add_parser("selftest", help="run the oracle suites")
    p_self.add_argument("--seed", type=int, default=0)
    return parser


def _load_config(sim, path, seed):
    overrides = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                overrides = tomllib.load(fh)
        except OSError as err:
            raise FileNotFoundError(f"cannot read config {path}: {err}") from err
        except tomllib.TOMLDecodeError as err:
            raise UsageError(f"invalid TOML in {path}: {err}") from err
    if seed is not None:
        overrides["seed"] = seed
    try:
        return meta.default_config(sim, **overrides)
    except ConfigError as err:
        raise UsageError(str(err)) from err
    except TypeError as err:
        raise UsageError(f"bad config value: {err}") from err


def _cmd_train(args):
    sim = get_simulator(args.sim)
    cfg = _load_config(sim, args.config, args.seed)

    def progress(row):
        if not args.quiet:
            print(f"epoch {row.epoch:4d}  loss {row.mean_loss:12.5g}  "
                  f"val_rmse {row.val_rmse:9.5g}  {row.wall_time:8.1f}s")

    updater, logs = meta.train(sim, cfg, progress=progress)
    meta.save_model(updater, args.out, simulator=sim.name, config=cfg)
    meta.write_training_log(logs, args.log or f"{args.out}.log.csv")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def _cmd_eval(args):
    updater, manifest = meta.load_model(args.ckpt)
    sim = get_simulator(manifest["simulator"])
    cfg_dict = manifest.get("config") or {}
    cfg = meta.default_config(sim, **{k: v for k, v in cfg_dict.items()
                                      if k in meta.TrainConfig.__dataclass_fields__})
    t_test = args.t_test or cfg.iterations
    report = ev.evaluate(updater, sim, args.problems, t_test, args.n_init,
                         RandomSource(args.seed).child("eval"), cfg=cfg)
    ev.write_report(report, args.out)
    print(f"report written to {args.out}")
    return EXIT_OK


def _cmd_report(args):
    written = ev.render_report(args.report)
    print(f"rendered {', '.join(written)} in {args.report}")
    return EXIT_OK


def _cmd_selftest(args):
    ok = __import__("alfi.selftest", fromlist=["run_selftest"]).run_selftest(seed=args.seed)
    return EXIT_OK if ok else EXIT_SELFTEST


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        handler = {"train": _cmd_train, "eval": _cmd_eval,
                   "report": _cmd_report, "selftest": _cmd_selftest}[args.command]
        return handler(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (meta.CheckpointError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (TrainingDiverged, ArithmeticError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
