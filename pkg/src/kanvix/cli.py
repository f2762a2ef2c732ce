"""Command-line entry point: ``kanvix {train,benchmark,leverage,simulate,report}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
failure. Errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config, resolve
from .exceptions import ConfigError, DataError, KanvixError, MissingInputFile
from .pipeline import cmd_benchmark, cmd_leverage, cmd_simulate, cmd_train, render_report

COMMANDS = {"train": cmd_train, "benchmark": cmd_benchmark, "leverage": cmd_leverage}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--dataset", choices=["d1", "d2", "d3"], help="run only this feature set")
    common.add_argument("--period", type=int, choices=[1, 2, 3], help="run only this evaluation period")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="kanvix", description="Interpretable spline-network VIX forecasting.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train, prune and symbolify each cell")
    sub.add_parser("benchmark", parents=[common], help="forward fill, HAR and ARIMA benchmarks")
    sub.add_parser("leverage", parents=[common], help="augment trained forecasts with lagged excess returns")
    sub.add_parser("simulate", parents=[common], help="write a synthetic mean-reverting series as CSV")
    rep = sub.add_parser("report", parents=[common], help="print reports as text tables")
    rep.add_argument("path", nargs="?", help="report file or directory (default: --out)")
    return parser


def _overrides(args) -> dict:
    cli = {"seed": args.seed, "out": args.out, "threads": args.threads}
    if args.dataset:
        cli["datasets"] = [args.dataset]
    if args.period:
        cli["periods"] = [args.period]
    return cli


def _report(cfg, path) -> None:
    target = Path(path) if path else Path(cfg["out"])
    if target.is_dir():
        files = sorted(p for p in target.glob("*.json") if not p.name.endswith("_network.json"))
    elif target.is_file():
        files = [target]
    else:
        raise MissingInputFile(target)
    if not files:
        raise DataError(f"no reports in {target}")
    for f in files:
        try:
            doc = json.loads(f.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{f}: not a JSON report ({exc})") from exc
        sys.stdout.write(render_report(doc))
        sys.stdout.write("\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(load_config(args.config), _overrides(args))
        if args.command == "simulate":
            print(cmd_simulate(cfg))
        elif args.command == "report":
            _report(cfg, args.path)
        else:
            for path in COMMANDS[args.command](cfg):
                print(path)
    except KanvixError as exc:
        _fail(exc, exc.exit_code)
        return exc.exit_code
    except FileNotFoundError as exc:
        _fail(exc, DataError.exit_code)
        return DataError.exit_code
    except ArithmeticError as exc:
        _fail(exc, 3)
        return 3
    except ValueError as exc:
        # unclassified ValueErrors come from parameter validation
        _fail(exc, ConfigError.exit_code)
        return ConfigError.exit_code
    return 0


def _fail(exc, code) -> None:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if getattr(exc, "path", None):
        err["path"] = exc.path
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")


if __name__ == "__main__":
    sys.exit(main())
