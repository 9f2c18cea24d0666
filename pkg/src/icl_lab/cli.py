"""``icl-lab`` command line: run, validate and theory-check."""

from __future__ import annotations

import argparse
import json
import sys

from . import experiments as ex


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")


def _cmd_run(args) -> int:
    try:
        path = ex.find_config(args.config)
        raw = ex.load_config(path)
    except (OSError, json.JSONDecodeError) as exc:
        _emit({"exit_code": ex.EXIT_INVALID, "errors": [{"path": "$", "message": f"cannot read config: {exc}"}]})
        return ex.EXIT_INVALID
    result = ex.run(raw, out=args.out, plot=args.plot, threads=args.threads)
    _emit(result.to_dict())
    return result.exit_code


def _cmd_validate(args) -> int:
    report = ex.validate(args.config)
    _emit(report.to_dict())
    return ex.EXIT_OK if report.valid else ex.EXIT_INVALID


def _cmd_theory_check(args) -> int:
    raw = {"experiment": "theory_check", "seed": args.seed, "trials": args.trials}
    report = ex.resolve(raw)
    if not report.valid:
        _emit(report.to_dict())
        return ex.EXIT_INVALID
    cfg = report.config
    outcome = ex.theory_report(
        cfg["seed"], cfg["trials"], cfg["input_limit"], cfg["gradient"], cfg["exploratory"], args.threads
    )
    payload = {"seed": cfg["seed"], "trials": cfg["trials"], **outcome.summary}
    payload["exit_code"] = ex.EXIT_VIOLATION if outcome.violation else ex.EXIT_OK
    _emit(payload)
    return payload["exit_code"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icl-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help=f"config path or canned name ({', '.join(ex.canned_configs())})")
    run.add_argument("--out", help="output directory (overrides output_dir)")
    run.add_argument("--plot", action="store_true", help="also write plot.svg")
    run.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    run.set_defaults(func=_cmd_run)

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.set_defaults(func=_cmd_validate)

    th = sub.add_parser("theory-check", help="run the property checks and print a JSON report")
    th.add_argument("--trials", type=int, default=ex.DEFAULTS["theory_check"]["trials"])
    th.add_argument("--seed", type=int, default=0)
    th.add_argument("--threads", type=int, default=1)
    th.set_defaults(func=_cmd_theory_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("icl-lab: --threads must be at least 1", file=sys.stderr)
        return ex.EXIT_INVALID
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
