"""Experiment runner.

Three subcommands: ``run`` (one synthetic configuration), ``sweep`` (a
parameter grid emitting plot-ready long-format CSV), and ``real`` (replay of
an arrival trace against a label file). Every invocation echoes its resolved
configuration to ``config.json`` in the output directory, so a run is fully
reproducible from its outputs.

Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .simulator import ALGORITHMS, SimConfig, run_replay, run_simulation
from .dataio import (
    DataFormatError,
    export_report,
    parse_arrivals,
    parse_labels,
    _write_csv,
)

__all__ = ["build_parser", "main"]

SWEEP_PARAMETERS = ("m", "delta", "b", "algorithm")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--l", type=int, default=2,
                        help="choices per question (default 2)")
    parser.add_argument("--delta", type=float, default=0.3,
                        help="easiness-score return threshold in (0, 1)")
    parser.add_argument("--k", type=float, default=1.0,
                        help="easiness smoothing constant in (0, 1]")
    parser.add_argument("--b", type=int, default=20,
                        help="batch budget; 0 = unbounded (synthetic only)")
    parser.add_argument("--lambda", dest="lam", type=float, default=1.0,
                        help="worker arrivals per batch")
    parser.add_argument("--rep", type=int, default=3,
                        help="fixed repetitions for the baseline")
    parser.add_argument("--runs", type=int, default=100,
                        help="independent repetitions to average")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory")
    parser.add_argument("--format", choices=("json", "csv"), default="json",
                        help="report format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdbatch",
        description="Batch crowdsourcing assignment experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one synthetic configuration")
    p_run.add_argument("--m", type=int, default=250, help="number of questions")
    p_run.add_argument("--algorithm", choices=ALGORITHMS, default="fm")
    _add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="run a parameter grid")
    p_sweep.add_argument("--m", type=int, default=250, help="number of questions")
    p_sweep.add_argument("--param", required=True, choices=SWEEP_PARAMETERS,
                         help="parameter to vary")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values for the parameter")
    p_sweep.add_argument("--algorithm", default="fm",
                         help="comma-separated algorithms (ignored when "
                              "--param algorithm)")
    _add_common(p_sweep)

    p_real = sub.add_parser("real", help="replay a real trace and label set")
    p_real.add_argument("--arrivals", type=Path, required=True,
                        help="arrivals CSV (worker_id,timestamp)")
    p_real.add_argument("--labels", type=Path, required=True,
                        help="labels CSV (worker_id,question_id,choice)")
    p_real.add_argument("--truths", type=Path, required=True,
                        help="truths CSV (question_id,truth)")
    p_real.add_argument("--algorithm", choices=("fm", "bm", "baseline"),
                        default="fm")
    _add_common(p_real)
    return parser


def _config_from(args, num_questions: int, num_choices: int) -> SimConfig:
    return SimConfig(
        num_questions=num_questions,
        num_choices=num_choices,
        delta=args.delta,
        smoothing_k=args.k,
        max_batches=args.b,
        arrival_rate=args.lam,
        algorithm=args.algorithm,
        baseline_rep=args.rep,
        runs=args.runs,
        seed=args.seed,
    )


def _echo_config(out: Path, command: str, config: SimConfig, extra: dict) -> None:
    body = {"command": command, "config": asdict(config), **extra}
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_run(args) -> int:
    config = _config_from(args, args.m, args.l)
    config.validate()
    args.out.mkdir(parents=True, exist_ok=True)
    report = run_simulation(config)
    written = export_report(report, args.out / "report", args.format)
    _echo_config(args.out, "run", config, {"format": args.format,
                                           "out": str(args.out)})
    print(f"accuracy {report.accuracy:.4f}  required_batches "
          f"{report.required_batches:.2f}  ({len(written)} file(s) written)")
    return 0


def _parse_values(param: str, text: str) -> list:
    raw = [v.strip() for v in text.split(",") if v.strip()]
    if not raw:
        raise ValueError("--values must list at least one value")
    if param == "m":
        return [int(v) for v in raw]
    if param == "delta":
        return [float(v) for v in raw]
    if param == "b":
        return [int(v) for v in raw]
    for v in raw:
        if v not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {v!r}; valid: {ALGORITHMS}")
    return raw


def _cmd_sweep(args) -> int:
    values = _parse_values(args.param, args.values)
    if args.param == "algorithm":
        algorithms = [None]
    else:
        algorithms = [a.strip() for a in args.algorithm.split(",") if a.strip()]
        for a in algorithms:
            if a not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {a!r}; valid: {ALGORITHMS}")

    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    base = _config_from(args, args.m, args.l)
    for value in values:
        for algorithm in algorithms:
            config = _config_from(args, args.m, args.l)
            if args.param == "m":
                config.num_questions = value
            elif args.param == "delta":
                config.delta = value
            elif args.param == "b":
                config.max_batches = value
            else:
                config.algorithm = value
            if algorithm is not None:
                config.algorithm = algorithm
            config.validate()
            report = run_simulation(config)
            label = config.algorithm
            rows.append([args.param, value, label, "accuracy", report.accuracy])
            rows.append([args.param, value, label, "required_batches",
                         report.required_batches])

    sweep_path = args.out / "sweep.csv"
    _write_csv(sweep_path, ["parameter", "value", "algorithm", "metric", "mean"],
               rows)
    _echo_config(args.out, "sweep", base, {
        "format": args.format,
        "out": str(args.out),
        "parameter": args.param,
        "values": [str(v) for v in values],
        "algorithms": [a for a in algorithms if a is not None],
    })
    print(f"{len(rows)} sweep rows written to {sweep_path}")
    return 0


def _cmd_real(args) -> int:
    trace = parse_arrivals(args.arrivals)
    labels = parse_labels(args.labels, args.truths)
    config = _config_from(args, len(labels.question_ids), labels.num_choices)
    config.validate()
    args.out.mkdir(parents=True, exist_ok=True)
    report = run_replay(trace, labels, config)
    written = export_report(report, args.out / "report", args.format)
    _echo_config(args.out, "real", config, {
        "format": args.format,
        "out": str(args.out),
        "arrivals": str(args.arrivals),
        "labels": str(args.labels),
        "truths": str(args.truths),
    })
    print(f"accuracy {report.accuracy:.4f}  required_batches "
          f"{report.required_batches:.2f}  ({len(written)} file(s) written)")
    return 0


_COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "real": _cmd_real}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
