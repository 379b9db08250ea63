"""File ingestion, trace matching, batch scheduling, and report export.

CSV in and out: comma-separated, header row, UTF-8, LF line endings,
timestamps as integer epoch seconds. All parsers reject malformed input with
the offending line number and never modify source files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .simulator import SimReport

__all__ = [
    "ArrivalTrace",
    "BatchSchedule",
    "DataFormatError",
    "LabelSet",
    "export_report",
    "load_summary",
    "majority_vote_accuracy",
    "match_and_schedule",
    "parse_arrivals",
    "parse_labels",
    "parse_truths",
]


class DataFormatError(ValueError):
    """Malformed input file; the message names the file and line."""


@dataclass
class ArrivalTrace:
    """Worker arrival events as (worker_id, epoch_seconds) records."""

    records: list

    @property
    def worker_ids(self):
        return sorted({wid for wid, _ in self.records})

    @property
    def span(self):
        if not self.records:
            raise ValueError("arrival trace is empty")
        times = [t for _, t in self.records]
        return min(times), max(times)

    def by_worker(self) -> dict:
        """Submission times per worker, each list sorted ascending."""
        out = {}
        for wid, t in self.records:
            out.setdefault(wid, []).append(t)
        for times in out.values():
            times.sort()
        return out


@dataclass
class LabelSet:
    """Observed votes, optionally with ground truths attached.

    ``choices`` maps (worker_id, question_id) to a choice index;
    ``num_choices`` is the smallest answer-set size covering every observed
    choice (at least 2). Id lists preserve first appearance order.
    """

    worker_ids: list
    question_ids: list
    choices: dict
    num_choices: int
    truths: dict = field(default_factory=dict)


@dataclass
class BatchSchedule:
    """Arrival events bucketed into b equal time slices.

    ``batches[i]`` lists label-worker ids in arrival order; a worker appears
    once per matched submission time. ``matching`` records the label-to-trace
    worker pairing that produced the events.
    """

    b: int
    batches: list
    matching: dict = field(default_factory=dict)


def _read_rows(path, expected_header):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot open file ({exc})") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty file, expected header "
                                  f"{','.join(expected_header)!r}")
        if [h.strip() for h in header] != expected_header:
            raise DataFormatError(
                f"{path} line 1: expected header {','.join(expected_header)!r}, "
                f"got {','.join(header)!r}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise DataFormatError(
                    f"{path} line {lineno}: expected {len(expected_header)} "
                    f"fields, got {len(row)}"
                )
            rows.append((lineno, [f.strip() for f in row]))
    return rows


def _parse_int(path, lineno, name, text):
    try:
        return int(text)
    except ValueError:
        raise DataFormatError(
            f"{path} line {lineno}: {name} must be an integer, got {text!r}"
        ) from None


def parse_arrivals(path) -> ArrivalTrace:
    """Read an arrivals file with header ``worker_id,timestamp``."""
    records = []
    for lineno, (wid, ts) in _read_rows(path, ["worker_id", "timestamp"]):
        if not wid:
            raise DataFormatError(f"{path} line {lineno}: empty worker_id")
        records.append((wid, _parse_int(path, lineno, "timestamp", ts)))
    return ArrivalTrace(records=records)


def parse_truths(path) -> dict:
    """Read a truths file with header ``question_id,truth``."""
    truths = {}
    for lineno, (qid, truth) in _read_rows(path, ["question_id", "truth"]):
        if not qid:
            raise DataFormatError(f"{path} line {lineno}: empty question_id")
        if qid in truths:
            raise DataFormatError(f"{path} line {lineno}: duplicate truth for "
                                  f"question {qid!r}")
        truths[qid] = _parse_int(path, lineno, "truth", truth)
    return truths


def parse_labels(path, truth_path=None) -> LabelSet:
    """Read a labels file with header ``worker_id,question_id,choice``.

    A (worker, question) pair may appear at most once. When ``truth_path`` is
    given, every truth must reference a labeled question and a valid choice.
    """
    choices = {}
    worker_ids, question_ids = [], []
    seen_workers, seen_questions = set(), set()
    max_choice = 0
    for lineno, (wid, qid, choice) in _read_rows(
        path, ["worker_id", "question_id", "choice"]
    ):
        if not wid or not qid:
            raise DataFormatError(f"{path} line {lineno}: empty worker_id or "
                                  f"question_id")
        value = _parse_int(path, lineno, "choice", choice)
        if value < 0:
            raise DataFormatError(f"{path} line {lineno}: choice must be "
                                  f"non-negative, got {value}")
        if (wid, qid) in choices:
            raise DataFormatError(
                f"{path} line {lineno}: duplicate vote by worker {wid!r} on "
                f"question {qid!r}"
            )
        choices[(wid, qid)] = value
        max_choice = max(max_choice, value)
        if wid not in seen_workers:
            seen_workers.add(wid)
            worker_ids.append(wid)
        if qid not in seen_questions:
            seen_questions.add(qid)
            question_ids.append(qid)

    num_choices = max(2, max_choice + 1)
    truths = {}
    if truth_path is not None:
        truths = parse_truths(truth_path)
        for qid, truth in truths.items():
            if qid not in seen_questions:
                raise DataFormatError(
                    f"{truth_path}: truth for unknown question {qid!r}"
                )
            if not 0 <= truth < num_choices:
                raise DataFormatError(
                    f"{truth_path}: truth {truth} for question {qid!r} is "
                    f"outside the observed choice range"
                )
    return LabelSet(
        worker_ids=worker_ids,
        question_ids=question_ids,
        choices=choices,
        num_choices=num_choices,
        truths=truths,
    )


def match_and_schedule(labels: LabelSet, trace: ArrivalTrace, b: int, seed) -> BatchSchedule:
    """Pair each label worker with a distinct trace worker and bucket arrivals.

    The matching is drawn uniformly without replacement from the trace's
    distinct workers (seeded). Each matched trace worker's submission times
    become the label worker's arrival events; the matched events' time span is
    cut into b equal intervals, the last closed on the right.
    """
    if b < 1:
        raise ValueError(f"batch count must be at least 1, got {b}")
    label_workers = sorted(set(labels.worker_ids))
    trace_workers = trace.worker_ids
    if len(trace_workers) < len(label_workers):
        raise ValueError(
            f"trace has {len(trace_workers)} distinct workers but the label "
            f"set needs {len(label_workers)}"
        )
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(trace_workers), size=len(label_workers), replace=False)
    matching = {
        lw: trace_workers[int(i)] for lw, i in zip(label_workers, picks)
    }

    times = trace.by_worker()
    events = []
    for lw, tw in matching.items():
        for t in times[tw]:
            events.append((t, lw))
    events.sort()

    lo = events[0][0]
    hi = events[-1][0]
    width = (hi - lo) / b
    batches = [[] for _ in range(b)]
    for t, wid in events:
        idx = 0 if width == 0 else min(int((t - lo) / width), b - 1)
        batches[idx].append(wid)
    return BatchSchedule(b=b, batches=batches, matching=matching)


def majority_vote_accuracy(labels: LabelSet) -> float:
    """Accuracy of the per-question majority over all labels (ties: lowest
    choice index), measured against the attached truths."""
    if not labels.truths:
        raise ValueError("label set has no truths to score against")
    counts = {qid: np.zeros(labels.num_choices, dtype=int) for qid in labels.question_ids}
    for (wid, qid), choice in labels.choices.items():
        counts[qid][choice] += 1
    correct = sum(
        int(np.argmax(counts[qid]) == truth) for qid, truth in labels.truths.items()
    )
    return correct / len(labels.truths)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".6g")
    if x is None:
        return ""
    return str(x)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def _report_dict(report: SimReport) -> dict:
    return {
        "config": dict(report.config),
        "accuracy": report.accuracy,
        "required_batches": report.required_batches,
        "accuracy_se": report.accuracy_se,
        "required_batches_se": report.required_batches_se,
        "runs": [asdict(r) for r in report.runs],
    }


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def export_report(report: SimReport, path, format: str = "json") -> list:
    """Write a report to disk; returns the list of files written.

    JSON emits one file with the full nested report. CSV emits summary,
    per-batch, per-question, convergence, and plan files sharing the path as
    a prefix, floats at 6 significant digits. Identical reports always
    produce identical bytes.
    """
    prefix = str(path)
    if format == "json":
        target = prefix if prefix.endswith(".json") else prefix + ".json"
        with open(target, "w", encoding="utf-8") as fh:
            json.dump(_report_dict(report), fh, indent=2, sort_keys=True,
                      default=_json_default)
            fh.write("\n")
        return [target]
    if format != "csv":
        raise ValueError(f"format must be 'json' or 'csv', got {format!r}")

    if prefix.endswith(".csv"):
        prefix = prefix[:-4]
    written = []

    summary = prefix + "_summary.csv"
    _write_csv(
        summary,
        ["accuracy", "accuracy_se", "required_batches", "required_batches_se", "runs"],
        [[report.accuracy, report.accuracy_se, report.required_batches,
          report.required_batches_se, len(report.runs)]],
    )
    written.append(summary)

    batches = prefix + "_batches.csv"
    rows = []
    for run in report.runs:
        for batch_index, arrived, assigned, returned, overflow in run.per_batch:
            rows.append([run.run_index, batch_index, arrived, assigned, returned, overflow])
    _write_csv(
        batches,
        ["run_index", "batch_index", "arrived", "assigned", "returned", "overflow"],
        rows,
    )
    written.append(batches)

    questions = prefix + "_questions.csv"
    rows = []
    for run in report.runs:
        for q in run.per_question:
            rows.append([
                run.run_index, q["question_id"], q["returned_batch"],
                q["inferred"], q["truth"], q["correct"], q["repetitions"],
                q["forced"],
            ])
    _write_csv(
        questions,
        ["run_index", "question_id", "returned_batch", "inferred", "truth",
         "correct", "repetitions", "forced"],
        rows,
    )
    written.append(questions)

    convergence = prefix + "_convergence.csv"
    rows = []
    for run in report.runs:
        for batch_index, trace in enumerate(run.convergence_traces, start=1):
            for iteration, change in enumerate(trace, start=1):
                rows.append([run.run_index, batch_index, iteration, change])
    _write_csv(
        convergence,
        ["run_index", "batch_index", "external_iteration",
         "mean_abs_confidence_change"],
        rows,
    )
    written.append(convergence)

    plans = prefix + "_plans.csv"
    rows = []
    for run in report.runs:
        for batch_index, wid, qid, overflow in run.assignment_log:
            rows.append([run.run_index, batch_index, wid, qid, overflow])
    _write_csv(
        plans,
        ["run_index", "batch_index", "worker_id", "question_id", "overflow_flag"],
        rows,
    )
    written.append(plans)
    return written


def load_summary(path) -> dict:
    """Read back the headline numbers from an exported report.

    Accepts the JSON file or the CSV summary file produced by export_report.
    """
    text = str(path)
    if text.endswith(".json"):
        with open(text, encoding="utf-8") as fh:
            body = json.load(fh)
        return {
            "accuracy": body["accuracy"],
            "required_batches": body["required_batches"],
            "accuracy_se": body["accuracy_se"],
            "required_batches_se": body["required_batches_se"],
            "runs": len(body["runs"]),
        }
    with open(text, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        row = next(iter(reader))
    return {
        "accuracy": float(row["accuracy"]),
        "required_batches": float(row["required_batches"]),
        "accuracy_se": float(row["accuracy_se"]),
        "required_batches_se": float(row["required_batches_se"]),
        "runs": int(row["runs"]),
    }
