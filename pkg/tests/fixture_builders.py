"""Deterministic file fixtures shared by the dataio, cli, and acceptance tests.

The replay fixture mimics a desk-scale labeling campaign: a full 39 x 108
binary label matrix over a 20-day arrival trace. A block of hard questions
(most workers wrong) keeps the full-matrix majority vote weak, which is the
regime where few-vote adaptive decisions can beat it.
"""

import csv

import numpy as np

DUCK_WORKERS = 39
DUCK_QUESTIONS = 108
TRAP_QUESTIONS = 60
P_TRAP = 0.35
P_EASY = 0.85
TRACE_WORKERS = 45
SPAN_SECONDS = 20 * 86400
TRACE_START = 1_600_000_000


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def build_label_rows(seed=1):
    """Label, truth, and arrival rows for the desk-scale replay fixture."""
    rng = np.random.default_rng(seed)
    qids = [f"q{j:03d}" for j in range(DUCK_QUESTIONS)]
    truths = {qid: int(rng.integers(2)) for qid in qids}
    label_rows = []
    for i in range(DUCK_WORKERS):
        for j, qid in enumerate(qids):
            p = P_TRAP if j < TRAP_QUESTIONS else P_EASY
            t = truths[qid]
            choice = t if rng.random() < p else 1 - t
            label_rows.append([f"w{i:02d}", qid, choice])
    truth_rows = [[qid, truths[qid]] for qid in qids]
    arrival_rows = []
    for i in range(TRACE_WORKERS):
        for _ in range(int(rng.integers(20, 34))):
            t = TRACE_START + int(rng.integers(0, SPAN_SECONDS))
            arrival_rows.append([f"t{i:02d}", t])
    return label_rows, truth_rows, arrival_rows


def write_replay_fixture(directory, seed=1):
    """Write arrivals/labels/truths CSVs; returns their paths."""
    label_rows, truth_rows, arrival_rows = build_label_rows(seed)
    arrivals = str(directory / "arrivals.csv")
    labels = str(directory / "labels.csv")
    truths = str(directory / "truths.csv")
    _write_csv(arrivals, ["worker_id", "timestamp"], arrival_rows)
    _write_csv(labels, ["worker_id", "question_id", "choice"], label_rows)
    _write_csv(truths, ["question_id", "truth"], truth_rows)
    return arrivals, labels, truths


def write_bulk_arrivals(path, rows=18_062, seed=7):
    """Large arrival file for the parser throughput check."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(rows):
        wid = f"t{int(rng.integers(0, 500)):03d}"
        out.append([wid, TRACE_START + int(rng.integers(0, SPAN_SECONDS))])
    _write_csv(str(path), ["worker_id", "timestamp"], out)
    return str(path)
