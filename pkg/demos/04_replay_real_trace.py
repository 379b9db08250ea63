"""Replay a labeling campaign from CSV files end to end.

Generates a small campaign on disk (an arrival trace, a full label matrix,
and a truth file), then drives the whole pipeline: parse, match label workers
to trace workers, bucket arrivals into batches, replay the batches through
the packer, and compare against an unweighted majority vote over the full
matrix. The label matrix contains a block of hard questions where most
workers are wrong, which is exactly where weighting by inferred expertise
pays off.
"""

import csv
import tempfile
from pathlib import Path

import numpy as np

from crowdbatch import (
    SimConfig,
    majority_vote_accuracy,
    match_and_schedule,
    parse_arrivals,
    parse_labels,
    run_replay,
)

WORKERS = 25
QUESTIONS = 40
HARD = 20  # first questions answered correctly with p=0.33 only
DAY = 86400


def write_campaign(directory):
    rng = np.random.default_rng(5)
    qids = [f"q{j:02d}" for j in range(QUESTIONS)]
    truths = {q: int(rng.integers(2)) for q in qids}
    with open(directory / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["worker_id", "question_id", "choice"])
        for i in range(WORKERS):
            for j, q in enumerate(qids):
                p = 0.33 if j < HARD else 0.85
                vote = truths[q] if rng.random() < p else 1 - truths[q]
                writer.writerow([f"w{i:02d}", q, vote])
    with open(directory / "truths.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["question_id", "truth"])
        writer.writerows(sorted(truths.items()))
    with open(directory / "arrivals.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["worker_id", "timestamp"])
        for i in range(30):
            for _ in range(int(rng.integers(8, 15))):
                writer.writerow([f"t{i:02d}", int(rng.integers(0, 10 * DAY))])
    return (directory / "arrivals.csv", directory / "labels.csv",
            directory / "truths.csv")


def main():
    with tempfile.TemporaryDirectory() as td:
        arrivals_path, labels_path, truths_path = write_campaign(Path(td))
        trace = parse_arrivals(arrivals_path)
        labels = parse_labels(labels_path, truths_path)
        lo, hi = trace.span
        print(f"trace: {len(trace.records)} events from "
              f"{len(trace.worker_ids)} workers over {(hi - lo) / DAY:.1f} days")
        print(f"labels: {len(labels.choices)} votes, "
              f"{len(labels.worker_ids)} workers x {len(labels.question_ids)} "
              f"questions")

        schedule = match_and_schedule(labels, trace, b=10, seed=0)
        sizes = [len(batch) for batch in schedule.batches]
        print(f"schedule: {len(sizes)} batches, arrivals per batch {sizes}")

        config = SimConfig(
            num_questions=QUESTIONS, delta=0.95, max_batches=10,
            algorithm="fm", runs=5, seed=0,
        )
        report = run_replay(trace, labels, config)
        majority = majority_vote_accuracy(labels)
        print(f"\nreplayed accuracy {report.accuracy:.4f} "
              f"(+-{report.accuracy_se:.4f} over {len(report.runs)} runs)")
        print(f"full-matrix majority vote {majority:.4f}")
        print("\non the hard block the crowd is reliably wrong, so piling all")
        print(f"{WORKERS} votes into a majority locks in the wrong answer;")
        print("the replay decides from a handful of expertise-weighted votes")
        print("and stays closer to a coin flip there, which wins overall.")


if __name__ == "__main__":
    main()
