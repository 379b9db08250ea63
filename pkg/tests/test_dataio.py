"""File ingestion, schedule construction, and report export."""

import json
import time

import numpy as np
import pytest

from crowdbatch.dataio import (
    ArrivalTrace,
    DataFormatError,
    LabelSet,
    export_report,
    load_summary,
    majority_vote_accuracy,
    match_and_schedule,
    parse_arrivals,
    parse_labels,
    parse_truths,
)
from crowdbatch.simulator import SimConfig, SimReport, run_simulation

from fixture_builders import (
    DUCK_QUESTIONS,
    DUCK_WORKERS,
    SPAN_SECONDS,
    TRACE_START,
    write_bulk_arrivals,
    write_replay_fixture,
)


def write_lines(path, *lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


class TestParseArrivals:
    def test_two_row_fixture(self, tmp_path):
        p = write_lines(tmp_path / "a.csv", "worker_id,timestamp",
                        "alice,100", "bob,250")
        trace = parse_arrivals(p)
        assert trace.records == [("alice", 100), ("bob", 250)]
        assert trace.span == (100, 250)
        assert trace.worker_ids == ["alice", "bob"]

    def test_empty_timestamp_names_line_2(self, tmp_path):
        p = write_lines(tmp_path / "a.csv", "worker_id,timestamp", "alice,")
        with pytest.raises(DataFormatError, match="line 2"):
            parse_arrivals(p)

    def test_non_numeric_timestamp_names_line(self, tmp_path):
        p = write_lines(tmp_path / "a.csv", "worker_id,timestamp",
                        "alice,100", "bob,soon")
        with pytest.raises(DataFormatError, match="line 3"):
            parse_arrivals(p)

    def test_bad_header_rejected(self, tmp_path):
        p = write_lines(tmp_path / "a.csv", "who,when", "alice,100")
        with pytest.raises(DataFormatError, match="header"):
            parse_arrivals(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataFormatError, match="cannot open"):
            parse_arrivals(tmp_path / "nope.csv")

    def test_wrong_field_count_names_line(self, tmp_path):
        p = write_lines(tmp_path / "a.csv", "worker_id,timestamp", "alice,1,2")
        with pytest.raises(DataFormatError, match="line 2"):
            parse_arrivals(p)

    def test_bulk_file_parses_fast(self, tmp_path):
        p = write_bulk_arrivals(tmp_path / "big.csv")
        start = time.perf_counter()
        trace = parse_arrivals(p)
        elapsed = time.perf_counter() - start
        assert len(trace.records) == 18_062
        assert elapsed < 1.0

    def test_empty_trace_span_errors(self):
        with pytest.raises(ValueError):
            ArrivalTrace(records=[]).span


class TestParseLabels:
    def test_full_matrix_counts(self, tmp_path):
        _, labels_path, truths_path = write_replay_fixture(tmp_path)
        labels = parse_labels(labels_path, truths_path)
        assert len(labels.choices) == DUCK_WORKERS * DUCK_QUESTIONS == 4212
        assert len(labels.worker_ids) == DUCK_WORKERS
        assert len(labels.question_ids) == DUCK_QUESTIONS
        assert labels.num_choices == 2
        assert len(labels.truths) == DUCK_QUESTIONS

    def test_duplicate_pair_rejected(self, tmp_path):
        p = write_lines(tmp_path / "l.csv", "worker_id,question_id,choice",
                        "w1,q1,0", "w1,q1,1")
        with pytest.raises(DataFormatError, match="line 3"):
            parse_labels(p)

    def test_empty_truth_file_gives_no_truths(self, tmp_path):
        lp = write_lines(tmp_path / "l.csv", "worker_id,question_id,choice",
                         "w1,q1,0")
        tp = write_lines(tmp_path / "t.csv", "question_id,truth")
        labels = parse_labels(lp, tp)
        assert labels.truths == {}

    def test_unknown_question_in_truths_rejected(self, tmp_path):
        lp = write_lines(tmp_path / "l.csv", "worker_id,question_id,choice",
                         "w1,q1,0")
        tp = write_lines(tmp_path / "t.csv", "question_id,truth", "q9,0")
        with pytest.raises(DataFormatError, match="unknown question"):
            parse_labels(lp, tp)

    def test_truth_out_of_choice_range_rejected(self, tmp_path):
        lp = write_lines(tmp_path / "l.csv", "worker_id,question_id,choice",
                         "w1,q1,0", "w2,q1,1")
        tp = write_lines(tmp_path / "t.csv", "question_id,truth", "q1,5")
        with pytest.raises(DataFormatError, match="range"):
            parse_labels(lp, tp)

    def test_negative_choice_rejected(self, tmp_path):
        lp = write_lines(tmp_path / "l.csv", "worker_id,question_id,choice",
                         "w1,q1,-2")
        with pytest.raises(DataFormatError, match="non-negative"):
            parse_labels(lp)

    def test_duplicate_truth_rejected(self, tmp_path):
        tp = write_lines(tmp_path / "t.csv", "question_id,truth",
                         "q1,0", "q1,1")
        with pytest.raises(DataFormatError, match="duplicate"):
            parse_truths(tp)


def toy_labels(workers=4, questions=3):
    qids = [f"q{j}" for j in range(questions)]
    wids = [f"w{i}" for i in range(workers)]
    choices = {(w, q): 0 for w in wids for q in qids}
    return LabelSet(worker_ids=wids, question_ids=qids, choices=choices,
                    num_choices=2, truths={q: 0 for q in qids})


class TestMatchAndSchedule:
    def trace_for(self, n_workers, events_each=3, step=1000):
        records = []
        for i in range(n_workers):
            for e in range(events_each):
                records.append((f"t{i}", TRACE_START + i * step + e * 17))
        return ArrivalTrace(records=records)

    def test_single_batch_collects_everything(self):
        labels = toy_labels()
        trace = self.trace_for(6)
        schedule = match_and_schedule(labels, trace, 1, seed=0)
        assert schedule.b == 1
        assert len(schedule.batches) == 1
        assert len(schedule.batches[0]) == 4 * 3  # every matched event

    def test_same_seed_same_schedule(self):
        labels = toy_labels()
        trace = self.trace_for(6)
        a = match_and_schedule(labels, trace, 5, seed=42)
        b = match_and_schedule(labels, trace, 5, seed=42)
        assert a.batches == b.batches
        assert a.matching == b.matching

    def test_different_seeds_can_differ(self):
        labels = toy_labels()
        trace = self.trace_for(10)
        a = match_and_schedule(labels, trace, 5, seed=1)
        b = match_and_schedule(labels, trace, 5, seed=2)
        assert a.matching != b.matching

    def test_matching_is_injective_and_preserves_events(self):
        labels = toy_labels()
        trace = self.trace_for(7, events_each=4)
        schedule = match_and_schedule(labels, trace, 3, seed=5)
        assert len(set(schedule.matching.values())) == len(schedule.matching)
        by_worker = trace.by_worker()
        counts = {}
        for batch in schedule.batches:
            for wid in batch:
                counts[wid] = counts.get(wid, 0) + 1
        for lw, tw in schedule.matching.items():
            assert counts[lw] == len(by_worker[tw])

    def test_too_few_trace_workers_rejected(self):
        labels = toy_labels(workers=5)
        trace = self.trace_for(3)
        with pytest.raises(ValueError, match="distinct workers"):
            match_and_schedule(labels, trace, 4, seed=0)

    def test_bad_batch_count_rejected(self):
        with pytest.raises(ValueError):
            match_and_schedule(toy_labels(), self.trace_for(5), 0, seed=0)

    def test_twenty_day_span_buckets_by_day(self, tmp_path):
        arrivals_path, labels_path, truths_path = write_replay_fixture(tmp_path)
        trace = parse_arrivals(arrivals_path)
        labels = parse_labels(labels_path, truths_path)
        schedule = match_and_schedule(labels, trace, 20, seed=3)
        lo, hi = trace.span
        assert hi - lo <= SPAN_SECONDS
        assert len(schedule.batches) == 20
        assert sum(len(b) for b in schedule.batches) > 0
        # events of the matched workers land in their day-of-span bucket
        by_worker = trace.by_worker()
        width = None
        events = sorted(
            t for lw, tw in schedule.matching.items() for t in by_worker[tw]
        )
        width = (events[-1] - events[0]) / 20
        seen = []
        for idx, batch in enumerate(schedule.batches):
            seen.extend([idx] * len(batch))
        expected = [
            min(int((t - events[0]) / width), 19) if width else 0 for t in events
        ]
        assert sorted(seen) == sorted(expected)


class TestMajorityVote:
    def test_hand_fixture(self):
        labels = LabelSet(
            worker_ids=["w1", "w2", "w3"],
            question_ids=["q1", "q2"],
            choices={
                ("w1", "q1"): 0, ("w2", "q1"): 0, ("w3", "q1"): 1,
                ("w1", "q2"): 1, ("w2", "q2"): 0, ("w3", "q2"): 1,
            },
            num_choices=2,
            truths={"q1": 0, "q2": 0},
        )
        # q1 majority 0 (correct), q2 majority 1 (wrong)
        assert majority_vote_accuracy(labels) == 0.5

    def test_tie_goes_to_lowest_choice(self):
        labels = LabelSet(
            worker_ids=["w1", "w2"],
            question_ids=["q1"],
            choices={("w1", "q1"): 0, ("w2", "q1"): 1},
            num_choices=2,
            truths={"q1": 0},
        )
        assert majority_vote_accuracy(labels) == 1.0

    def test_requires_truths(self):
        labels = toy_labels()
        labels.truths = {}
        with pytest.raises(ValueError):
            majority_vote_accuracy(labels)


@pytest.fixture(scope="module")
def small_report():
    return run_simulation(SimConfig(num_questions=6, max_batches=0, runs=2, seed=3))


class TestExport:
    def test_json_round_trip_exact(self, tmp_path, small_report):
        path = export_report(small_report, tmp_path / "r", "json")[0]
        summary = load_summary(path)
        assert summary["accuracy"] == small_report.accuracy
        assert summary["required_batches"] == small_report.required_batches
        body = json.loads(open(path, encoding="utf-8").read())
        assert len(body["runs"]) == 2
        assert body["config"]["num_questions"] == 6

    def test_double_export_byte_identical(self, tmp_path, small_report):
        a = export_report(small_report, tmp_path / "a", "json")[0]
        b = export_report(small_report, tmp_path / "b", "json")[0]
        assert open(a, "rb").read() == open(b, "rb").read()
        ca = export_report(small_report, tmp_path / "ca", "csv")
        cb = export_report(small_report, tmp_path / "cb", "csv")
        for fa, fb in zip(ca, cb):
            assert open(fa, "rb").read() == open(fb, "rb").read()

    def test_csv_summary_six_significant_digits(self, tmp_path, small_report):
        files = export_report(small_report, tmp_path / "r", "csv")
        summary_path = [f for f in files if f.endswith("_summary.csv")][0]
        summary = load_summary(summary_path)
        assert summary["accuracy"] == float(format(small_report.accuracy, ".6g"))
        assert summary["runs"] == 2

    def test_csv_detail_files_have_rows(self, tmp_path, small_report):
        files = export_report(small_report, tmp_path / "r", "csv")
        names = {f.rsplit("_", 1)[-1] for f in files}
        assert names == {"summary.csv", "batches.csv", "questions.csv",
                         "convergence.csv", "plans.csv"}
        questions_path = [f for f in files if "questions" in f][0]
        rows = open(questions_path, encoding="utf-8").read().strip().split("\n")
        assert len(rows) == 1 + 2 * 6  # header + runs x questions
        convergence_path = [f for f in files if "convergence" in f][0]
        header = open(convergence_path, encoding="utf-8").readline().strip()
        assert header == ("run_index,batch_index,external_iteration,"
                          "mean_abs_confidence_change")

    def test_empty_report_is_valid(self, tmp_path):
        empty = SimReport(config={}, accuracy=0.0, required_batches=0.0,
                          accuracy_se=0.0, required_batches_se=0.0, runs=[])
        for fmt in ("json", "csv"):
            files = export_report(empty, tmp_path / f"e_{fmt}", fmt)
            for f in files:
                text = open(f, encoding="utf-8").read()
                assert text
        files = export_report(empty, tmp_path / "e2", "csv")
        batches = [f for f in files if "batches" in f][0]
        assert len(open(batches, encoding="utf-8").read().strip().split("\n")) == 1

    def test_unknown_format_rejected(self, tmp_path, small_report):
        with pytest.raises(ValueError):
            export_report(small_report, tmp_path / "r", "xml")

    def test_sources_untouched_by_ingestion(self, tmp_path):
        arrivals_path, labels_path, truths_path = write_replay_fixture(tmp_path)
        before = {p: open(p, "rb").read()
                  for p in (arrivals_path, labels_path, truths_path)}
        parse_labels(labels_path, truths_path)
        parse_arrivals(arrivals_path)
        after = {p: open(p, "rb").read()
                 for p in (arrivals_path, labels_path, truths_path)}
        assert before == after
