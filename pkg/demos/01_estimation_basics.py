"""Walk through the answer-estimation core on a hand-sized vote corpus.

Three workers vote on three binary questions with one disagreement. The
estimator couples the two directions: confident answers raise their voters'
expertise, and expert votes sharpen answer confidences.
"""

import numpy as np

from crowdbatch import (
    EstimatorConfig,
    QuestionState,
    Vote,
    WorkerState,
    run_estimation,
)


def show(questions, workers):
    for q in questions.values():
        conf = ", ".join(f"{c:.3f}" for c in q.confidences)
        print(f"  question {q.question_id}: confidences [{conf}] "
              f"separation {q.easiness_score:.3f}")
    for w in workers.values():
        print(f"  worker {w.worker_id}: expertise {w.expertise:.3f} "
              f"(score {w.expertise_score:.3f})")


def main():
    questions = {qid: QuestionState(qid, 2) for qid in "abc"}
    workers = {wid: WorkerState(wid) for wid in (1, 2, 3)}
    votes = [
        Vote(1, "a", 0), Vote(2, "a", 0), Vote(3, "a", 1),
        Vote(1, "b", 1), Vote(2, "b", 1),
        Vote(3, "c", 0),
    ]

    print("corpus:", ", ".join(f"w{v.worker_id}->{v.question_id}:{v.choice}"
                               for v in votes))
    trace = run_estimation(questions, workers, votes, EstimatorConfig())
    print(f"\nestimates after {trace.iterations} external iterations "
          f"(stopped early: {trace.converged_early}):")
    show(questions, workers)

    print("\nmean confidence change per external iteration:")
    print(" ", np.array2string(np.array(trace.mean_abs_changes), precision=6))
    print("\nworker 3 dissented on the majority question, so their expertise"
          "\nand the weight of their solo vote on question c both sag.")


if __name__ == "__main__":
    main()
