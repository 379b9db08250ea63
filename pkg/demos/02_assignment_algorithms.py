"""Compare the two greedy packers against the exhaustive oracle.

The classic two-worker instance: both workers together fit into question 0,
but any greedy that seeds on the tightest slack splits them across two
questions. The oracle proves one question suffices.
"""

import numpy as np

from crowdbatch import (
    E2IMatrix,
    RemainingScores,
    best_match,
    brute_force_oracle,
    classify_experts,
    first_match,
)


def instance(values, budgets):
    values = np.asarray(values, dtype=float)
    n, m = values.shape
    e2i = E2IMatrix(values=values, worker_ids=list(range(n)),
                    question_ids=list(range(m)),
                    eligible=np.ones((n, m), dtype=bool))
    c = RemainingScores(question_ids=list(range(m)),
                        values=np.asarray(budgets, dtype=float), delta=0.5)
    return e2i, c


def describe(name, plan):
    print(f"  {name}: opens {plan.num_opened} question(s) "
          f"{plan.opened}, assignments {plan.assignments}"
          + (f", overflow on {sorted(plan.overflow_flags)}"
             if plan.overflow_flags else ""))


def main():
    e2i, c = instance([[0.2, 0.2], [0.1, 0.1]], [0.35, 0.25])
    print("expected score increases:\n", e2i.values)
    print("remaining budgets:", c.values)

    rng = np.random.default_rng(0)
    fm = first_match(e2i, c, rng)
    bm = best_match(e2i, c, rng)
    oracle = brute_force_oracle(e2i, c)
    describe("first-match", fm)
    describe("best-match ", bm)
    describe("oracle     ", oracle.plan)

    experts, qtypes = classify_experts(e2i, c, fm)
    print(f"  expert workers: {experts}, question types: {qtypes}")

    print("\nlarger random instance (6 workers x 4 questions):")
    rng = np.random.default_rng(7)
    e2i, c = instance(rng.uniform(0.02, 0.25, (6, 4)), rng.uniform(0.3, 0.6, 4))
    for name, plan in (("first-match", first_match(e2i, c, rng)),
                       ("best-match ", best_match(e2i, c, rng)),
                       ("oracle     ", brute_force_oracle(e2i, c).plan)):
        describe(name, plan)


if __name__ == "__main__":
    main()
