"""Per-batch packing of workers into questions.

A worker's vote is expected to raise a question's separation score by some
amount (the expected increase, one matrix cell per worker/question pair). Each
question has a remaining budget: the return threshold minus its current
separation score. A batch plan packs every arriving worker into as few
questions as possible without exceeding any budget. ``first_match`` and
``best_match`` are greedy heuristics; ``brute_force_oracle`` finds the true
optimum at test scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from numba import njit
from scipy.special import expit

from .inference import (
    QuestionState,
    WorkerState,
    logistic_confidences,
    pairwise_separation,
    selection_probability,
)

__all__ = [
    "AssignmentPlan",
    "E2IMatrix",
    "OracleResult",
    "RemainingScores",
    "answer_probability",
    "best_match",
    "brute_force_oracle",
    "build_e2i_matrix",
    "classify_experts",
    "expected_increase",
    "first_match",
    "helper_procedure",
    "remaining_scores",
]


@dataclass
class E2IMatrix:
    """Expected separation-score increase per (worker, question) pair.

    ``values`` is nonnegative (absolute value is part of the definition);
    ``signed`` keeps the pre-absolute sums for diagnostics. ``eligible`` is
    False where the worker has already answered the question.
    """

    values: np.ndarray
    worker_ids: list
    question_ids: list
    eligible: np.ndarray
    signed: np.ndarray = None


@dataclass
class RemainingScores:
    """Per-question budget delta - separation_score, aligned with question_ids."""

    question_ids: list
    values: np.ndarray
    delta: float

    def returnable(self) -> list:
        """Questions whose budget is exhausted (score at or past the threshold)."""
        return [qid for qid, v in zip(self.question_ids, self.values) if v <= 0.0]


@dataclass
class AssignmentPlan:
    """One batch's matching outcome.

    ``opened`` lists question ids in opening order. ``overflow_flags`` marks
    questions that knowingly exceeded their budget through the degenerate
    fallback (a worker who fit nowhere). ``unassigned`` lists workers whose
    eligibility mask ruled out every question.
    """

    assignments: dict
    opened: list
    overflow_flags: set = field(default_factory=set)
    unassigned: list = field(default_factory=list)
    seed_pair: tuple = None
    worker_order: list = field(default_factory=list)

    @property
    def num_opened(self) -> int:
        return len(self.opened)


@dataclass
class OracleResult:
    num_questions: int
    plan: AssignmentPlan
    total_feasible: bool
    max_placed: int

    def __iter__(self):
        # allows: count, plan = brute_force_oracle(...)
        return iter((self.num_questions, self.plan))


def remaining_scores(questions, delta: float) -> RemainingScores:
    """Budget left before each question hits the return threshold."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    qids = [q.question_id for q in questions]
    values = np.array([delta - q.easiness_score for q in questions], dtype=float)
    return RemainingScores(question_ids=qids, values=values, delta=delta)


def answer_probability(worker: WorkerState, question: QuestionState) -> np.ndarray:
    """Probability that the worker picks each answer, via the truth estimate.

    The worker picks the truth with probability p = sigmoid(e * d) and any
    specific wrong answer with probability (1-p)/(l-1); marginalizing over the
    current confidences gives p*c_k + (1-p)/(l-1)*(1-c_k) per answer.
    """
    p = selection_probability(worker.expertise, question.easiness)
    c = np.asarray(question.confidences, dtype=float)
    return p * c + (1.0 - p) / (question.num_choices - 1) * (1.0 - c)


def _hypothetical_separations(question: QuestionState, score_bump: float):
    """Separation score with the bump added to each answer in turn.

    Returns (per-choice separations, baseline separation), both recomputed
    through the same logistic + normalization pipeline so that a zero bump
    yields an exactly zero difference. The influence adjustment is not
    re-applied: the stored scores already carry it.
    """
    base = np.asarray(question.confidence_scores, dtype=float)
    d = question.easiness
    baseline = pairwise_separation(logistic_confidences(base, d))
    seps = np.empty(question.num_choices)
    for k in range(question.num_choices):
        hyp = base.copy()
        hyp[k] += score_bump
        seps[k] = pairwise_separation(logistic_confidences(hyp, d))
    return seps, baseline


def expected_increase(
    worker: WorkerState, question: QuestionState, signed: bool = False
) -> float:
    """Expected separation-score increase if the worker votes on the question.

    Averages the per-choice increase under the worker's answer distribution
    and takes the absolute value (unless ``signed``). Raises if the worker
    already answered the question; such pairs are masked upstream.
    """
    if question.question_id in worker.answered:
        raise ValueError(
            f"worker {worker.worker_id!r} already answered question "
            f"{question.question_id!r}"
        )
    seps, baseline = _hypothetical_separations(question, worker.expertise_score)
    increases = seps - baseline
    total = float(np.dot(answer_probability(worker, question), increases))
    return total if signed else abs(total)


@njit(cache=True)
def _e2i_kernel(wscores, wexpertise, qscores, qconf, qeasiness, qnum):
    n = wscores.shape[0]
    m = qnum.shape[0]
    lmax = qscores.shape[1]
    values = np.zeros((n, m))
    signed = np.zeros((n, m))
    pre = np.empty(lmax)
    conf = np.empty(lmax)
    base_conf = np.empty(lmax)

    for j in range(m):
        l = qnum[j]
        d = qeasiness[j]
        pairs = l * (l - 1) // 2

        total = 0.0
        for a in range(l):
            pre[a] = d / (1.0 + np.exp(-qscores[j, a]))
            total += pre[a]
        for a in range(l):
            base_conf[a] = pre[a] / total
        baseline = 0.0
        for a in range(l):
            for b in range(a + 1, l):
                baseline += abs(base_conf[a] - base_conf[b])
        baseline /= pairs

        for i in range(n):
            p = 1.0 / (1.0 + np.exp(-wexpertise[i] * d))
            expected = 0.0
            for k in range(l):
                for a in range(l):
                    conf[a] = pre[a]
                conf[k] = d / (1.0 + np.exp(-(qscores[j, k] + wscores[i])))
                total_k = 0.0
                for a in range(l):
                    total_k += conf[a]
                for a in range(l):
                    conf[a] /= total_k
                sep = 0.0
                for a in range(l):
                    for b in range(a + 1, l):
                        sep += abs(conf[a] - conf[b])
                sep /= pairs
                prob_k = p * qconf[j, k] + (1.0 - p) / (l - 1) * (1.0 - qconf[j, k])
                expected += prob_k * (sep - baseline)
            signed[i, j] = expected
            values[i, j] = abs(expected)
    return values, signed


def build_e2i_matrix(workers, questions) -> E2IMatrix:
    """Expected-increase matrix for a worker list against a question list.

    Computed in a compiled kernel, one cell per worker/question pair; agrees
    with ``expected_increase`` to floating-point noise. Cells where the worker
    already answered are masked ineligible (their values are computed anyway
    but must not be used).
    """
    workers = list(workers)
    questions = list(questions)
    n, m = len(workers), len(questions)
    wscores = np.array([w.expertise_score for w in workers], dtype=float)
    wexpertise = np.array([w.expertise for w in workers], dtype=float)

    if n and m:
        lmax = max(q.num_choices for q in questions)
        qnum = np.array([q.num_choices for q in questions], dtype=np.int64)
        qscores = np.zeros((m, lmax))
        qconf = np.zeros((m, lmax))
        qeasiness = np.array([q.easiness for q in questions], dtype=float)
        for j, q in enumerate(questions):
            qscores[j, : q.num_choices] = q.confidence_scores
            qconf[j, : q.num_choices] = q.confidences
        values, signed = _e2i_kernel(wscores, wexpertise, qscores, qconf, qeasiness, qnum)
    else:
        values = np.zeros((n, m))
        signed = np.zeros((n, m))

    eligible = np.ones((n, m), dtype=bool)
    for i, w in enumerate(workers):
        for j, q in enumerate(questions):
            if q.question_id in w.answered:
                eligible[i, j] = False

    wids = [w.worker_id for w in workers]
    qids = [q.question_id for q in questions]
    return E2IMatrix(
        values=values, worker_ids=wids, question_ids=qids, eligible=eligible, signed=signed
    )


def _check_alignment(e2i: E2IMatrix, budgets: RemainingScores) -> None:
    if list(budgets.question_ids) != list(e2i.question_ids):
        raise ValueError("remaining scores are not aligned with the matrix columns")


def _greedy_match(e2i: E2IMatrix, budgets: RemainingScores, rng, best_fit: bool):
    """Shared core of first_match and best_match.

    The worker-question pair with globally minimal slack (budget minus
    expected increase) is assigned first; remaining workers are processed in
    seeded random order. Each worker goes to a fitting open question (earliest
    opened, or tightest fit under ``best_fit``), else opens the fitting closed
    question with minimal slack, else falls back to the question with the most
    budget left and is flagged as overflow.
    """
    _check_alignment(e2i, budgets)
    if rng is None:
        rng = np.random.default_rng(0)
    values = e2i.values
    eligible = e2i.eligible
    n, m = values.shape
    wids = e2i.worker_ids
    qids = e2i.question_ids

    plan = AssignmentPlan(assignments={}, opened=[])
    if n == 0:
        return plan
    if m == 0:
        warnings.warn("no assignable questions; every worker is left idle")
        plan.unassigned = list(wids)
        return plan

    rem = np.asarray(budgets.values, dtype=float).copy()

    slack = np.where(eligible, rem[None, :] - values, np.inf)
    if np.isfinite(slack).any():
        # np.argmin takes the first minimum in row-major order: lowest worker
        # index, then lowest question index
        seed_i, seed_j = divmod(int(np.argmin(slack)), m)
        plan.seed_pair = (wids[seed_i], qids[seed_j])
        rest = [i for i in range(n) if i != seed_i]
        order = [seed_i] + [rest[p] for p in rng.permutation(len(rest))]
    else:
        order = list(rng.permutation(n))
    plan.worker_order = [wids[i] for i in order]

    opened = []  # column indices in opening order
    open_rank = {}

    for i in order:
        target = None
        fitting_open = [
            j for j in opened if eligible[i, j] and rem[j] - values[i, j] >= 0.0
        ]
        if fitting_open:
            if best_fit:
                target = min(
                    fitting_open, key=lambda j: (rem[j] - values[i, j], open_rank[j])
                )
            else:
                target = fitting_open[0]
        else:
            fitting_closed = [
                j
                for j in range(m)
                if j not in open_rank and eligible[i, j] and rem[j] - values[i, j] >= 0.0
            ]
            if fitting_closed:
                target = min(fitting_closed, key=lambda j: (rem[j] - values[i, j], j))
            else:
                candidates = np.nonzero(eligible[i])[0]
                if candidates.size == 0:
                    plan.unassigned.append(wids[i])
                    continue
                target = int(min(candidates, key=lambda j: (-rem[j], j)))
                plan.overflow_flags.add(qids[target])
        if target not in open_rank:
            open_rank[target] = len(opened)
            opened.append(target)
        plan.assignments[wids[i]] = qids[target]
        rem[target] -= values[i, target]

    plan.opened = [qids[j] for j in opened]
    return plan


def first_match(e2i: E2IMatrix, budgets: RemainingScores, rng=None) -> AssignmentPlan:
    """Greedy packing where a worker takes the earliest-opened fitting question."""
    return _greedy_match(e2i, budgets, rng, best_fit=False)


def best_match(e2i: E2IMatrix, budgets: RemainingScores, rng=None) -> AssignmentPlan:
    """Greedy packing where a worker takes the open question they fit tightest."""
    return _greedy_match(e2i, budgets, rng, best_fit=True)


MAX_ORACLE_WORKERS = 8
MAX_ORACLE_QUESTIONS = 6


def brute_force_oracle(e2i: E2IMatrix, budgets: RemainingScores) -> OracleResult:
    """Minimum number of questions that can absorb every worker feasibly.

    Searches subsets of questions in increasing size; the first size admitting
    a full packing is optimal. When no total feasible assignment exists, the
    maximum number of feasibly placeable workers is reported instead, with one
    maximizing plan. Exhaustive: refuses instances beyond test scale.
    """
    _check_alignment(e2i, budgets)
    values = e2i.values
    eligible = e2i.eligible
    n, m = values.shape
    if n > MAX_ORACLE_WORKERS or m > MAX_ORACLE_QUESTIONS:
        raise ValueError(
            f"instance {n}x{m} beyond oracle scale "
            f"({MAX_ORACLE_WORKERS}x{MAX_ORACLE_QUESTIONS})"
        )
    wids = e2i.worker_ids
    qids = e2i.question_ids
    caps = np.asarray(budgets.values, dtype=float)

    if n == 0:
        return OracleResult(0, AssignmentPlan({}, []), True, 0)

    def pack(cols):
        # DFS: can all workers fit into these columns?
        rem = {j: caps[j] for j in cols}
        choice = {}

        def rec(i):
            if i == n:
                return True
            for j in cols:
                if eligible[i, j] and values[i, j] <= rem[j]:
                    rem[j] -= values[i, j]
                    choice[i] = j
                    if rec(i + 1):
                        return True
                    rem[j] += values[i, j]
            return False

        return choice if rec(0) else None

    min_demand = [
        min((values[i, j] for j in range(m) if eligible[i, j]), default=np.inf)
        for i in range(n)
    ]
    for size in range(1, min(n, m) + 1):
        for cols in combinations(range(m), size):
            if caps[list(cols)].sum() < sum(min_demand):
                continue
            if any(not any(eligible[i, j] for j in cols) for i in range(n)):
                continue
            choice = pack(cols)
            if choice is not None:
                used = sorted(set(choice.values()))
                plan = AssignmentPlan(
                    assignments={wids[i]: qids[j] for i, j in choice.items()},
                    opened=[qids[j] for j in used],
                )
                return OracleResult(len(used), plan, True, n)

    # no total assignment: maximize the number of placed workers
    best = {"count": -1, "choice": {}}
    rem = caps.copy()

    def rec_partial(i, placed, choice):
        if placed + (n - i) <= best["count"]:
            return
        if i == n:
            if placed > best["count"]:
                best["count"] = placed
                best["choice"] = dict(choice)
            return
        for j in range(m):
            if eligible[i, j] and values[i, j] <= rem[j]:
                rem[j] -= values[i, j]
                choice[i] = j
                rec_partial(i + 1, placed + 1, choice)
                del choice[i]
                rem[j] += values[i, j]
        rec_partial(i + 1, placed, choice)  # leave worker i unplaced

    rec_partial(0, 0, {})
    choice = best["choice"]
    used = sorted(set(choice.values()))
    plan = AssignmentPlan(
        assignments={wids[i]: qids[j] for i, j in choice.items()},
        opened=[qids[j] for j in used],
        unassigned=[wids[i] for i in range(n) if i not in choice],
    )
    return OracleResult(len(used), plan, False, best["count"])


def helper_procedure(groups, question_ids, e2i: E2IMatrix, budgets: RemainingScores):
    """Consolidation pass used to verify the packing bound.

    ``groups[i]`` lists the worker ids assigned to ``question_ids[i]``, in
    opening order. For each position i from the front, one worker (smallest
    expected increase toward its current question) is pulled down from the
    highest-indexed nonempty group; the walk stops when that group index
    reaches the front position. Returns the modified groups and the number of
    groups whose summed expected increase exceeds their question's budget.
    """
    _check_alignment(e2i, budgets)
    w_row = {wid: i for i, wid in enumerate(e2i.worker_ids)}
    q_col = {qid: j for j, qid in enumerate(e2i.question_ids)}
    groups = [list(g) for g in groups]
    v = len(groups)

    for i in range(v - 1):
        top = max((j for j in range(v) if groups[j]), default=-1)
        if top <= i:
            break
        col = q_col[question_ids[top]]
        mover = min(groups[top], key=lambda wid: (e2i.values[w_row[wid], col], w_row[wid]))
        groups[top].remove(mover)
        groups[i].append(mover)

    overused = 0
    for i, qid in enumerate(question_ids):
        col = q_col[qid]
        load = sum(e2i.values[w_row[wid], col] for wid in groups[i])
        if load > budgets.values[col]:
            overused += 1
    return groups, overused


def classify_experts(e2i: E2IMatrix, budgets: RemainingScores, plan: AssignmentPlan):
    """Expert flags per worker and N/E type per opened question.

    A worker is an expert when their expected increase is at least half the
    budget of every opened question; a question is Type E when at least one
    assigned worker is an expert, else Type N. Budgets are the batch-start
    values, not the post-assignment leftovers.
    """
    _check_alignment(e2i, budgets)
    q_col = {qid: j for j, qid in enumerate(e2i.question_ids)}
    opened_cols = [q_col[qid] for qid in plan.opened]

    experts = {}
    for i, wid in enumerate(e2i.worker_ids):
        experts[wid] = all(
            e2i.values[i, j] >= budgets.values[j] / 2.0 for j in opened_cols
        )

    question_types = {}
    for qid in plan.opened:
        assigned = [wid for wid, q in plan.assignments.items() if q == qid]
        question_types[qid] = "E" if any(experts[wid] for wid in assigned) else "N"
    return experts, question_types
