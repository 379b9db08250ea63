"""Joint estimation of worker expertise, answer confidence, and question easiness.

The three quantities are mutually defined: a worker's expertise is the mean
confidence of the answers they voted for, an answer's confidence score is the
summed expertise score of its voters, and a question's easiness summarizes how
separated its answer confidences are. ``run_estimation`` resolves the coupling
by alternating two fixed-point cycles over the full vote history, always from a
fresh initialization, so its output is a pure function of the votes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import expit

__all__ = [
    "EXPERTISE_CAP",
    "ConvergenceTrace",
    "EstimatorConfig",
    "QuestionState",
    "Vote",
    "WorkerState",
    "easiness",
    "easiness_score",
    "expertise_score",
    "logistic_confidences",
    "pairwise_separation",
    "run_estimation",
    "selection_probability",
    "update_confidence_scores",
    "update_confidences",
    "update_expertise",
]

# Expertise is capped strictly below 1 so that -ln(1-e) stays finite.
EXPERTISE_CAP = 1.0 - 1e-9

INITIAL_EXPERTISE = 0.5
INITIAL_EASINESS = 0.5


@dataclass
class EstimatorConfig:
    """Knobs for the dual-cycle estimator.

    ``smoothing_k`` scales the easiness logistic and must lie in (0, 1].
    ``binary_influence`` enables the mutual-influence adjustment that spreads
    apart the two confidence scores of binary questions.
    """

    smoothing_k: float = 1.0
    external_iterations: int = 10
    inner_iterations: int = 5
    early_stop_tolerance: float = 1e-6
    binary_influence: bool = True

    def validate(self) -> None:
        if not 0.0 < self.smoothing_k <= 1.0:
            raise ValueError(f"smoothing_k must be in (0, 1], got {self.smoothing_k}")
        if self.external_iterations < 1 or self.inner_iterations < 1:
            raise ValueError("iteration counts must be at least 1")
        if self.early_stop_tolerance < 0.0:
            raise ValueError("early_stop_tolerance must be non-negative")


@dataclass(frozen=True)
class Vote:
    """One worker's answer choice on one question."""

    worker_id: object
    question_id: object
    choice: int


@dataclass
class WorkerState:
    worker_id: object
    expertise: float = INITIAL_EXPERTISE
    expertise_score: float = -math.log1p(-INITIAL_EXPERTISE)
    # question_id -> chosen answer index, in vote order
    answered: dict = field(default_factory=dict)

    def reset_estimates(self) -> None:
        self.expertise = INITIAL_EXPERTISE
        self.expertise_score = -math.log1p(-INITIAL_EXPERTISE)


@dataclass
class QuestionState:
    """Mutable per-question estimation state.

    ``status`` is one of "open" (still collecting votes), "closed"
    (not currently assignable), or "returned" (answer reported).
    ``truth`` is only known in simulations.
    """

    question_id: object
    num_choices: int
    confidences: np.ndarray = None
    confidence_scores: np.ndarray = None
    easiness: float = INITIAL_EASINESS
    easiness_score: float = 0.0
    status: str = "open"
    truth: int = None
    votes: list = field(default_factory=list)

    def __post_init__(self):
        if self.num_choices < 2:
            raise ValueError(f"need at least 2 choices, got {self.num_choices}")
        if self.confidences is None:
            self.confidences = np.full(self.num_choices, 1.0 / self.num_choices)
        else:
            self.confidences = np.asarray(self.confidences, dtype=float)
        if self.confidence_scores is None:
            self.confidence_scores = np.zeros(self.num_choices)
        else:
            self.confidence_scores = np.asarray(self.confidence_scores, dtype=float)

    def reset_estimates(self) -> None:
        self.confidences = np.full(self.num_choices, 1.0 / self.num_choices)
        self.confidence_scores = np.zeros(self.num_choices)
        self.easiness = INITIAL_EASINESS
        self.easiness_score = 0.0


@dataclass
class ConvergenceTrace:
    """Mean absolute confidence change per external iteration."""

    mean_abs_changes: list
    converged_early: bool

    @property
    def iterations(self) -> int:
        return len(self.mean_abs_changes)


def expertise_score(expertise: float) -> float:
    """Map expertise in [0, 1] to its unbounded score -ln(1 - e).

    Values at or above ``EXPERTISE_CAP`` are capped so the score stays finite.
    """
    e = min(max(expertise, 0.0), EXPERTISE_CAP)
    return -math.log1p(-e)


def selection_probability(expertise: float, easiness: float) -> float:
    """Probability that a worker picks the true answer: sigmoid(e * d)."""
    return float(expit(expertise * easiness))


def update_expertise(worker: WorkerState, questions: dict) -> None:
    """Set expertise to the mean confidence of the worker's chosen answers.

    ``questions`` maps question_id to QuestionState. Workers with no answers
    keep their current estimate.
    """
    if not worker.answered:
        return
    total = 0.0
    for qid, choice in worker.answered.items():
        total += float(questions[qid].confidences[choice])
    e = min(max(total / len(worker.answered), 0.0), EXPERTISE_CAP)
    worker.expertise = e
    worker.expertise_score = -math.log1p(-e)


def update_confidence_scores(
    question: QuestionState,
    votes,
    workers: dict,
    config: EstimatorConfig = None,
) -> np.ndarray:
    """Recompute summed voter expertise scores for each answer of a question.

    For binary questions the mutual-influence adjustment replaces the scores
    (a, b) with (a - b, b - a), computed simultaneously from the raw sums.
    Votes for other questions are ignored, so the full corpus can be passed.
    """
    if config is None:
        config = EstimatorConfig()
    scores = np.zeros(question.num_choices)
    for vote in votes:
        if vote.question_id != question.question_id:
            continue
        scores[vote.choice] += workers[vote.worker_id].expertise_score
    if config.binary_influence and question.num_choices == 2:
        a, b = scores[0], scores[1]
        scores[0] = a - b
        scores[1] = b - a
    question.confidence_scores = scores
    return scores


def logistic_confidences(confidence_scores: np.ndarray, easiness: float) -> np.ndarray:
    """Squash confidence scores through d * sigmoid and normalize to sum 1."""
    pre = easiness * expit(np.asarray(confidence_scores, dtype=float))
    return pre / pre.sum()


def update_confidences(question: QuestionState) -> np.ndarray:
    question.confidences = logistic_confidences(
        question.confidence_scores, question.easiness
    )
    return question.confidences


def pairwise_separation(confidences: np.ndarray) -> float:
    """Mean absolute gap over all answer pairs; 0.5 <= result needs a clear winner."""
    c = np.asarray(confidences, dtype=float)
    l = c.shape[0]
    diffs = np.abs(c[:, None] - c[None, :])
    # each unordered pair counted once; l*(l-1)/2 pairs
    return float(diffs[np.triu_indices(l, k=1)].mean())


def easiness_score(question: QuestionState) -> float:
    question.easiness_score = pairwise_separation(question.confidences)
    return question.easiness_score


def easiness(separation_score: float, smoothing_k: float = 1.0) -> float:
    """Map a separation score through 1 / (1 + k * exp(-score)).

    The result lies in [1/(1+k), 1) for scores in [0, 1].
    """
    if not 0.0 < smoothing_k <= 1.0:
        raise ValueError(f"smoothing_k must be in (0, 1], got {smoothing_k}")
    return float(1.0 / (1.0 + smoothing_k * math.exp(-separation_score)))


@njit(cache=True)
def _dual_cycle_kernel(
    vote_w,
    vote_q,
    vote_c,
    vote_counts,
    num_choices,
    expertise_scores,
    expertise,
    conf,
    conf_scores,
    easiness,
    easiness_scores,
    smoothing_k,
    external_iterations,
    inner_iterations,
    tolerance,
    influence,
):
    """Alternate the two estimation cycles over a packed vote corpus.

    Left cycle: confidence scores -> confidences -> expertise. Right cycle:
    easiness score -> easiness -> confidences. Both run ``inner_iterations``
    times per external round. Returns the per-round mean absolute confidence
    change, truncated at early stop.
    """
    nv = vote_w.shape[0]
    nq = conf.shape[0]
    nw = expertise_scores.shape[0]

    total_entries = 0
    for q in range(nq):
        total_entries += num_choices[q]

    trace = np.zeros(external_iterations)
    n_done = 0
    sums = np.zeros(nw)
    conf_start = np.zeros_like(conf)

    for _ext in range(external_iterations):
        conf_start[:, :] = conf[:, :]

        for _it in range(inner_iterations):
            # confidence scores: summed voter expertise scores per answer
            conf_scores[:, :] = 0.0
            for i in range(nv):
                conf_scores[vote_q[i], vote_c[i]] += expertise_scores[vote_w[i]]
            if influence:
                for q in range(nq):
                    if num_choices[q] == 2:
                        a = conf_scores[q, 0]
                        b = conf_scores[q, 1]
                        conf_scores[q, 0] = a - b
                        conf_scores[q, 1] = b - a
            # confidences: d * sigmoid, normalized per question
            for q in range(nq):
                lq = num_choices[q]
                s = 0.0
                for c in range(lq):
                    v = easiness[q] / (1.0 + math.exp(-conf_scores[q, c]))
                    conf[q, c] = v
                    s += v
                for c in range(lq):
                    conf[q, c] /= s
            # expertise: mean voted confidence, capped below 1
            sums[:] = 0.0
            for i in range(nv):
                sums[vote_w[i]] += conf[vote_q[i], vote_c[i]]
            for w in range(nw):
                if vote_counts[w] > 0:
                    ew = sums[w] / vote_counts[w]
                    if ew > EXPERTISE_CAP:
                        ew = EXPERTISE_CAP
                    elif ew < 0.0:
                        ew = 0.0
                    expertise[w] = ew
                    expertise_scores[w] = -math.log1p(-ew)

        for _it in range(inner_iterations):
            # easiness from the current confidence separation
            for q in range(nq):
                lq = num_choices[q]
                tot = 0.0
                for i in range(lq):
                    for j in range(i + 1, lq):
                        diff = conf[q, i] - conf[q, j]
                        tot += diff if diff >= 0.0 else -diff
                pairs = lq * (lq - 1) // 2
                easiness_scores[q] = tot / pairs
                easiness[q] = 1.0 / (1.0 + smoothing_k * math.exp(-easiness_scores[q]))
            # confidences under the new easiness (scores unchanged)
            for q in range(nq):
                lq = num_choices[q]
                s = 0.0
                for c in range(lq):
                    v = easiness[q] / (1.0 + math.exp(-conf_scores[q, c]))
                    conf[q, c] = v
                    s += v
                for c in range(lq):
                    conf[q, c] /= s

        delta = 0.0
        for q in range(nq):
            for c in range(num_choices[q]):
                x = conf[q, c] - conf_start[q, c]
                delta += x if x >= 0.0 else -x
        if total_entries > 0:
            delta /= total_entries
        trace[n_done] = delta
        n_done += 1
        if delta < tolerance:
            break

    return trace[:n_done]


def _pack_corpus(questions, workers, votes):
    """Index questions, workers, and votes into flat arrays for the kernel."""
    qids = list(questions.keys())
    wids = list(workers.keys())
    q_index = {qid: i for i, qid in enumerate(qids)}
    w_index = {wid: i for i, wid in enumerate(wids)}

    nv = len(votes)
    vote_w = np.empty(nv, dtype=np.int64)
    vote_q = np.empty(nv, dtype=np.int64)
    vote_c = np.empty(nv, dtype=np.int64)
    seen = set()
    for i, vote in enumerate(votes):
        if vote.worker_id not in w_index:
            raise KeyError(f"vote references unknown worker {vote.worker_id!r}")
        if vote.question_id not in q_index:
            raise KeyError(f"vote references unknown question {vote.question_id!r}")
        lq = questions[vote.question_id].num_choices
        if not 0 <= vote.choice < lq:
            raise ValueError(
                f"choice {vote.choice} out of range for question {vote.question_id!r}"
            )
        key = (vote.worker_id, vote.question_id)
        if key in seen:
            raise ValueError(f"duplicate vote by worker {key[0]!r} on question {key[1]!r}")
        seen.add(key)
        vote_w[i] = w_index[vote.worker_id]
        vote_q[i] = q_index[vote.question_id]
        vote_c[i] = vote.choice
    return qids, wids, vote_w, vote_q, vote_c


def run_estimation(
    questions: dict,
    workers: dict,
    votes,
    config: EstimatorConfig = None,
) -> ConvergenceTrace:
    """Estimate all states from scratch over the full vote corpus.

    ``questions`` and ``workers`` map ids to their state objects; every vote
    must reference known ids and a worker may vote at most once per question.
    All estimates are reinitialized (uniform confidences, expertise 0.5,
    easiness 0.5) before iterating, so the result depends only on the votes.
    States are updated in place; ``answered`` maps are left untouched.
    """
    if config is None:
        config = EstimatorConfig()
    config.validate()

    votes = list(votes)
    qids, wids, vote_w, vote_q, vote_c = _pack_corpus(questions, workers, votes)

    nq = len(qids)
    nw = len(wids)
    num_choices = np.array([questions[qid].num_choices for qid in qids], dtype=np.int64)
    lmax = int(num_choices.max()) if nq else 2

    vote_counts = np.zeros(nw, dtype=np.int64)
    for w in vote_w:
        vote_counts[w] += 1

    expertise_scores = np.full(nw, -math.log1p(-INITIAL_EXPERTISE))
    expertise = np.full(nw, INITIAL_EXPERTISE)
    conf = np.zeros((nq, lmax))
    for i in range(nq):
        conf[i, : num_choices[i]] = 1.0 / num_choices[i]
    conf_scores = np.zeros((nq, lmax))
    easiness = np.full(nq, INITIAL_EASINESS)
    easiness_scores = np.zeros(nq)

    changes = _dual_cycle_kernel(
        vote_w,
        vote_q,
        vote_c,
        vote_counts,
        num_choices,
        expertise_scores,
        expertise,
        conf,
        conf_scores,
        easiness,
        easiness_scores,
        config.smoothing_k,
        config.external_iterations,
        config.inner_iterations,
        config.early_stop_tolerance,
        config.binary_influence,
    )

    for i, qid in enumerate(qids):
        state = questions[qid]
        lq = state.num_choices
        state.confidences = conf[i, :lq].copy()
        state.confidence_scores = conf_scores[i, :lq].copy()
        state.easiness = float(easiness[i])
        state.easiness_score = float(easiness_scores[i])
    for i, wid in enumerate(wids):
        state = workers[wid]
        state.expertise = float(expertise[i])
        state.expertise_score = float(expertise_scores[i])

    mean_abs = [float(x) for x in changes]
    converged = len(mean_abs) < config.external_iterations
    return ConvergenceTrace(mean_abs_changes=mean_abs, converged_early=converged)
