"""Batch-loop simulation: arrivals, assignment, voting, estimation, returns.

Synthetic mode draws worker expertise and question easiness from Gaussians and
runs the full loop until every question is returned or the batch budget runs
out. Replay mode drives the same loop from a real arrival trace and label set.
A simplified fixed-repetition baseline (majority vote, no estimation) serves
as the comparison point.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .inference import (
    EstimatorConfig,
    QuestionState,
    Vote,
    WorkerState,
    run_estimation,
    selection_probability,
)
from .assignment import (
    AssignmentPlan,
    best_match,
    brute_force_oracle,
    build_e2i_matrix,
    first_match,
    remaining_scores,
)

__all__ = [
    "ALGORITHMS",
    "RunResult",
    "SimConfig",
    "SimReport",
    "SimState",
    "SyntheticPopulation",
    "baseline_fixed_rep",
    "generate_population",
    "run_batch",
    "run_replay",
    "run_simulation",
    "simulate_vote",
]

ALGORITHMS = ("fm", "bm", "oracle", "baseline")

# hard stop for unbounded (max_batches = 0) runs that fail to terminate
_BATCH_SAFETY_CAP = 1_000_000


@dataclass
class SimConfig:
    """Knobs for one experiment; `runs` independent repetitions are averaged.

    ``max_batches`` of 0 means unbounded (run until every question returns).
    ``arrival_rate`` is workers per batch; the fractional part arrives as a
    Bernoulli extra. Workers depart after their single batch.

    Unbounded budgets are only safe with binary questions: beyond two choices
    the influence adjustment does not apply and a question's separation score
    is capped at 2/(l*(l+1)), so thresholds above that cap can never be
    reached and the run would spin until the safety stop.
    """

    num_questions: int
    num_choices: int = 2
    delta: float = 0.3
    smoothing_k: float = 1.0
    max_batches: int = 20
    arrival_rate: float = 1.0
    algorithm: str = "fm"
    baseline_rep: int = 3
    runs: int = 100
    seed: int = 0
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    true_expertise_mean: float = 0.7
    true_expertise_sd: float = 0.1
    true_easiness_mean: float = 0.9
    true_easiness_sd: float = 0.03
    keep_votes: bool = False

    def validate(self) -> None:
        if self.num_questions < 1:
            raise ValueError("num_questions must be at least 1")
        if self.num_choices < 2:
            raise ValueError("num_choices must be at least 2")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.arrival_rate <= 0.0:
            raise ValueError("arrival_rate must be positive")
        if self.max_batches < 0:
            raise ValueError("max_batches must be >= 0 (0 = unbounded)")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.baseline_rep < 1:
            raise ValueError("baseline_rep must be at least 1")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if not 0.0 < self.smoothing_k <= 1.0:
            raise ValueError(f"smoothing_k must be in (0, 1], got {self.smoothing_k}")
        self.estimator.validate()


@dataclass
class SyntheticPopulation:
    """Ground-truth parameters; worker expertise may be pre-drawn or streamed."""

    worker_expertise: np.ndarray
    question_easiness: np.ndarray
    truths: np.ndarray


@dataclass
class RunResult:
    run_index: int
    accuracy: float
    required_batches: int
    total_votes: int
    forced_return_count: int
    per_batch: list
    convergence_traces: list
    per_question: list
    assignment_log: list
    votes: list = None


@dataclass
class SimReport:
    config: dict
    accuracy: float
    required_batches: float
    accuracy_se: float
    required_batches_se: float
    runs: list


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _clamped_normal(rng, mean, sd, size, low, high):
    return np.clip(rng.normal(mean, sd, size), low, high)


def generate_population(config: SimConfig, seed, num_workers: int = 0) -> SyntheticPopulation:
    """Draw true question easiness, ground truths, and optionally worker expertise.

    Expertise ~ N(0.7, 0.1) clamped to [0, 1-1e-9]; easiness ~ N(0.9, 0.03)
    clamped to (0, 1-1e-9]. Fully determined by the seed.
    """
    rng = _as_rng(seed)
    m = config.num_questions
    easiness = _clamped_normal(
        rng, config.true_easiness_mean, config.true_easiness_sd, m, 1e-12, 1.0 - 1e-9
    )
    truths = rng.integers(0, config.num_choices, size=m)
    expertise = _clamped_normal(
        rng, config.true_expertise_mean, config.true_expertise_sd, num_workers,
        0.0, 1.0 - 1e-9,
    )
    return SyntheticPopulation(
        worker_expertise=expertise, question_easiness=easiness, truths=truths
    )


def simulate_vote(true_expertise, true_easiness, truth, num_choices, rng) -> int:
    """Sample one vote: correct with sigmoid(e*d), else uniform over wrong choices."""
    p = selection_probability(true_expertise, true_easiness)
    if rng.random() < p:
        return int(truth)
    wrong = int(rng.integers(num_choices - 1))
    return wrong if wrong < truth else wrong + 1


def _qid_sort_key(qid):
    # ids are ints in synthetic mode, strings in replay; keep ordering total
    return (0, qid) if isinstance(qid, (int, np.integer)) else (1, str(qid))


@dataclass
class SimState:
    """Mutable state threaded through run_batch calls."""

    config: SimConfig
    questions: dict
    rng: object = None
    workers: dict = field(default_factory=dict)
    votes: list = field(default_factory=list)
    true_expertise: dict = field(default_factory=dict)
    true_easiness: dict = field(default_factory=dict)
    truths: dict = field(default_factory=dict)
    batch_index: int = 0
    returned_batch: dict = field(default_factory=dict)
    inferred: dict = field(default_factory=dict)
    forced: set = field(default_factory=set)
    rep_remaining: dict = field(default_factory=dict)
    assignment_log: list = field(default_factory=list)
    vote_log: list = field(default_factory=list)
    convergence_traces: list = field(default_factory=list)
    per_batch: list = field(default_factory=list)
    single_vote_mode: bool = False
    _fast_path_ok: bool = True
    _component_trace_sums: dict = field(default_factory=dict)
    _combined_totals: np.ndarray = None
    _total_entries: int = 0
    _baseline_heap: list = None
    _worker_serial: int = 0

    def open_questions(self):
        return [q for q in self.questions.values() if q.status == "open"]

    def new_worker_id(self) -> int:
        wid = self._worker_serial
        self._worker_serial += 1
        return wid


def baseline_fixed_rep(state: SimState, arriving_ids, config: SimConfig) -> AssignmentPlan:
    """Fixed-repetition assignment: most remaining repetitions first.

    Each arriving worker (in arrival order) takes the question with the most
    repetition budget left (ties: lowest question id), budgets dropping as
    workers are placed. No estimation is involved; questions return once the
    budget hits zero and their answer is the majority vote.
    """
    if state._baseline_heap is None:
        state._baseline_heap = [
            (-left, _qid_sort_key(qid), qid)
            for qid, left in state.rep_remaining.items()
            if left > 0 and state.questions[qid].status == "open"
        ]
        heapq.heapify(state._baseline_heap)

    heap = state._baseline_heap
    plan = AssignmentPlan(assignments={}, opened=[])
    for wid in arriving_ids:
        answered = state.workers[wid].answered
        stash = []
        target = None
        while heap:
            neg, key, qid = heapq.heappop(heap)
            if qid in answered:
                stash.append((neg, key, qid))
                continue
            target = qid
            left = -neg - 1
            state.rep_remaining[qid] = left
            if left > 0:
                heapq.heappush(heap, (-left, key, qid))
            break
        for item in stash:
            heapq.heappush(heap, item)
        if target is None:
            plan.unassigned.append(wid)
            continue
        plan.assignments[wid] = target
        if target not in plan.opened:
            plan.opened.append(target)
    plan.worker_order = list(arriving_ids)
    return plan


def _majority_choice(question: QuestionState) -> int:
    counts = np.zeros(question.num_choices, dtype=int)
    for vote in question.votes:
        counts[vote.choice] += 1
    return int(np.argmax(counts))  # ties resolve to the lowest index


def _record_vote(state: SimState, worker_id, question_id, choice, source: str) -> None:
    vote = Vote(worker_id, question_id, choice)
    state.votes.append(vote)
    state.questions[question_id].votes.append(vote)
    state.workers[worker_id].answered[question_id] = choice
    state.vote_log.append((state.batch_index, worker_id, question_id, choice, source))


def _estimate(state: SimState, touched_qids) -> list:
    """Refresh estimates after a batch; returns the convergence trace.

    In single-vote mode the worker/question graph is a disjoint union of
    per-question stars, so only questions whose vote sets changed need
    re-estimation from scratch; the global trace is the entry-count-weighted
    combination of per-question traces. Falls back to the monolithic pass
    permanently if the combined trace would ever trip the global early stop
    (component runs cannot honor it).
    """
    config = state.config
    if not state.single_vote_mode or not state._fast_path_ok:
        trace = run_estimation(state.questions, state.workers, state.votes, config.estimator)
        return trace.mean_abs_changes

    ext = config.estimator.external_iterations
    component_config = replace(config.estimator, early_stop_tolerance=0.0)
    if state._combined_totals is None:
        state._combined_totals = np.zeros(ext)
        state._total_entries = sum(q.num_choices for q in state.questions.values())
    for qid in touched_qids:
        question = state.questions[qid]
        voters = {v.worker_id: state.workers[v.worker_id] for v in question.votes}
        trace = run_estimation({qid: question}, voters, question.votes, component_config)
        sums = np.zeros(ext)
        for i, delta in enumerate(trace.mean_abs_changes):
            sums[i] = delta * question.num_choices
        previous = state._component_trace_sums.get(qid)
        if previous is not None:
            state._combined_totals -= previous
        state._component_trace_sums[qid] = sums
        state._combined_totals += sums

    combined = state._combined_totals / state._total_entries

    tol = config.estimator.early_stop_tolerance
    cut = next((i + 1 for i, d in enumerate(combined) if d < tol), ext)
    if cut < ext:
        # a monolithic run would have stopped early; replay it exactly
        state._fast_path_ok = False
        trace = run_estimation(state.questions, state.workers, state.votes, config.estimator)
        return trace.mean_abs_changes
    return [float(x) for x in combined]


def _vote_synthetic(state: SimState, wid, question: QuestionState):
    choice = simulate_vote(
        state.true_expertise[wid],
        state.true_easiness[question.question_id],
        state.truths[question.question_id],
        question.num_choices,
        state.rng,
    )
    return choice, "synthetic"


def _plan_for(state: SimState, arriving_ids) -> AssignmentPlan:
    config = state.config
    if config.algorithm == "baseline":
        return baseline_fixed_rep(state, arriving_ids, config)
    pool = [
        q for q in state.open_questions() if config.delta - q.easiness_score > 0.0
    ]
    if not pool:
        return AssignmentPlan(assignments={}, opened=[], unassigned=list(arriving_ids))
    workers = [state.workers[w] for w in arriving_ids]
    e2i = build_e2i_matrix(workers, pool)
    budgets = remaining_scores(pool, config.delta)
    if config.algorithm == "fm":
        return first_match(e2i, budgets, state.rng)
    if config.algorithm == "bm":
        return best_match(e2i, budgets, state.rng)
    return brute_force_oracle(e2i, budgets).plan


def _execute_batch(state: SimState, arriving_ids, vote_for) -> tuple:
    """Shared batch body: plan, vote, re-estimate or decrement, return questions."""
    config = state.config
    state.batch_index += 1
    if not arriving_ids:
        log = (state.batch_index, 0, 0, 0, 0)
        state.per_batch.append(log)
        state.convergence_traces.append([])
        return log

    baseline = config.algorithm == "baseline"
    plan = _plan_for(state, arriving_ids)

    touched = []
    for wid in plan.worker_order or list(plan.assignments):
        if wid not in plan.assignments:
            continue
        qid = plan.assignments[wid]
        choice, source = vote_for(state, wid, state.questions[qid])
        _record_vote(state, wid, qid, choice, source)
        if qid not in touched:
            touched.append(qid)
        state.assignment_log.append(
            (state.batch_index, wid, qid, qid in plan.overflow_flags)
        )

    returned_now = 0
    if baseline:
        state.convergence_traces.append([])
        for qid in touched:
            if state.rep_remaining[qid] <= 0:
                _return_question(state, qid, _majority_choice(state.questions[qid]))
                returned_now += 1
    else:
        state.convergence_traces.append(_estimate(state, touched))
        for question in state.open_questions():
            if question.easiness_score >= config.delta:
                _return_question(
                    state, question.question_id, int(np.argmax(question.confidences))
                )
                returned_now += 1

    log = (
        state.batch_index,
        len(arriving_ids),
        len(plan.assignments),
        returned_now,
        len(plan.overflow_flags),
    )
    state.per_batch.append(log)
    return log


def run_batch(state: SimState, arriving_ids, config: SimConfig) -> tuple:
    """One synchronized round with synthesized votes.

    Returns the log tuple (batch_index, arrived, assigned, returned, overflow).
    With no arrivals the state is untouched apart from the batch counter.
    """
    assert config is state.config
    return _execute_batch(state, arriving_ids, _vote_synthetic)


def _return_question(state: SimState, qid, inferred: int, forced: bool = False) -> None:
    state.questions[qid].status = "returned"
    state.returned_batch[qid] = state.batch_index
    state.inferred[qid] = int(inferred)
    if forced:
        state.forced.add(qid)


def _force_return_remaining(state: SimState) -> None:
    baseline = state.config.algorithm == "baseline"
    for question in state.open_questions():
        if baseline:
            inferred = _majority_choice(question)
        else:
            inferred = int(np.argmax(question.confidences))
        _return_question(state, question.question_id, inferred, forced=True)


def _finish_run(state: SimState, run_index: int) -> RunResult:
    config = state.config
    per_question = []
    correct_count = 0
    truth_count = 0
    for qid, question in state.questions.items():
        truth = state.truths.get(qid)
        inferred = state.inferred.get(qid)
        correct = None
        if truth is not None and inferred is not None:
            correct = bool(inferred == int(truth))
            truth_count += 1
            correct_count += int(correct)
        per_question.append(
            {
                "question_id": qid,
                "returned_batch": state.returned_batch.get(qid),
                "confidences": [float(c) for c in question.confidences],
                "inferred": inferred,
                "truth": None if truth is None else int(truth),
                "correct": correct,
                "repetitions": len(question.votes),
                "forced": qid in state.forced,
            }
        )
    accuracy = correct_count / truth_count if truth_count else 0.0
    if state.forced:
        required = config.max_batches
    else:
        required = max(state.returned_batch.values(), default=0)
    return RunResult(
        run_index=run_index,
        accuracy=accuracy,
        required_batches=required,
        total_votes=len(state.votes),
        forced_return_count=len(state.forced),
        per_batch=state.per_batch,
        convergence_traces=state.convergence_traces,
        per_question=per_question,
        assignment_log=state.assignment_log,
        votes=state.vote_log if config.keep_votes else None,
    )


def _single_run(config: SimConfig, run_index: int) -> RunResult:
    rng = np.random.default_rng([config.seed, run_index])
    population = generate_population(config, rng)
    questions = {
        qid: QuestionState(qid, config.num_choices, truth=int(population.truths[qid]))
        for qid in range(config.num_questions)
    }
    state = SimState(config=config, questions=questions, rng=rng, single_vote_mode=True)
    state.true_easiness = {qid: float(population.question_easiness[qid]) for qid in questions}
    state.truths = {qid: int(population.truths[qid]) for qid in questions}
    state.rep_remaining = {qid: config.baseline_rep for qid in questions}

    whole, frac = int(config.arrival_rate), config.arrival_rate % 1.0
    while state.open_questions():
        if config.max_batches and state.batch_index >= config.max_batches:
            _force_return_remaining(state)
            break
        if state.batch_index >= _BATCH_SAFETY_CAP:
            raise RuntimeError("simulation failed to terminate (safety cap reached)")
        arrivals = whole + (1 if frac > 0.0 and rng.random() < frac else 0)
        arriving_ids = []
        for _ in range(arrivals):
            wid = state.new_worker_id()
            state.workers[wid] = WorkerState(wid)
            state.true_expertise[wid] = float(
                _clamped_normal(
                    rng, config.true_expertise_mean, config.true_expertise_sd, 1,
                    0.0, 1.0 - 1e-9,
                )[0]
            )
            arriving_ids.append(wid)
        run_batch(state, arriving_ids, config)
    return _finish_run(state, run_index)


def _aggregate(config: SimConfig, results: list) -> SimReport:
    acc = np.array([r.accuracy for r in results], dtype=float)
    req = np.array([r.required_batches for r in results], dtype=float)

    def se(x):
        return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0

    return SimReport(
        config=asdict(config),
        accuracy=float(acc.mean()),
        required_batches=float(req.mean()),
        accuracy_se=se(acc),
        required_batches_se=se(req),
        runs=results,
    )


def run_simulation(config: SimConfig) -> SimReport:
    """Run `config.runs` independent seeded repetitions and average them."""
    config.validate()
    results = [_single_run(config, r) for r in range(config.runs)]
    return _aggregate(config, results)


def run_replay(trace, labels, config: SimConfig) -> SimReport:
    """Replay a real arrival trace against a label set, `config.runs` matchings.

    Each run rematches label workers to trace workers with a fresh seed and
    replays the batch loop. Observed labels are consumed when the engine
    assigns a pair present in the label set; otherwise the vote is synthesized
    from the worker's current estimated expertise. Requires a finite batch
    budget.
    """
    from .dataio import match_and_schedule  # deferred: dataio does not import back

    config.validate()
    if config.max_batches < 1:
        raise ValueError("replay requires a finite batch budget (max_batches >= 1)")
    if config.algorithm == "oracle":
        raise ValueError("replay supports fm, bm, and baseline only")
    results = []
    for r in range(config.runs):
        schedule = match_and_schedule(labels, trace, config.max_batches, [config.seed, r, 0])
        rng = np.random.default_rng([config.seed, r, 1])
        results.append(_replay_run(labels, schedule, config, rng, r))
    return _aggregate(config, results)


def _vote_replay(labels):
    def vote_for(state: SimState, wid, question: QuestionState):
        observed = labels.choices.get((wid, question.question_id))
        if observed is not None:
            return observed, "observed"
        return _synthesize_replay_vote(state, wid, question), "synth"

    return vote_for


def _synthesize_replay_vote(state: SimState, wid, question: QuestionState) -> int:
    """Vote for a pair missing from the label set, from estimated expertise.

    Uses the question's known truth when available; otherwise a stand-in
    truth is drawn from the current confidences.
    """
    truth = state.truths.get(question.question_id)
    if truth is None:
        truth = int(state.rng.choice(question.num_choices, p=question.confidences))
    worker = state.workers[wid]
    return simulate_vote(
        worker.expertise, question.easiness, truth, question.num_choices, state.rng
    )


def _replay_run(labels, schedule, config: SimConfig, rng, run_index: int) -> RunResult:
    questions = {
        qid: QuestionState(qid, labels.num_choices) for qid in labels.question_ids
    }
    state = SimState(config=config, questions=questions, rng=rng, single_vote_mode=False)
    state.truths = dict(labels.truths)
    state.rep_remaining = {qid: config.baseline_rep for qid in questions}
    for wid in labels.worker_ids:
        state.workers[wid] = WorkerState(wid)
    vote_for = _vote_replay(labels)

    for batch_arrivals in schedule.batches:
        if not state.open_questions():
            break
        # a worker arriving several times within one batch still answers one
        # question per synchronized round; extra slots collapse
        arriving = list(dict.fromkeys(batch_arrivals))
        arriving = [
            wid for wid in arriving
            if len(state.workers[wid].answered) < len(questions)
        ]
        _execute_batch(state, arriving, vote_for)
    if state.open_questions():
        _force_return_remaining(state)
    return _finish_run(state, run_index)
