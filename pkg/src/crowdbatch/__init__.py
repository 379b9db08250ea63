"""Batch task assignment for crowdsourcing.

Workers arrive in synchronized batches and each answers one multiple-choice
question per batch. The package estimates worker expertise, answer confidence,
and question easiness jointly from the vote history, assigns arriving workers
to the questions where their vote is expected to help most, and returns a
question once its answer confidences are separated enough.
"""

from .inference import (
    ConvergenceTrace,
    EstimatorConfig,
    QuestionState,
    Vote,
    WorkerState,
    easiness,
    easiness_score,
    expertise_score,
    logistic_confidences,
    pairwise_separation,
    run_estimation,
    selection_probability,
    update_confidence_scores,
    update_confidences,
    update_expertise,
)
from .assignment import (
    AssignmentPlan,
    E2IMatrix,
    OracleResult,
    RemainingScores,
    answer_probability,
    best_match,
    brute_force_oracle,
    build_e2i_matrix,
    classify_experts,
    expected_increase,
    first_match,
    helper_procedure,
    remaining_scores,
)
from .simulator import (
    RunResult,
    SimConfig,
    SimReport,
    SyntheticPopulation,
    baseline_fixed_rep,
    generate_population,
    run_replay,
    run_simulation,
    simulate_vote,
)
from .dataio import (
    ArrivalTrace,
    DataFormatError,
    LabelSet,
    BatchSchedule,
    load_summary,
    export_report,
    majority_vote_accuracy,
    match_and_schedule,
    parse_arrivals,
    parse_labels,
    parse_truths,
)

__version__ = "0.1.0"
