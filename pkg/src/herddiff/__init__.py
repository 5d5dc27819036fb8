"""Deterministic herding samplers for discrete diffusion reverse chains."""

from .denoise import (
    ChainBatch,
    DenoiseConfig,
    PositionState,
    derandomized_step,
    gumbel_max_step,
    init_position_state,
    run_reverse_chain,
    sample_chains,
)
from .diffusion import (
    DataDistribution,
    ExactBayesModel,
    ForwardProcess,
    ReverseModel,
    absorbing_transition,
    bundled_distribution,
    cumulative_transition,
    exact_bayes_model,
    forward_sample,
    load_data_distribution,
    reverse_posterior,
    stationary_distribution,
    uniform_transition,
)
from .errors import *  # noqa: F401,F403
from .herding import (
    FeatureTable,
    HerdingState,
    categorical_herding_step,
    discrepancy,
    feature_herding_step,
    herding_run,
    weight_norm_trace,
)
from .metrics import (
    RunMetrics,
    convergence_curve,
    empirical_distribution,
    exact_chain_marginals,
    token_entropy,
    total_variation,
)
from .types import (
    ChainTrajectory,
    NoiseSchedule,
    ProbVector,
    Token,
    TokenSequence,
    TransitionMatrix,
    WeightVector,
    onehot,
    validate_prob_vector,
)

__version__ = "0.1.0"
