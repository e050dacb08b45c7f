"""Unbiased learning to rank from position-biased, noisy clicks."""

from .clicks import (
    BiasProfile,
    ClickLog,
    NoiseParams,
    examination_probability,
    simulate_clicks,
    simulate_until_clicks,
)
from .dataset import Dataset, QueryInstance, load_letor, synthesize_dataset, synthesize_splits
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    EstimationError,
    ExperimentError,
    ParseError,
    UltrError,
)
from .estimators import EstimatorConfig, estimate_risk, exact_expected_ips, verify_order_preservation
from .learning import (
    HyperparamGrid,
    LearnerConfig,
    build_examples,
    cross_validate,
    train_full_info_ranker,
    train_naive_ranker,
    train_propensity_ranker,
)
from .propensity import (
    PropensityModel,
    SwapExperimentConfig,
    fit_propensity_model,
    relabel_log,
    run_swap_experiment,
)
from .ranking import LinearModel, Ranking, full_info_risk, rank_candidates, sum_relevant_ranks

__version__ = "0.1.0"
