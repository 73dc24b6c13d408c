"""Federated-learning simulation with sign-consistency robust aggregation.

The package simulates a synchronous federation of Gaussian-model logistic
clients under a colluding single-feature backdoor attack, provides the
invariant aggregator (AND-mask composed with a coordinate-wise trimmed mean)
alongside common robust-aggregation baselines, and ships Monte Carlo
checkers for the estimator-error and sign-consistency guarantees.
"""

from .aggregation import (
    AGGREGATOR_KINDS,
    AggregatorConfig,
    ClientUpdate,
    aggregate,
    and_mask,
    fedavg,
    invariant_aggregate,
    krum,
    krum_then_trimmed,
    multi_krum,
    multi_krum_cosine,
    mv_ratio_mask,
    sign_consistency,
    sign_consistency_vector,
    sign_sgd_majority,
    trimmed_mean,
    trimmed_mean_scalar,
    weak_dp,
)
from .config import (
    PRESETS,
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    build_aggregator,
    build_scenario,
    experiment_to_dict,
    load_experiment,
    parse_experiment,
    preset_config,
    run_from_config,
)
from .harness import (
    RoundRecord,
    RunResult,
    build_eval_sets,
    evaluate,
    run_experiment,
    run_round,
    sample_clients,
)
from .model import local_train, logistic_loss, point_gradient, predict, sigmoid
from .synthdata import (
    Dataset,
    GaussianClientSpec,
    ScenarioConfig,
    TriggerSpec,
    backdoor_eval_set,
    client_dataset,
    dataset_to_csv,
    feature_invariance,
    sample_client_dataset,
    two_feature_backdoor_scenario,
)
from .theory import (
    BoundCheckReport,
    ConsistencyCase,
    ConsistencyCheckResult,
    SignCheckResult,
    check_gradient_sign,
    check_mask_failure_bound,
    check_scenario_consistency,
    check_trimmed_mean_bound,
    expected_gradient_sign,
    first_order_gain,
    first_order_terms,
    gradient_sign_grid,
    mask_failure_bound,
    winsorized_mean,
)

__version__ = "0.1.0"
