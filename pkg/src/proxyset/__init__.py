"""proxyset: reduce large sets of local surrogate explanations of a
closed-box predictor to a small generative proxy set."""

from .core import (
    Dataset,
    ItemModelMap,
    LocalModelSet,
    LossMatrix,
    ProxySet,
    ReductionConfig,
    assign_items,
    build_loss_matrix,
    map_new_item,
    map_new_items,
    select_proxies,
)
from .explainers import (
    ExplainerConfig,
    Predictor,
    generate_explanations,
    knn_predictor,
    lime_explain,
    smoothgrad_explain,
)
from .experiment import ExperimentPlan, run_experiment
from .metrics import (
    MetricReport,
    approximation_ratio,
    coverage,
    epsilon_from_quantile,
    evaluate_proxies,
    instability,
    test_fidelity,
    train_fidelity,
)
from .reduce import (
    ExactBudgetError,
    ReductionTrace,
    cluster_reduce,
    exact_max_coverage,
    exact_min_loss,
    greedy_const_min_loss,
    greedy_max_coverage,
    greedy_min_loss,
    random_baseline,
)
from .synth import SyntheticGroundTruth, SyntheticSpec, generate_synthetic, oracle_predictor

__version__ = "0.1.0"
