"""Strategy-robust supervised learning under costly behavior manipulation.

Agents game linear decision rules at quadratic cost; this package simulates
that game, fits rules that anticipate it, estimates the cost primitives from
incentivized panel data, and reproduces the associated Monte Carlo
experiments and transparency-cost bounds.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionMismatchError,
    IdentificationError,
    InvalidInputError,
    SingularDesignError,
    StableRulesError,
    UnreachableSupportError,
)
from .estimators import (
    FitConfig,
    FitReport,
    OptimizerConfig,
    cross_validate_lambda,
    decision_lambda,
    fit_lasso,
    fit_ols,
    fit_ridge,
    fit_strategy_robust,
    fit_strategy_robust_restricted,
    lasso_support_lambda,
)
from .gmm import (
    GamingBackout,
    PanelDataset,
    PrimitivesEstimate,
    back_out_gaming,
    cv_lambda_costs,
    elicited_costs,
    estimate_types,
    fit_primitives,
    gmm_loss,
    gmm_moments,
)
from .model import (
    Agent,
    CostModel,
    DecisionRule,
    Population,
    agent_utility,
    best_response,
    best_response_matrix,
    counterfactual_loss,
    encode_gaming_observable,
    expected_counterfactual_loss,
    manipulation_cost_at_best_response,
    mean_manipulation_cost,
    predict,
    rmse,
)
from .simulation import (
    BENCHMARK_DGP,
    SIGNAL_DGP,
    DgpConfig,
    IndustryRunReport,
    SweepRow,
    TableReport,
    benchmark_report,
    comparative_statics_sweep,
    cost_model_for,
    derive_seed,
    generate_population,
    generate_world,
    manipulation_signal_scenario,
    misspecify_costs,
    oscillation_report,
    run_industry_loop,
    signal_report,
    transparency_cost,
)

__all__ = [name for name in dir() if not name.startswith("_")]
