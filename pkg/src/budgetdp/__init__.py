"""Dynamic programming for lattice control problems with expectation
constraints imposed at every grid time."""
from .audit_sim import AuditReport, exact_audit, monte_carlo_audit, track_budget
from .budget_dpp import (
    BudgetGrid,
    BudgetProcess,
    Policy,
    ValueSurface,
    allocate_budget,
    build_budget_process,
    check_budget_process,
    dpp_verify,
    extract_policy,
    minimal_budget,
    pathwise_value,
    realize_strategy,
    snell_envelope,
    solve,
)
from .constraint_lib import (
    Ball,
    Box,
    Empty,
    Everything,
    HalfSpace,
    Union,
    g_drawdown,
    g_floor,
    g_quantile,
    g_state,
    indicator_reward,
    linear_reward,
    log_reward,
    power_reward,
    table_reward,
    zero_constraint,
)
from .oracle import enumerate_strategies, oracle_value, oracle_value_recursive, supinf_supsup_check
from .path_lattice import (
    LatticeModel,
    PathPrefix,
    StoppingRule,
    Strategy,
    TreeMeasure,
    concat_paths,
    conditional_measure,
    induced_measure,
    paste_measures,
)
from .problem_kit import (
    ProblemSpec,
    build_drawdown_problem,
    build_floor_problem,
    build_quantile_problem,
    build_state_problem,
    build_target_problem,
    reachability_sets,
)

__all__ = [
    "allocate_budget",
    "AuditReport",
    "Ball",
    "Box",
    "BudgetGrid",
    "BudgetProcess",
    "build_budget_process",
    "build_drawdown_problem",
    "build_floor_problem",
    "build_quantile_problem",
    "build_state_problem",
    "build_target_problem",
    "check_budget_process",
    "concat_paths",
    "conditional_measure",
    "dpp_verify",
    "Empty",
    "enumerate_strategies",
    "Everything",
    "exact_audit",
    "extract_policy",
    "g_drawdown",
    "g_floor",
    "g_quantile",
    "g_state",
    "HalfSpace",
    "indicator_reward",
    "induced_measure",
    "LatticeModel",
    "linear_reward",
    "log_reward",
    "minimal_budget",
    "monte_carlo_audit",
    "oracle_value",
    "oracle_value_recursive",
    "paste_measures",
    "PathPrefix",
    "pathwise_value",
    "Policy",
    "power_reward",
    "ProblemSpec",
    "reachability_sets",
    "realize_strategy",
    "snell_envelope",
    "solve",
    "StoppingRule",
    "Strategy",
    "supinf_supsup_check",
    "table_reward",
    "track_budget",
    "TreeMeasure",
    "Union",
    "ValueSurface",
    "zero_constraint",
]

__version__ = "0.1.0"
