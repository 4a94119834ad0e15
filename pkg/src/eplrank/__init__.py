"""Bayesian Extended Plackett-Luce ranking models with order-constrained reference orders."""

from .diagnostics import (
    DiagnosticResult,
    EPLScenario,
    MallowsScenario,
    bootstrap_p_value,
    epl_diagnostic,
    posterior_predictive_p_value,
    power_study,
)
from .mcmc import (
    ChainConfig,
    ChainOutput,
    PriorConfig,
    TuningConfig,
    posterior_summaries,
    run_chain,
)
from .model import (
    EPLParams,
    RankingDataset,
    epl_log_likelihood,
    epl_log_prob,
    pl_log_prob,
    sample_epl,
)
from .perm import ReferenceOrder, enumerate_restricted_space

__all__ = [
    "ChainConfig",
    "ChainOutput",
    "DiagnosticResult",
    "EPLParams",
    "EPLScenario",
    "MallowsScenario",
    "PriorConfig",
    "RankingDataset",
    "ReferenceOrder",
    "TuningConfig",
    "bootstrap_p_value",
    "enumerate_restricted_space",
    "epl_diagnostic",
    "epl_log_likelihood",
    "epl_log_prob",
    "pl_log_prob",
    "posterior_predictive_p_value",
    "posterior_summaries",
    "power_study",
    "run_chain",
    "sample_epl",
]
