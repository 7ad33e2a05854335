"""Bayesian bi-level group lasso regression with tuning-parameter selection."""
from __future__ import annotations

__version__ = "0.1.0"

from .core import (
    BilevelLassoError,
    Dataset,
    GroupStructure,
    InvalidGenotypeError,
    InvalidGroupsError,
    InvalidParameterError,
    ModelState,
    NumericalConditioningError,
    PriorConfig,
    ShapeError,
    log_likelihood,
    log_marginal_posterior_W,
    penalty_norms,
)
from .estimators import (
    BilevelGroupLassoMAP,
    BilevelGroupLassoMCEM,
    BilevelGroupLassoRegressor,
    BilevelGroupLassoWAIC,
)
from .gibbs import ChainOutput, GibbsConfig, Mode, posterior_summary, run_chain, run_chains
from .map_solver import prox_bilevel, solve_map, verify_map_equivalence
from .mcem import McemConfig, McemStatus, McemTrace, e_step, m_step, run_mcem
from .rng import SeededStream
from .selection import LambdaGrid, WaicTable, ml_approx, ml_surface, waic_from_chain, waic_grid_search
from .sim import SimConfig, simulate

__all__ = [name for name in dir() if not name.startswith("_")]
