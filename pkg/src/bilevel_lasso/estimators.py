"""scikit-learn compatible estimators.

All estimators take ``groups`` as one gene label per column of ``X`` (or
``None`` for one group per SNP), accept a 1-D or 2-D response and expose
``coef_`` with shape ``(n_features, n_targets)``.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from .core import Dataset, GroupStructure, InvalidParameterError, PriorConfig
from .gibbs import GibbsConfig, Mode, posterior_summary, run_chain, run_chains
from .map_solver import PenaltyWeights, solve_map
from .mcem import McemConfig, McemStatus, run_mcem
from .rng import SeededStream
from .selection import LambdaGrid, waic_from_chain, waic_grid_search


def check_groups(groups, n_features: int) -> GroupStructure:
    """Coerce ``None``, a :class:`GroupStructure`, or per-feature labels into a partition."""
    if groups is None:
        return GroupStructure.singletons(n_features)
    if isinstance(groups, GroupStructure):
        g = groups
    else:
        labels = np.asarray(groups)
        if labels.ndim != 1 or labels.shape[0] != n_features:
            raise InvalidParameterError(f"groups must give one label per feature ({n_features})")
        g = GroupStructure.from_labels(labels.tolist())
    if g.num_snps != n_features:
        raise InvalidParameterError(f"groups cover {g.num_snps} features but X has {n_features}")
    return g


class _BilevelBase(RegressorMixin, BaseEstimator):
    def _validate_fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        validate_data(self, X, reset=True, skip_check_array=True)
        self._y_1d = y.ndim == 1
        data = Dataset.create(X, y, strict_genotypes=self.strict_genotypes)
        groups = check_groups(self.groups, data.d)
        self.groups_ = groups
        return data, groups

    def _prior(self) -> PriorConfig:
        return PriorConfig(self.a_sigma, self.b_sigma, self.r1, self.delta1, self.r2, self.delta2)

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False)
        pred = X @ self.coef_
        return pred[:, 0] if self._y_1d else pred


class BilevelGroupLassoRegressor(_BilevelBase):
    """Posterior-mean regression under the bi-level group lasso prior, by Gibbs sampling.

    Parameters
    ----------
    groups : array-like of shape (n_features,), GroupStructure or None
        Gene label of every SNP column.
    mode : {"fixed", "fully-bayes"}
        Hold ``lambda1_sq, lambda2_sq`` fixed, or sample them under Gamma hyperpriors
        (the given values are then starting points).
    n_iter, burn_in, thin, n_chains : int
        Chain settings; chains are pooled for the summaries.
    seed : int
        Chain ``k`` uses stream ``(seed, k)``.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features, n_targets)
        Posterior mean of ``W``.
    coef_lower_, coef_upper_ : ndarray
        Equal-tailed 95% credible bounds.
    chains_ : list of ChainOutput
    lambda1_sq_, lambda2_sq_, sigma2_ : float
        Posterior means.
    """

    def __init__(self, groups=None, mode="fixed", lambda1_sq=1.0, lambda2_sq=1.0, n_iter=10_000, burn_in=2_000,
                 thin=2, n_chains=1, n_jobs=1, seed=0, a_sigma=2.0, b_sigma=1.0, r1=1.0, delta1=0.01, r2=1.0,
                 delta2=0.01, strict_genotypes=True):
        self.groups = groups
        self.mode = mode
        self.lambda1_sq = lambda1_sq
        self.lambda2_sq = lambda2_sq
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.n_chains = n_chains
        self.n_jobs = n_jobs
        self.seed = seed
        self.a_sigma = a_sigma
        self.b_sigma = b_sigma
        self.r1 = r1
        self.delta1 = delta1
        self.r2 = r2
        self.delta2 = delta2
        self.strict_genotypes = strict_genotypes

    def fit(self, X, y):
        data, groups = self._validate_fit(X, y)
        cfg = GibbsConfig(self.n_iter, self.burn_in, self.thin, Mode(self.mode), self.lambda1_sq, self.lambda2_sq)
        self.chains_ = run_chains(data, groups, self._prior(), cfg, self.seed, self.n_chains, self.n_jobs)
        summary = posterior_summary(self.chains_)
        self.coef_ = summary.W_mean
        self.coef_lower_ = summary.W_lower
        self.coef_upper_ = summary.W_upper
        self.lambda1_sq_ = summary.scalars["lambda1_sq"]["mean"]
        self.lambda2_sq_ = summary.scalars["lambda2_sq"]["mean"]
        self.sigma2_ = summary.scalars["sigma2"]["mean"]
        return self

    def waic(self) -> float:
        check_is_fitted(self, "chains_")
        return waic_from_chain(self.chains_)[2]


class BilevelGroupLassoMCEM(_BilevelBase):
    """Empirical Bayes lambdas by Monte Carlo EM, then a fixed-lambda posterior-mean fit.

    ``status_`` is ``"converged"``, ``"max-iters"`` or ``"diverged"``. A diverged run
    still fits at the last estimate, which reproduces the over-shrinkage.
    """

    def __init__(self, groups=None, lambda_init=(1.0, 1.0), max_iters=100, divergence_cap=1e6,
                 convergence_tol=1e-3, n_iter=10_000, burn_in=2_000, thin=2, seed=0, a_sigma=2.0, b_sigma=1.0,
                 strict_genotypes=True):
        self.groups = groups
        self.lambda_init = lambda_init
        self.max_iters = max_iters
        self.divergence_cap = divergence_cap
        self.convergence_tol = convergence_tol
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.seed = seed
        self.a_sigma = a_sigma
        self.b_sigma = b_sigma
        self.strict_genotypes = strict_genotypes

    def _prior(self) -> PriorConfig:
        return PriorConfig(self.a_sigma, self.b_sigma)

    def fit(self, X, y):
        data, groups = self._validate_fit(X, y)
        prior = self._prior()
        cfg = McemConfig(self.max_iters, lambda_init=tuple(self.lambda_init), divergence_cap=self.divergence_cap,
                         convergence_tol=self.convergence_tol)
        self.trace_ = run_mcem(data, groups, prior, cfg, SeededStream(self.seed, 0))
        self.status_ = self.trace_.status.value
        self.lambda1_sq_, self.lambda2_sq_ = self.trace_.final
        fit_cfg = GibbsConfig(self.n_iter, self.burn_in, self.thin, Mode.FIXED, self.lambda1_sq_, self.lambda2_sq_)
        self.chain_ = run_chain(data, groups, prior, fit_cfg, SeededStream(self.seed, 1))
        self.coef_ = posterior_summary(self.chain_).W_mean
        return self

    @property
    def converged_(self) -> bool:
        return self.trace_.status is McemStatus.CONVERGED


class BilevelGroupLassoWAIC(_BilevelBase):
    """Grid search for the lambdas minimizing WAIC, then a posterior-mean fit at the argmin.

    ``grid`` is a :class:`LambdaGrid`, a ``(values1, values2)`` pair, or ``None`` for
    15 x 15 log-spaced points on ``[1e-2, 1e3]``.
    """

    def __init__(self, groups=None, grid=None, n_iter=2_000, burn_in=1_000, thin=1, n_jobs=1, seed=0,
                 a_sigma=2.0, b_sigma=1.0, strict_genotypes=True):
        self.groups = groups
        self.grid = grid
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.n_jobs = n_jobs
        self.seed = seed
        self.a_sigma = a_sigma
        self.b_sigma = b_sigma
        self.strict_genotypes = strict_genotypes

    def _prior(self) -> PriorConfig:
        return PriorConfig(self.a_sigma, self.b_sigma)

    def fit(self, X, y):
        data, groups = self._validate_fit(X, y)
        prior = self._prior()
        grid = self.grid
        if grid is None:
            grid = LambdaGrid.logspace()
        elif not isinstance(grid, LambdaGrid):
            grid = LambdaGrid(*grid)
        cfg = GibbsConfig(self.n_iter, self.burn_in, self.thin, Mode.FIXED, store_W=False)
        self.waic_table_ = waic_grid_search(data, groups, prior, grid, cfg, self.seed, self.n_jobs)
        best = self.waic_table_.argmin
        self.lambda1_sq_, self.lambda2_sq_ = best.lambda1_sq, best.lambda2_sq
        fit_cfg = replace(cfg, lambda1_sq=best.lambda1_sq, lambda2_sq=best.lambda2_sq, store_W=True)
        self.chain_ = run_chain(data, groups, prior, fit_cfg, SeededStream(self.seed, len(self.waic_table_.rows)))
        self.coef_ = posterior_summary(self.chain_).W_mean
        return self


class BilevelGroupLassoMAP(_BilevelBase):
    """Penalized least squares with gene-level and SNP-level group norms.

    Minimizes ``||Y - XW||_F^2 + gamma1 * sum_k ||W_k||_F + gamma2 * sum_i ||w_i||``.
    """

    def __init__(self, groups=None, gamma1=1.0, gamma2=1.0, tol=1e-9, max_iter=50_000, strict_genotypes=False):
        self.groups = groups
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.tol = tol
        self.max_iter = max_iter
        self.strict_genotypes = strict_genotypes

    @classmethod
    def from_lambdas(cls, sigma2, lambda1_sq, lambda2_sq, **kwargs) -> "BilevelGroupLassoMAP":
        w = PenaltyWeights.from_lambdas(sigma2, lambda1_sq, lambda2_sq)
        return cls(gamma1=w.gamma1, gamma2=w.gamma2, **kwargs)

    def fit(self, X, y):
        data, groups = self._validate_fit(X, y)
        res = solve_map(data, self.gamma1, self.gamma2, groups, tol=self.tol, max_iters=self.max_iter)
        self.coef_ = res.W
        self.converged_ = res.converged
        self.n_iter_ = res.n_iter
        self.objective_ = res.objective
        return self
