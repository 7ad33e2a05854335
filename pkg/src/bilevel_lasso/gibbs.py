"""Gibbs sampler for the bi-level group lasso scale-mixture model.

One systematic scan updates ``W -> tau2 -> omega2 -> sigma2`` and, in fully
Bayes mode, ``(lambda1_sq, lambda2_sq)``. With ``D = diag(d_i)``,
``d_i = 1/tau2[k(i)] + 1/omega2[i]``, the full conditionals are

* ``W[:, j] ~ N(M^-1 X^T y_j, sigma2 M^-1)`` with ``M = X^T X + D``;
* ``tau2[k] ~ GIG(1/2, lambda1_sq, S_k / sigma2)``, ``S_k`` the squared
  Frobenius norm of the gene block;
* ``omega2[i] ~ GIG(1/2, lambda2_sq, s_i / sigma2)``, ``s_i`` the squared row norm;
* ``sigma2 ~ InvGamma(a + (n + d) c / 2, b + RSS / 2 + sum_i d_i s_i / 2)``;
* ``lambda1_sq ~ Gamma(r1 + sum_k (m_k c + 1) / 2, delta1 + sum_k tau2[k] / 2)``
  and the analogous update for ``lambda2_sq``.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .core import (
    Dataset,
    GroupStructure,
    InvalidParameterError,
    ModelState,
    NumericalConditioningError,
    PriorConfig,
)
from .rng import SeededStream, draw_gamma, draw_inverse_gamma, draw_inverse_gaussian


class Mode(str, enum.Enum):
    FIXED = "fixed"
    FULLY_BAYES = "fully-bayes"


@dataclass(frozen=True)
class GibbsConfig:
    n_iter: int = 10_000
    burn_in: int = 2_000
    thin: int = 2
    mode: Mode = Mode.FIXED
    lambda1_sq: float = 1.0
    lambda2_sq: float = 1.0
    eps_scale: float = 1e-12
    store_W: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not (0 <= self.burn_in < self.n_iter):
            raise InvalidParameterError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise InvalidParameterError("thin must be at least 1")
        if not (self.lambda1_sq > 0 and self.lambda2_sq > 0):
            raise InvalidParameterError("lambda values must be positive")
        if not self.eps_scale > 0:
            raise InvalidParameterError("eps_scale must be positive")

    @property
    def n_kept(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin


@dataclass
class ChainOutput:
    """Thinned post-burn-in draws plus full-length traces of the scalar parameters.

    Per-draw arrays have a leading axis of length ``n_kept``; ``*_trace`` arrays
    have one entry per iteration, burn-in included.
    """

    W: np.ndarray | None
    W_mean: np.ndarray
    tau2: np.ndarray
    omega2: np.ndarray
    sigma2: np.ndarray
    lambda1_sq: np.ndarray
    lambda2_sq: np.ndarray
    pointwise_loglik: np.ndarray
    loglik_trace: np.ndarray
    sigma2_trace: np.ndarray
    lambda1_trace: np.ndarray
    lambda2_trace: np.ndarray
    final_state: ModelState
    n_iter: int
    burn_in: int
    thin: int
    seed: int
    stream_id: int
    mode: Mode = Mode.FIXED

    def __len__(self) -> int:
        return self.sigma2.shape[0]

    @property
    def draws(self) -> Iterator[ModelState]:
        if self.W is None:
            raise ValueError("W draws were not stored (store_W=False)")
        for s in range(len(self)):
            yield ModelState(self.W[s], self.tau2[s], self.omega2[s], float(self.sigma2[s]),
                             float(self.lambda1_sq[s]), float(self.lambda2_sq[s]))


@dataclass
class PosteriorSummary:
    W_mean: np.ndarray
    W_lower: np.ndarray
    W_upper: np.ndarray
    scalars: dict = field(default_factory=dict)


class _Cache:
    """Data products reused across iterations."""

    def __init__(self, data: Dataset):
        self.X = data.X
        self.Y = data.Y
        self.dual = data.d > data.n
        self.XtY = data.X.T @ data.Y
        self.XtX = None if self.dual else data.X.T @ data.X
        self.yy = float(np.sum(data.Y ** 2))


def _cholesky(A: np.ndarray, what: str):
    try:
        return cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    A = A.copy()
    A[np.diag_indices_from(A)] += 1e-10 * np.trace(A) / A.shape[0]
    try:
        return cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalConditioningError(f"Cholesky factorization of {what} failed after jitter") from exc


def conditional_W_moments(state: ModelState, data: Dataset, groups: GroupStructure):
    """Mean ``M^-1 X^T Y`` and covariance ``sigma2 M^-1`` (shared across columns)."""
    D = state.prior_precision(groups)
    M = data.X.T @ data.X + np.diag(D)
    cf = _cholesky(M, "X^T X + D")
    mean = cho_solve(cf, data.X.T @ data.Y)
    cov = state.sigma2 * cho_solve(cf, np.eye(data.d))
    return mean, cov


def update_W(state: ModelState, data: Dataset, groups: GroupStructure, stream: SeededStream,
             cache: _Cache | None = None) -> np.ndarray:
    """Draw every column of ``W`` from its Gaussian full conditional.

    Uses one Cholesky factorization for all ``c`` columns: of ``X^T X + D`` when
    ``d <= n``, otherwise of ``X D^-1 X^T + I`` (the exact ``n x n`` sampler of
    Bhattacharya, Chakraborty and Mallick, 2016).
    """
    cache = cache or _Cache(data)
    D = state.prior_precision(groups)
    sigma = math.sqrt(state.sigma2)
    d, c = data.d, data.c
    if not cache.dual:
        M = cache.XtX.copy()
        M[np.diag_indices(d)] += D
        L, _ = _cholesky(M, "X^T X + D")
        mean = cho_solve((L, True), cache.XtY, check_finite=False)
        z = stream.standard_normal((d, c))
        return mean + sigma * solve_triangular(L, z, lower=True, trans="T", check_finite=False)
    # Bhattacharya et al. in units of sigma: target N(M^-1 X^T y / sigma, M^-1).
    X = cache.X
    Dinv = 1.0 / D
    G = (X * Dinv) @ X.T
    G[np.diag_indices(data.n)] += 1.0
    cf = _cholesky(G, "X D^-1 X^T + I")
    u = np.sqrt(Dinv)[:, None] * stream.standard_normal((d, c))
    delta = stream.standard_normal((data.n, c))
    v = X @ u + delta
    w = cho_solve(cf, cache.Y / sigma - v, check_finite=False)
    return sigma * (u + Dinv[:, None] * (X.T @ w))


def _gig_half(lam_sq: float, b: np.ndarray, sigma2: float, eps_scale: float, stream: SeededStream) -> np.ndarray:
    # GIG(1/2, a=lam_sq, b=S/sigma2): its reciprocal is inverse Gaussian; b -> 0 limit is Gamma(1/2, a/2).
    out = np.empty_like(b)
    tiny = b < eps_scale
    ok = ~tiny
    if np.any(ok):
        mu = np.sqrt(lam_sq * sigma2 / b[ok])
        out[ok] = 1.0 / draw_inverse_gaussian(mu, np.full(mu.shape, lam_sq), stream)
    if np.any(tiny):
        out[tiny] = draw_gamma(0.5, lam_sq / 2.0, stream, size=int(tiny.sum()))
    return out


def update_tau2(state: ModelState, data: Dataset, groups: GroupStructure, stream: SeededStream,
                eps_scale: float = 1e-12) -> np.ndarray:
    row_sq = np.einsum("ij,ij->i", state.W, state.W)
    S = groups.group_sums(row_sq)
    return _gig_half(state.lambda1_sq, S, state.sigma2, eps_scale, stream)


def update_omega2(state: ModelState, data: Dataset, groups: GroupStructure, stream: SeededStream,
                  eps_scale: float = 1e-12) -> np.ndarray:
    s = np.einsum("ij,ij->i", state.W, state.W)
    return _gig_half(state.lambda2_sq, s, state.sigma2, eps_scale, stream)


def sigma2_conditional(state: ModelState, data: Dataset, groups: GroupStructure, prior: PriorConfig,
                       rss: float | None = None) -> tuple[float, float]:
    """Shape and rate of the inverse-gamma full conditional of ``sigma2``."""
    n, d, c = data.n, data.d, data.c
    if rss is None:
        rss = float(np.sum((data.Y - data.X @ state.W) ** 2))
    quad = float(np.sum(state.prior_precision(groups) * np.einsum("ij,ij->i", state.W, state.W)))
    return prior.a_sigma + 0.5 * (n + d) * c, prior.b_sigma + 0.5 * rss + 0.5 * quad


def update_sigma2(state: ModelState, data: Dataset, groups: GroupStructure, stream: SeededStream,
                  prior: PriorConfig | None = None, rss: float | None = None) -> float:
    shape, rate = sigma2_conditional(state, data, groups, prior or PriorConfig(), rss)
    return draw_inverse_gamma(shape, rate, stream)


def lambda_conditionals(state: ModelState, groups: GroupStructure, prior: PriorConfig, c: int):
    """``((shape1, rate1), (shape2, rate2))`` of the Gamma full conditionals of the lambdas."""
    shape1 = prior.r1 + 0.5 * float(np.sum(groups.sizes * c + 1))
    rate1 = prior.delta1 + 0.5 * float(np.sum(state.tau2))
    shape2 = prior.r2 + 0.5 * groups.num_snps * (c + 1)
    rate2 = prior.delta2 + 0.5 * float(np.sum(state.omega2))
    return (shape1, rate1), (shape2, rate2)


def update_lambdas(state: ModelState, groups: GroupStructure, prior: PriorConfig, stream: SeededStream,
                   c: int | None = None) -> tuple[float, float]:
    c = state.W.shape[1] if c is None else c
    (k1, r1), (k2, r2) = lambda_conditionals(state, groups, prior, c)
    return draw_gamma(k1, r1, stream), draw_gamma(k2, r2, stream)


def initial_state(data: Dataset, groups: GroupStructure, prior: PriorConfig,
                  lambda1_sq: float, lambda2_sq: float) -> ModelState:
    """Unit-ridge ``W``, scales at their approximate prior means, residual-variance ``sigma2``."""
    X, Y = data.X, data.Y
    if data.d <= data.n:
        W = np.linalg.solve(X.T @ X + np.eye(data.d), X.T @ Y)
    else:
        W = X.T @ np.linalg.solve(X @ X.T + np.eye(data.n), Y)
    rss = float(np.sum((Y - X @ W) ** 2))
    sigma2 = rss / (data.n * data.c)
    if not sigma2 > 0:
        sigma2 = prior.b_sigma / (prior.a_sigma + 1.0)
    tau2 = (groups.sizes * data.c + 1.0) / lambda1_sq
    omega2 = np.full(data.d, (data.c + 1.0) / lambda2_sq)
    return ModelState(W, tau2.astype(float), omega2, sigma2, float(lambda1_sq), float(lambda2_sq))


def _check_inputs(data: Dataset, groups: GroupStructure):
    if groups.num_snps != data.d:
        raise InvalidParameterError(f"groups cover {groups.num_snps} SNPs but X has {data.d} columns")


def run_chain(data: Dataset, groups: GroupStructure, prior: PriorConfig, config: GibbsConfig,
              stream: SeededStream, init: ModelState | None = None) -> ChainOutput:
    """Run one chain of ``config.n_iter`` systematic scans.

    ``init`` overrides the default initialization; in fixed mode its lambdas are
    replaced by ``config``'s.
    """
    _check_inputs(data, groups)
    fully_bayes = config.mode is Mode.FULLY_BAYES
    if init is None:
        state = initial_state(data, groups, prior, config.lambda1_sq, config.lambda2_sq)
    else:
        state = init.copy()
        if not fully_bayes:
            state.lambda1_sq, state.lambda2_sq = float(config.lambda1_sq), float(config.lambda2_sq)
    state.validate()
    cache = _Cache(data)
    n, d, c, K = data.n, data.d, data.c, groups.num_groups
    S = config.n_kept
    W_draws = np.empty((S, d, c)) if config.store_W else None
    W_sum = np.zeros((d, c))
    out = dict(
        tau2=np.empty((S, K)), omega2=np.empty((S, d)), sigma2=np.empty(S),
        lambda1_sq=np.empty(S), lambda2_sq=np.empty(S), pointwise_loglik=np.empty((S, n)),
    )
    traces = {k: np.empty(config.n_iter) for k in ("loglik", "sigma2", "lambda1", "lambda2")}
    log2pi = math.log(2 * math.pi)
    s = 0
    for t in range(config.n_iter):
        try:
            state.W = update_W(state, data, groups, stream, cache)
        except NumericalConditioningError as exc:
            raise NumericalConditioningError(str(exc), iteration=t) from exc
        state.tau2 = update_tau2(state, data, groups, stream, config.eps_scale)
        state.omega2 = update_omega2(state, data, groups, stream, config.eps_scale)
        R = data.Y - data.X @ state.W
        row_rss = np.einsum("ij,ij->i", R, R)
        state.sigma2 = update_sigma2(state, data, groups, stream, prior, float(row_rss.sum()))
        if fully_bayes:
            state.lambda1_sq, state.lambda2_sq = update_lambdas(state, groups, prior, stream, c)
        ll = -0.5 * c * (log2pi + math.log(state.sigma2)) - row_rss / (2 * state.sigma2)
        traces["loglik"][t] = ll.sum()
        traces["sigma2"][t] = state.sigma2
        traces["lambda1"][t] = state.lambda1_sq
        traces["lambda2"][t] = state.lambda2_sq
        if t >= config.burn_in and (t + 1 - config.burn_in) % config.thin == 0:
            if W_draws is not None:
                W_draws[s] = state.W
            W_sum += state.W
            out["tau2"][s] = state.tau2
            out["omega2"][s] = state.omega2
            out["sigma2"][s] = state.sigma2
            out["lambda1_sq"][s] = state.lambda1_sq
            out["lambda2_sq"][s] = state.lambda2_sq
            out["pointwise_loglik"][s] = ll
            s += 1
    return ChainOutput(
        W=W_draws, W_mean=W_sum / max(S, 1), **out,
        loglik_trace=traces["loglik"], sigma2_trace=traces["sigma2"],
        lambda1_trace=traces["lambda1"], lambda2_trace=traces["lambda2"],
        final_state=state, n_iter=config.n_iter, burn_in=config.burn_in, thin=config.thin,
        seed=stream.seed, stream_id=stream.stream_id, mode=config.mode,
    )


def run_chains(data: Dataset, groups: GroupStructure, prior: PriorConfig, config: GibbsConfig,
               seed: int, n_chains: int = 1, jobs: int = 1,
               init_lambdas: Sequence[tuple[float, float]] | None = None) -> list[ChainOutput]:
    """Run independent chains; chain ``k`` uses stream ``k`` so results do not depend on ``jobs``.

    ``init_lambdas[k]`` sets the starting ``(lambda1_sq, lambda2_sq)`` of chain ``k``
    (fully Bayes mode only).
    """
    if n_chains < 1:
        raise InvalidParameterError("n_chains must be at least 1")
    if init_lambdas is not None and len(init_lambdas) != n_chains:
        raise InvalidParameterError("need one initial lambda pair per chain")

    def one(k: int) -> ChainOutput:
        init = None
        if init_lambdas is not None and config.mode is Mode.FULLY_BAYES:
            l1, l2 = init_lambdas[k]
            init = initial_state(data, groups, prior, l1, l2)
        return run_chain(data, groups, prior, config, SeededStream(seed, k), init)

    if jobs <= 1 or n_chains == 1:
        return [one(k) for k in range(n_chains)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, range(n_chains)))


def posterior_summary(chain: ChainOutput | Sequence[ChainOutput], level: float = 0.95) -> PosteriorSummary:
    """Elementwise posterior means and equal-tailed credible intervals of ``W``.

    A sequence of chains is pooled.
    """
    chains = [chain] if isinstance(chain, ChainOutput) else list(chain)
    if not chains or any(len(ch) == 0 for ch in chains):
        raise InvalidParameterError("posterior_summary needs a non-empty chain")
    if any(ch.W is None for ch in chains):
        raise InvalidParameterError("posterior_summary needs stored W draws")
    W = np.concatenate([ch.W for ch in chains])
    alpha = (1.0 - level) / 2.0
    lower, upper = np.quantile(W, [alpha, 1.0 - alpha], axis=0)
    scalars = {}
    for name in ("sigma2", "lambda1_sq", "lambda2_sq"):
        v = np.concatenate([getattr(ch, name) for ch in chains])
        lo, hi = np.quantile(v, [alpha, 1.0 - alpha])
        scalars[name] = {"mean": float(v.mean()), "lower": float(lo), "upper": float(hi)}
    return PosteriorSummary(W.mean(axis=0), lower, upper, scalars)
