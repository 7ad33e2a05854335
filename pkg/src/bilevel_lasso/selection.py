"""Tuning-parameter selection: WAIC grid search and the approximate marginal likelihood surface."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import gammaln, logsumexp

from .core import (
    BilevelLassoError,
    Dataset,
    GroupStructure,
    InvalidParameterError,
    NumericalConditioningError,
    PriorConfig,
)
from .gibbs import ChainOutput, GibbsConfig, Mode, run_chain
from .rng import SeededStream


@dataclass(frozen=True)
class LambdaGrid:
    values1: tuple[float, ...]
    values2: tuple[float, ...]

    def __post_init__(self):
        for name in ("values1", "values2"):
            v = tuple(float(x) for x in getattr(self, name))
            if not v:
                raise InvalidParameterError(f"{name} must be non-empty")
            if any(not (x > 0 and math.isfinite(x)) for x in v):
                raise InvalidParameterError(f"{name} must be positive")
            if any(b <= a for a, b in zip(v, v[1:])):
                raise InvalidParameterError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, v)

    @classmethod
    def logspace(cls, lo: float = 1e-2, hi: float = 1e3, num: int = 15) -> "LambdaGrid":
        v = tuple(np.logspace(math.log10(lo), math.log10(hi), num))
        return cls(v, v)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.values1), len(self.values2)

    def points(self):
        """Grid points in row-major order, i.e. lexicographic in ``(lambda1_sq, lambda2_sq)``."""
        for a in self.values1:
            for b in self.values2:
                yield a, b


DEFAULT_GRID = LambdaGrid.logspace()


# --------------------------------------------------------------------------- WAIC

def waic_from_pointwise(loglik: np.ndarray) -> tuple[float, float, float]:
    """``(lppd, p_waic, waic)`` from an ``(S, n)`` array of ``log p(y_l | W_s, sigma2_s)``."""
    loglik = np.asarray(loglik, dtype=float)
    if loglik.ndim != 2 or loglik.shape[0] < 2:
        raise InvalidParameterError("WAIC needs at least two draws")
    S = loglik.shape[0]
    lppd = float(np.sum(logsumexp(loglik, axis=0) - math.log(S)))
    p_waic = float(np.sum(np.var(loglik, axis=0, ddof=1)))
    return lppd, p_waic, -2.0 * lppd + 2.0 * p_waic


def waic_from_chain(chain: ChainOutput | Sequence[ChainOutput], data: Dataset | None = None):
    chains = [chain] if isinstance(chain, ChainOutput) else list(chain)
    ll = np.concatenate([ch.pointwise_loglik for ch in chains])
    if data is not None and ll.shape[1] != data.n:
        raise InvalidParameterError("chain log densities do not match the number of observations")
    return waic_from_pointwise(ll)


@dataclass
class WaicRow:
    lambda1_sq: float
    lambda2_sq: float
    lppd: float = math.nan
    p_waic: float = math.nan
    waic: float = math.nan
    error: str = ""


@dataclass
class WaicTable:
    rows: list[WaicRow]

    @property
    def argmin(self) -> WaicRow:
        """Smallest WAIC among successful rows; ties go to the lexicographically smallest lambdas."""
        best = None
        for row in sorted(self.rows, key=lambda r: (r.lambda1_sq, r.lambda2_sq)):
            if row.error or not math.isfinite(row.waic):
                continue
            if best is None or row.waic < best.waic:
                best = row
        if best is None:
            raise BilevelLassoError("no grid point produced a WAIC value")
        return best

    @property
    def failures(self) -> list[WaicRow]:
        return [r for r in self.rows if r.error]


def waic_grid_search(data: Dataset, groups: GroupStructure, prior: PriorConfig, grid: LambdaGrid,
                     gibbs_config: GibbsConfig, seed: int, jobs: int = 1) -> WaicTable:
    """One fixed-lambda chain per grid point; point ``p`` (row-major) uses stream ``p``."""
    points = list(grid.points())

    def one(p: int) -> WaicRow:
        l1, l2 = points[p]
        cfg = replace(gibbs_config, mode=Mode.FIXED, lambda1_sq=l1, lambda2_sq=l2, store_W=False)
        try:
            chain = run_chain(data, groups, prior, cfg, SeededStream(seed, p))
            lppd, pw, w = waic_from_chain(chain, data)
        except (BilevelLassoError, np.linalg.LinAlgError, FloatingPointError) as exc:
            return WaicRow(l1, l2, error=f"{type(exc).__name__}: {exc}")
        return WaicRow(l1, l2, lppd, pw, w)

    if jobs <= 1:
        rows = [one(p) for p in range(len(points))]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one, range(len(points))))
    return WaicTable(rows)


# --------------------------------------------------------------------------- marginal likelihood

def plugin_prior_variances(groups: GroupStructure, c: int, lambda1_sq: float, lambda2_sq: float) -> np.ndarray:
    """Diagonal of ``A``: ``(lambda2_sq / (c+1) + lambda1_sq / (m_k(i) c + 1))^-1``."""
    m = groups.sizes[groups.group_of]
    return 1.0 / (lambda2_sq / (c + 1.0) + lambda1_sq / (m * c + 1.0))


def _ml_constant(n: int, c: int, prior: PriorConfig) -> float:
    a, b = prior.a_sigma, prior.b_sigma
    return -0.5 * n * c * math.log(2 * math.pi) + a * math.log(b) + gammaln(0.5 * n * c + a) - gammaln(a)


def _ml_from_parts(n, c, prior, logdet_B, quad) -> float:
    return (_ml_constant(n, c, prior) - 0.5 * logdet_B
            - (0.5 * n * c + prior.a_sigma) * math.log(prior.b_sigma + 0.5 * quad))


def _cholesky_or_fail(A, what):
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


class _MLCache:
    def __init__(self, data: Dataset):
        self.n, self.d, self.c = data.n, data.d, data.c
        self.X = data.X
        self.Y = data.Y
        self.yy = float(np.sum(data.Y ** 2))
        self.small_d = data.d < data.n
        if self.small_d:
            self.XtX = data.X.T @ data.X
            self.XtY = data.X.T @ data.Y


def _ml_structured(cache: _MLCache, a: np.ndarray, prior: PriorConfig) -> float:
    n, c = cache.n, cache.c
    if cache.small_d:
        # Woodbury on the d x d side: C = I + A^1/2 X^T X A^1/2.
        r = np.sqrt(a)
        C = r[:, None] * cache.XtX * r[None, :]
        C[np.diag_indices_from(C)] += 1.0
        L, _ = _cholesky_or_fail(C, "I + A^1/2 X^T X A^1/2")
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        Z = solve_triangular(L, r[:, None] * cache.XtY, lower=True, check_finite=False)
        quad = cache.yy - float(np.sum(Z * Z))
    else:
        G = (cache.X * a) @ cache.X.T
        G[np.diag_indices_from(G)] += 1.0
        L, _ = _cholesky_or_fail(G, "X A X^T + I")
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        Z = solve_triangular(L, cache.Y, lower=True, check_finite=False)
        quad = float(np.sum(Z * Z))
    return _ml_from_parts(n, c, prior, c * logdet, quad)


def ml_approx_dense(data: Dataset, groups: GroupStructure, prior: PriorConfig,
                    lambda1_sq: float, lambda2_sq: float) -> float:
    """Reference evaluation with the full ``cn x cn`` matrix ``B``; only for small problems."""
    n, c = data.n, data.c
    a = plugin_prior_variances(groups, c, lambda1_sq, lambda2_sq)
    IX = np.kron(np.eye(c), data.X)
    B = IX @ np.kron(np.eye(c), np.diag(a)) @ IX.T + np.eye(c * n)
    y = data.Y.reshape(-1, order="F")
    sign, logdet = np.linalg.slogdet(B)
    quad = float(y @ np.linalg.solve(B, y))
    return _ml_from_parts(n, c, prior, logdet, quad)


def ml_approx(data: Dataset, groups: GroupStructure, prior: PriorConfig,
              lambda1_sq: float, lambda2_sq: float) -> float:
    """Log of the plug-in approximation to ``p(Y | lambda1_sq, lambda2_sq)``.

    The scale variables are replaced by their approximate prior means, ``W`` and
    ``sigma2`` are integrated out analytically, and the ``cn x cn`` covariance
    ``B = I_c (x) (X A X^T + I_n)`` is handled through its Kronecker structure.
    """
    if not (lambda1_sq > 0 and lambda2_sq > 0):
        raise InvalidParameterError("lambda values must be positive")
    if groups.num_snps != data.d:
        raise InvalidParameterError("groups do not match the number of SNPs")
    a = plugin_prior_variances(groups, data.c, lambda1_sq, lambda2_sq)
    return _ml_structured(_MLCache(data), a, prior)


@dataclass
class MLSurface:
    grid: LambdaGrid
    values: np.ndarray
    argmax: tuple[float, float]
    argmax_index: tuple[int, int]
    location: str
    errors: dict = field(default_factory=dict)

    @property
    def range(self) -> float:
        v = self.values[np.isfinite(self.values)]
        return float(v.max() - v.min())

    def rows(self):
        for i, a in enumerate(self.grid.values1):
            for j, b in enumerate(self.grid.values2):
                yield a, b, float(self.values[i, j])


def ml_surface(data: Dataset, groups: GroupStructure, prior: PriorConfig, grid: LambdaGrid = DEFAULT_GRID,
               rtol: float = 1e-12) -> MLSurface:
    """Log ``ml_approx`` over a grid with argmax and its location.

    ``location`` is ``"interior"``, ``"boundary"`` or ``"tie"`` (every point equal
    within ``rtol``). Ties in the argmax go to the lexicographically smallest lambdas.
    """
    if groups.num_snps != data.d:
        raise InvalidParameterError("groups do not match the number of SNPs")
    cache = _MLCache(data)
    values = np.full(grid.shape, np.nan)
    errors = {}
    for i, l1 in enumerate(grid.values1):
        for j, l2 in enumerate(grid.values2):
            try:
                values[i, j] = _ml_structured(cache, plugin_prior_variances(groups, data.c, l1, l2), prior)
            except BilevelLassoError as exc:
                errors[(l1, l2)] = str(exc)
    finite = np.isfinite(values)
    if not finite.any():
        raise BilevelLassoError("the marginal likelihood failed at every grid point")
    best = np.max(values[finite])
    masked = np.where(finite, values, -np.inf)
    i, j = map(int, np.unravel_index(int(np.argmax(masked)), grid.shape))
    lo = np.min(values[finite])
    if best - lo <= rtol * max(1.0, abs(best)):
        location = "tie"
    elif i in (0, grid.shape[0] - 1) or j in (0, grid.shape[1] - 1):
        location = "boundary"
    else:
        location = "interior"
    return MLSurface(grid, values, (grid.values1[i], grid.values2[j]), (i, j), location, errors)
