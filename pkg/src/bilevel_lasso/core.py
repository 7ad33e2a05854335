"""Domain types and exact log-density evaluations for the bi-level group lasso model.

Conventions used throughout the package:

* ``X`` is ``(n, d)`` genotypes, ``Y`` is ``(n, c)`` phenotypes, ``W`` is ``(d, c)``.
* SNP indices are 0-based internally; files use 1-based indices.
* ``tau2`` has one entry per gene group, ``omega2`` one entry per SNP.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class BilevelLassoError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(BilevelLassoError, ValueError):
    """Array dimensions do not conform."""


class InvalidParameterError(BilevelLassoError, ValueError):
    """A parameter violates its domain (e.g. a nonpositive variance)."""


class InvalidGroupsError(BilevelLassoError, ValueError):
    """A group specification is not a partition of the SNP indices."""


class InvalidGenotypeError(BilevelLassoError, ValueError):
    """Genotype entries outside {0, 1, 2} under strict validation."""


class NumericalConditioningError(BilevelLassoError, np.linalg.LinAlgError):
    """A factorization failed even after diagonal jitter."""

    def __init__(self, message: str, iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise InvalidParameterError(f"{name} must be a finite positive number, got {value!r}")
    return value


@dataclass(frozen=True, eq=False)
class GroupStructure:
    """Partition of ``num_snps`` SNP indices into gene groups.

    ``group_of[i]`` is the group of SNP ``i``; ``groups[k]`` holds the sorted SNP
    indices of group ``k``.
    """

    num_snps: int
    groups: tuple[np.ndarray, ...]
    group_of: np.ndarray = field(repr=False)
    sizes: np.ndarray = field(repr=False)

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[int]], num_snps: int | None = None) -> "GroupStructure":
        if len(groups) == 0:
            raise InvalidGroupsError("at least one group is required")
        arrays = []
        for k, g in enumerate(groups):
            a = np.asarray(sorted(int(i) for i in g), dtype=np.intp)
            if a.size == 0:
                raise InvalidGroupsError(f"group {k} is empty")
            if np.any(np.diff(a) == 0):
                raise InvalidGroupsError(f"group {k} lists an index twice")
            arrays.append(a)
        flat = np.concatenate(arrays)
        d = int(flat.max()) + 1 if num_snps is None else int(num_snps)
        if d < 1:
            raise InvalidGroupsError("num_snps must be positive")
        if flat.min() < 0 or flat.max() >= d:
            raise InvalidGroupsError(f"SNP indices must lie in [0, {d})")
        if flat.size != d or np.unique(flat).size != d:
            raise InvalidGroupsError("groups must be pairwise disjoint and cover every SNP exactly once")
        group_of = np.empty(d, dtype=np.intp)
        for k, a in enumerate(arrays):
            group_of[a] = k
        group_of.setflags(write=False)
        sizes = np.array([a.size for a in arrays], dtype=np.intp)
        sizes.setflags(write=False)
        for a in arrays:
            a.setflags(write=False)
        return cls(d, tuple(arrays), group_of, sizes)

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "GroupStructure":
        """Build from one group label per SNP; groups are ordered by first appearance of the label."""
        labels = list(labels)
        order: dict = {}
        members: list[list[int]] = []
        for i, lab in enumerate(labels):
            if lab not in order:
                order[lab] = len(members)
                members.append([])
            members[order[lab]].append(i)
        return cls.from_groups(members, num_snps=len(labels))

    @classmethod
    def equal(cls, num_snps: int, num_groups: int) -> "GroupStructure":
        """Contiguous groups of equal size ``num_snps / num_groups``."""
        if num_groups < 1 or num_snps < 1 or num_snps % num_groups:
            raise InvalidGroupsError(f"{num_groups} groups do not divide {num_snps} SNPs evenly")
        m = num_snps // num_groups
        return cls.from_groups([range(k * m, (k + 1) * m) for k in range(num_groups)], num_snps)

    @classmethod
    def singletons(cls, num_snps: int) -> "GroupStructure":
        return cls.from_groups([[i] for i in range(num_snps)], num_snps)

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def group_sums(self, values: np.ndarray) -> np.ndarray:
        """Sum a per-SNP vector within each group."""
        return np.bincount(self.group_of, weights=values, minlength=self.num_groups)

    def labels(self) -> np.ndarray:
        return np.asarray(self.group_of)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Genotype matrix ``X`` (n x d) and phenotype matrix ``Y`` (n x c)."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        Y = np.array(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or Y.ndim != 2:
            raise ShapeError("X and Y must be two-dimensional")
        if X.shape[0] != Y.shape[0]:
            raise ShapeError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if min(X.shape) < 1 or Y.shape[1] < 1:
            raise ShapeError("n, d and c must all be at least 1")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InvalidParameterError("X and Y must be finite")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @classmethod
    def create(cls, X, Y, *, strict_genotypes: bool = True, standardize: bool = False) -> "Dataset":
        """Validate and wrap data.

        With ``strict_genotypes`` every entry of ``X`` must be 0, 1 or 2.
        ``standardize`` centers and scales each column of ``X`` to unit variance
        (constant columns are only centered) and implies relaxed validation.
        """
        X = np.asarray(X, dtype=float)
        if strict_genotypes and not standardize:
            bad = ~np.isin(X, (0.0, 1.0, 2.0))
            if np.any(bad):
                i, j = np.argwhere(bad)[0]
                raise InvalidGenotypeError(f"X[{i}, {j}] = {X[i, j]!r} is not a genotype count in {{0, 1, 2}}")
        if standardize:
            X = X - X.mean(axis=0)
            sd = X.std(axis=0)
            X = X / np.where(sd > 0, sd, 1.0)
        return cls(X, Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def c(self) -> int:
        return self.Y.shape[1]


@dataclass
class ModelState:
    """One state of the Markov chain."""

    W: np.ndarray
    tau2: np.ndarray
    omega2: np.ndarray
    sigma2: float
    lambda1_sq: float
    lambda2_sq: float

    def validate(self) -> "ModelState":
        for name in ("tau2", "omega2"):
            v = getattr(self, name)
            if not (np.all(np.isfinite(v)) and np.all(v > 0)):
                raise InvalidParameterError(f"{name} must be finite and strictly positive")
        for name in ("sigma2", "lambda1_sq", "lambda2_sq"):
            _positive(name, getattr(self, name))
        if not np.all(np.isfinite(self.W)):
            raise InvalidParameterError("W must be finite")
        return self

    def prior_precision(self, groups: GroupStructure) -> np.ndarray:
        """Per-SNP ``1/tau2[k(i)] + 1/omega2[i]``."""
        return 1.0 / self.tau2[groups.group_of] + 1.0 / self.omega2

    def copy(self) -> "ModelState":
        return ModelState(self.W.copy(), self.tau2.copy(), self.omega2.copy(),
                          self.sigma2, self.lambda1_sq, self.lambda2_sq)


@dataclass(frozen=True)
class PriorConfig:
    """Inverse-gamma prior on sigma2 and Gamma(r, delta) hyperpriors on the two lambdas."""

    a_sigma: float = 2.0
    b_sigma: float = 1.0
    r1: float = 1.0
    delta1: float = 0.01
    r2: float = 1.0
    delta2: float = 0.01

    def __post_init__(self):
        for name in ("a_sigma", "b_sigma", "r1", "delta1", "r2", "delta2"):
            _positive(name, getattr(self, name))


def _nonnegative(name: str, value: float) -> float:
    value = float(value)
    if not (math.isfinite(value) and value >= 0):
        raise InvalidParameterError(f"{name} must be a finite nonnegative number, got {value!r}")
    return value


def _check_W(X: np.ndarray, Y: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    W = np.asarray(W, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if W.ndim == 1:
        W = W[:, None]
    if X.shape[0] != Y.shape[0] or X.shape[1] != W.shape[0] or W.shape[1] != Y.shape[1]:
        raise ShapeError(f"shapes X{X.shape}, W{W.shape}, Y{Y.shape} do not conform")
    return X, Y, W


def pointwise_log_likelihood(Y, X, W, sigma2) -> np.ndarray:
    """``log N_c(y_l; W^T x_l, sigma2 I)`` for every observation ``l``."""
    X, Y, W = _check_W(X, Y, W)
    sigma2 = _positive("sigma2", sigma2)
    R = Y - X @ W
    c = Y.shape[1]
    return -0.5 * c * math.log(2 * math.pi * sigma2) - np.einsum("ij,ij->i", R, R) / (2 * sigma2)


def log_likelihood(Y, X, W, sigma2) -> float:
    X, Y, W = _check_W(X, Y, W)
    sigma2 = _positive("sigma2", sigma2)
    n, c = Y.shape
    rss = float(np.sum((Y - X @ W) ** 2))
    return -0.5 * n * c * math.log(2 * math.pi * sigma2) - rss / (2 * sigma2)


def penalty_norms(W, groups: GroupStructure) -> tuple[float, float]:
    """Return ``(G21, L21)``: the sum of gene-block Frobenius norms and of SNP-row norms."""
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    if W.shape[0] != groups.num_snps:
        raise ShapeError(f"W has {W.shape[0]} rows but the groups cover {groups.num_snps} SNPs")
    row_sq = np.einsum("ij,ij->i", W, W)
    g21 = float(np.sum(np.sqrt(groups.group_sums(row_sq))))
    l21 = float(np.sum(np.sqrt(row_sq)))
    return g21, l21


def log_marginal_posterior_W(Y, X, W, sigma2, lambda1_sq, lambda2_sq, groups: GroupStructure) -> float:
    """Log of ``[W | Y, sigma2, lambda]`` up to an additive constant.

    Maximizing this is the same as minimizing
    ``||Y - XW||_F^2 + 2 sigma lambda1 G21(W) + 2 sigma lambda2 L21(W)``.
    """
    X, Y, W = _check_W(X, Y, W)
    sigma2 = _positive("sigma2", sigma2)
    lam1 = math.sqrt(_nonnegative("lambda1_sq", lambda1_sq))
    lam2 = math.sqrt(_nonnegative("lambda2_sq", lambda2_sq))
    g21, l21 = penalty_norms(W, groups)
    sigma = math.sqrt(sigma2)
    rss = float(np.sum((Y - X @ W) ** 2))
    return -rss / (2 * sigma2) - (lam1 / sigma) * g21 - (lam2 / sigma) * l21
