"""Synthetic data from the simulation design with independent Gamma scale variables."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import Dataset, GroupStructure, InvalidParameterError
from .rng import SeededStream, draw_gamma


@dataclass(frozen=True)
class SimConfig:
    n: int = 500
    d: int = 200
    K: int = 20
    c: int = 5
    lambda1_sq: float = 2.0
    lambda2_sq: float = 2.0
    sigma2: float = 2.0
    seed: int = 1

    def __post_init__(self):
        if min(self.n, self.d, self.K, self.c) < 1:
            raise InvalidParameterError("n, d, K and c must be positive")
        if self.d % self.K:
            raise InvalidParameterError(f"K={self.K} does not divide d={self.d} into equal groups")
        if not (self.lambda1_sq > 0 and self.lambda2_sq > 0 and self.sigma2 > 0):
            raise InvalidParameterError("lambda1_sq, lambda2_sq and sigma2 must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


CASE1 = SimConfig(n=500, d=200, K=20, c=5)
CASE2 = SimConfig(n=500, d=1500, K=150, c=5)


@dataclass
class SimResult:
    data: Dataset
    groups: GroupStructure
    W_true: np.ndarray
    tau2_true: np.ndarray
    omega2_true: np.ndarray


def simulate(config: SimConfig, groups: GroupStructure | None = None) -> SimResult:
    """Draw one dataset with its ground truth.

    ``tau2[k] ~ Gamma((m_k c + 1)/2, rate=lambda1_sq/2)``,
    ``omega2[i] ~ Gamma((c + 1)/2, rate=lambda2_sq/2)``,
    ``w_ij ~ N(0, sigma2 / (1/tau2[k(i)] + 1/omega2[i]))``, genotypes uniform on
    {0, 1, 2} and ``y_l ~ N(W^T x_l, sigma2 I)``.
    """
    if groups is None:
        groups = GroupStructure.equal(config.d, config.K)
    elif groups.num_snps != config.d:
        raise InvalidParameterError("groups do not match d")
    stream = SeededStream(config.seed, 0)
    c = config.c
    tau2 = np.asarray(draw_gamma((groups.sizes * c + 1) / 2.0, config.lambda1_sq / 2.0, stream), dtype=float)
    omega2 = np.asarray(draw_gamma(np.full(config.d, (c + 1) / 2.0), config.lambda2_sq / 2.0, stream), dtype=float)
    var = config.sigma2 / (1.0 / tau2[groups.group_of] + 1.0 / omega2)
    W = np.sqrt(var)[:, None] * stream.standard_normal((config.d, c))
    X = stream.generator.integers(0, 3, size=(config.n, config.d)).astype(float)
    Y = X @ W + np.sqrt(config.sigma2) * stream.standard_normal((config.n, c))
    return SimResult(Dataset(X, Y), groups, W, tau2, omega2)
