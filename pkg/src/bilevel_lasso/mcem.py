"""Empirical Bayes estimation of ``(lambda1_sq, lambda2_sq)`` by Monte Carlo EM.

The E-step averages ``tau2`` and ``omega2`` over a fixed-lambda Gibbs chain; the
M-step maximizes the expected log of the scale-mixing kernel, which has the
closed form

    lambda1_sq = sum_k (m_k c + 1) / sum_k E[tau2_k]
    lambda2_sq = d (c + 1) / sum_i E[omega2_i]
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core import Dataset, GroupStructure, InvalidParameterError, ModelState, PriorConfig
from .gibbs import ChainOutput, GibbsConfig, Mode, run_chain
from .rng import SeededStream


class McemStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max-iters"
    DIVERGED = "diverged"


def geometric_schedule(max_iters: int, start: int = 500, growth: float = 1.2, cap: int = 5000) -> tuple[int, ...]:
    return tuple(min(cap, int(round(start * growth ** t))) for t in range(max_iters))


@dataclass(frozen=True)
class McemConfig:
    max_iters: int = 100
    mc_samples_schedule: tuple[int, ...] | None = None
    lambda_init: tuple[float, float] = (1.0, 1.0)
    divergence_cap: float = 1e6
    convergence_tol: float = 1e-3
    patience: int = 3
    burn_in: int = 100

    def __post_init__(self):
        if self.max_iters < 0:
            raise InvalidParameterError("max_iters must be nonnegative")
        sched = self.mc_samples_schedule
        if sched is None:
            sched = geometric_schedule(self.max_iters)
        sched = tuple(int(s) for s in sched)
        if len(sched) < self.max_iters:
            raise InvalidParameterError("mc_samples_schedule is shorter than max_iters")
        if any(s < 1 for s in sched) or any(b < a for a, b in zip(sched, sched[1:])):
            raise InvalidParameterError("mc_samples_schedule must be positive and nondecreasing")
        object.__setattr__(self, "mc_samples_schedule", sched)
        l1, l2 = (float(v) for v in self.lambda_init)
        if not (l1 > 0 and l2 > 0):
            raise InvalidParameterError("lambda_init must be positive")
        if not self.divergence_cap > max(l1, l2):
            raise InvalidParameterError("divergence_cap must exceed the initial lambdas")
        object.__setattr__(self, "lambda_init", (l1, l2))
        if not self.convergence_tol > 0 or self.patience < 1 or self.burn_in < 0:
            raise InvalidParameterError("invalid convergence settings")


@dataclass
class McemTrace:
    """Row 0 holds ``lambda_init``; row ``t`` the estimate after iteration ``t``."""

    lambda1_sq: list[float]
    lambda2_sq: list[float]
    n_samples: list[int] = field(default_factory=list)
    status: McemStatus = McemStatus.MAX_ITERS

    @property
    def n_iterations(self) -> int:
        return len(self.lambda1_sq) - 1

    @property
    def final(self) -> tuple[float, float]:
        return self.lambda1_sq[-1], self.lambda2_sq[-1]

    def rows(self):
        """``(iteration, lambda1_sq, lambda2_sq, n_samples, status)`` tuples; status is final on the last row."""
        last = self.n_iterations
        for t, (a, b) in enumerate(zip(self.lambda1_sq, self.lambda2_sq)):
            ns = self.n_samples[t - 1] if t > 0 else 0
            yield t, a, b, ns, self.status.value if t == last else "running"


def scale_means(chain: ChainOutput) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo means of ``tau2`` and ``omega2`` over the stored draws."""
    if len(chain) == 0:
        raise InvalidParameterError("empty chain")
    return chain.tau2.mean(axis=0), chain.omega2.mean(axis=0)


def _e_chain(data, groups, prior, lambda_current, n_samples, stream, init=None, burn_in=0) -> ChainOutput:
    l1, l2 = lambda_current
    cfg = GibbsConfig(n_iter=burn_in + n_samples, burn_in=burn_in, thin=1, mode=Mode.FIXED,
                      lambda1_sq=l1, lambda2_sq=l2, store_W=False)
    return run_chain(data, groups, prior, cfg, stream, init)


def e_step(data: Dataset, groups: GroupStructure, prior: PriorConfig, lambda_current: tuple[float, float],
           n_samples: int, stream: SeededStream, init: ModelState | None = None,
           burn_in: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means of the scale variables at fixed lambdas, from ``n_samples`` Gibbs draws."""
    return scale_means(_e_chain(data, groups, prior, lambda_current, n_samples, stream, init, burn_in))


def m_step(mean_tau2, mean_omega2, groups: GroupStructure, c: int) -> tuple[float, float]:
    mean_tau2 = np.asarray(mean_tau2, dtype=float)
    mean_omega2 = np.asarray(mean_omega2, dtype=float)
    s1, s2 = float(mean_tau2.sum()), float(mean_omega2.sum())
    if not (s1 > 0 and s2 > 0):
        raise InvalidParameterError("scale means must have a positive sum")
    return float(np.sum(groups.sizes * c + 1)) / s1, groups.num_snps * (c + 1.0) / s2


def run_mcem(data: Dataset, groups: GroupStructure, prior: PriorConfig, config: McemConfig,
             stream: SeededStream, callback: Callable[[int, float, float], None] | None = None) -> McemTrace:
    """Alternate E- and M-steps until convergence, divergence or ``max_iters``.

    Converged: both lambdas move by less than ``convergence_tol`` (relative) for
    ``patience`` consecutive iterations. Diverged: either lambda exceeds
    ``divergence_cap``. Each E-step warm-starts from the previous chain's final state.
    ``callback(iteration, lambda1_sq, lambda2_sq)`` is called after every M-step.
    """
    l1, l2 = config.lambda_init
    trace = McemTrace([l1], [l2])
    state = None
    calm = 0
    for t in range(config.max_iters):
        n_s = config.mc_samples_schedule[t]
        chain = _e_chain(data, groups, prior, (l1, l2), n_s, stream, state, config.burn_in)
        state = chain.final_state
        new1, new2 = m_step(*scale_means(chain), groups, data.c)
        trace.lambda1_sq.append(new1)
        trace.lambda2_sq.append(new2)
        trace.n_samples.append(n_s)
        if callback is not None:
            callback(t + 1, new1, new2)
        if new1 > config.divergence_cap or new2 > config.divergence_cap:
            trace.status = McemStatus.DIVERGED
            return trace
        rel = max(abs(new1 - l1) / l1, abs(new2 - l2) / l2)
        calm = calm + 1 if rel < config.convergence_tol else 0
        l1, l2 = new1, new2
        if calm >= config.patience:
            trace.status = McemStatus.CONVERGED
            return trace
    trace.status = McemStatus.MAX_ITERS
    return trace


def run_mcem_multi(data: Dataset, groups: GroupStructure, prior: PriorConfig, config: McemConfig,
                   inits: Sequence[tuple[float, float]], seed: int, jobs: int = 1) -> list[McemTrace]:
    """Independent MCEM runs from several starting points; run ``k`` uses stream ``k``."""
    def one(k: int) -> McemTrace:
        cfg = replace(config, lambda_init=tuple(inits[k]))
        return run_mcem(data, groups, prior, cfg, SeededStream(seed, k))

    if jobs <= 1 or len(inits) <= 1:
        return [one(k) for k in range(len(inits))]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, range(len(inits))))
