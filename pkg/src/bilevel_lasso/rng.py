"""Seeded random-variate generation.

Every sampler takes a :class:`SeededStream`. Streams are numpy ``PCG64``
generators keyed by ``(seed, stream_id)`` through ``SeedSequence`` spawn keys,
so chain ``k`` of a run draws the same numbers no matter how many workers
execute the run or in which order they finish.

All ``draw_*`` functions broadcast over array parameters and return an array
of the broadcast shape (a float for scalar parameters).
"""
from __future__ import annotations

import numpy as np

from .core import InvalidParameterError


class SeededStream:
    """An independent, reproducible random stream for one chain or job."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        if self.seed < 0 or self.stream_id < 0:
            raise InvalidParameterError("seed and stream_id must be nonnegative integers")
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def substream(self, stream_id: int) -> "SeededStream":
        """A fresh stream sharing this seed (independent of this stream's position)."""
        return SeededStream(self.seed, stream_id)

    def __repr__(self):
        return f"SeededStream(seed={self.seed}, stream_id={self.stream_id})"

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, size=None):
        return self.generator.random(size)


def _as_positive(name, value):
    a = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(a) & (a > 0)):
        raise InvalidParameterError(f"{name} must be finite and strictly positive")
    return a


def _out(x, shape):
    return float(x) if shape == () else x


def draw_gamma(shape, rate, stream: SeededStream, size=None):
    """Gamma variates with density proportional to ``x**(shape-1) * exp(-rate*x)``."""
    k = _as_positive("shape", shape)
    r = _as_positive("rate", rate)
    out_shape = np.broadcast_shapes(k.shape, r.shape) if size is None else size
    x = stream.generator.gamma(k, 1.0 / r, size=out_shape)
    return _out(x, np.shape(x))


def draw_inverse_gamma(shape, rate, stream: SeededStream, size=None):
    """Reciprocal of :func:`draw_gamma`; mean ``rate / (shape - 1)`` for ``shape > 1``."""
    return 1.0 / draw_gamma(shape, rate, stream, size)


def draw_inverse_gaussian(mu, lam, stream: SeededStream, size=None):
    """Inverse-Gaussian variates (mean ``mu``, shape ``lam``).

    Michael, Schucany and Haas (1976): a chi-square(1) transform gives the smaller
    root ``x`` of the quadratic, and ``mu**2 / x`` is taken with probability
    ``x / (mu + x)``. The root is computed as ``mu / (1 + r + sqrt(r (2 + r)))``
    with ``r = mu nu^2 / (2 lam)``, which avoids cancellation when ``mu >> lam``.
    """
    mu = _as_positive("mu", mu)
    lam = _as_positive("lam", lam)
    shape = np.broadcast_shapes(mu.shape, lam.shape) if size is None else size
    nu = stream.standard_normal(shape)
    u = stream.uniform(shape)
    r = mu * nu * nu / (2.0 * lam)
    x = mu / (1.0 + r + np.sqrt(r * (2.0 + r)))
    out = np.where(u <= mu / (mu + x), x, mu * mu / x)
    return _out(out, np.shape(out))


def draw_mvn(mean, chol_cov, stream: SeededStream, size=None):
    """``mean + L z`` with ``z`` standard normal and ``L`` lower triangular.

    With ``size`` given, returns ``size`` stacked draws (shape ``(size, m)``).
    """
    mean = np.asarray(mean, dtype=float)
    L = np.asarray(chol_cov, dtype=float)
    m = mean.shape[-1]
    if L.shape != (m, m):
        raise InvalidParameterError(f"chol_cov must be {m}x{m}, got {L.shape}")
    if not np.all(np.diag(L) > 0):
        raise InvalidParameterError("chol_cov must have a strictly positive diagonal")
    L = np.tril(L)
    if size is None:
        return mean + L @ stream.standard_normal(m)
    z = stream.standard_normal((size, m))
    return mean + z @ L.T
