import math

import numpy as np
import pytest
from scipy import integrate, stats

from oracles import ks_against_quadrature

from bilevel_lasso.core import InvalidParameterError
from bilevel_lasso.rng import (
    SeededStream,
    draw_gamma,
    draw_inverse_gamma,
    draw_inverse_gaussian,
    draw_mvn,
)


def test_stream_determinism_and_independence():
    a = draw_gamma(2.0, 1.0, SeededStream(7, 0), size=1000)
    b = draw_gamma(2.0, 1.0, SeededStream(7, 0), size=1000)
    assert np.array_equal(a, b)
    s0 = SeededStream(7, 0).standard_normal(100_000)
    s1 = SeededStream(7, 1).standard_normal(100_000)
    assert abs(np.corrcoef(s0, s1)[0, 1]) < 0.01
    assert SeededStream(7).substream(1).stream_id == 1


@pytest.mark.parametrize("shape,rate", [(25.5, 1.0), (1.0, 1.0), (3.0, 2.0)])
def test_gamma_moments(shape, rate):
    x = draw_gamma(shape, rate, SeededStream(11), size=1_000_000)
    mean, var = shape / rate, shape / rate ** 2
    assert abs(x.mean() - mean) < 3 * math.sqrt(var / x.size)
    # variance: SE of the sample variance with excess kurtosis 6/shape
    se_var = var * math.sqrt((2 + 6 / shape) / x.size)
    assert abs(x.var() - var) < 3 * se_var


def test_gamma_case1_prior_mean():
    # (m_k c + 1)/2 with m_k=10, c=5 and rate lambda1_sq/2 = 1 gives mean 25.5
    x = draw_gamma((10 * 5 + 1) / 2, 2.0 / 2, SeededStream(1), size=200_000)
    assert x.mean() == pytest.approx(25.5, abs=3 * math.sqrt(25.5 / x.size))


def test_gamma_rejects_bad_parameters():
    with pytest.raises(InvalidParameterError):
        draw_gamma(0.0, 1.0, SeededStream(0))
    with pytest.raises(InvalidParameterError):
        draw_gamma(1.0, -1.0, SeededStream(0))
    assert isinstance(draw_gamma(1.0, 1.0, SeededStream(0)), float)


def test_inverse_gamma_moments_and_reciprocal():
    x = draw_inverse_gamma(2.0, 1.0, SeededStream(3), size=400_000)
    assert np.median(x) == pytest.approx(1.0 / stats.gamma(2.0).ppf(0.5), rel=0.01)
    y = draw_inverse_gamma(3.0, 4.0, SeededStream(4), size=400_000)
    # mean 2, variance rate^2/((a-1)^2 (a-2)) = 4
    assert abs(y.mean() - 2.0) < 3 * math.sqrt(4.0 / y.size)
    z = 1.0 / draw_inverse_gamma(3.0, 4.0, SeededStream(5), size=100_000)
    assert stats.kstest(z, stats.gamma(3.0, scale=1 / 4.0).cdf).pvalue > 1e-4


def test_inverse_gamma_prior_mean_at_default_prior():
    x = draw_inverse_gamma(2.0, 1.0, SeededStream(6), size=100_000)
    # infinite variance: compare the trimmed mean against quadrature of the truncated mean
    q = np.quantile(x, 0.99)
    trimmed = x[x <= q].mean()
    dist = stats.invgamma(2.0, scale=1.0)
    oracle = integrate.quad(lambda t: t * dist.pdf(t), 0, q)[0] / dist.cdf(q)
    assert trimmed == pytest.approx(oracle, rel=0.01)


def test_inverse_gaussian_degenerate_limit():
    x = draw_inverse_gaussian(1.0, 1e6, SeededStream(1), size=10_000)
    assert np.all(np.abs(x - 1.0) < 0.01)


def test_inverse_gaussian_moments():
    x = draw_inverse_gaussian(2.0, 4.0, SeededStream(2), size=1_000_000)
    assert abs(x.mean() - 2.0) < 3 * math.sqrt(2.0 / x.size)
    assert x.var() == pytest.approx(2.0, rel=0.02)


@pytest.mark.parametrize("mu,lam", [(2.0, 4.0), (0.3, 5.0), (50.0, 0.5), (1e4, 2.0)])
def test_inverse_gaussian_matches_quadrature(mu, lam):
    def logpdf(x):
        return 0.5 * math.log(lam / (2 * math.pi * x ** 3)) - lam * (x - mu) ** 2 / (2 * mu * mu * x)

    x = draw_inverse_gaussian(mu, lam, SeededStream(9), size=100_000)
    d, p = ks_against_quadrature(x, logpdf)
    assert d < 0.005
    assert p > 1e-4


def test_inverse_gaussian_errors():
    with pytest.raises(InvalidParameterError):
        draw_inverse_gaussian(-1.0, 1.0, SeededStream(0))
    with pytest.raises(InvalidParameterError):
        draw_inverse_gaussian(1.0, 0.0, SeededStream(0))


def test_mvn_identity_and_diagonal():
    z = draw_mvn(np.zeros(2), np.eye(2), SeededStream(1), size=200_000)
    assert np.allclose(z.mean(axis=0), 0, atol=3 / math.sqrt(z.shape[0]))
    assert np.allclose(np.cov(z.T), np.eye(2), atol=0.02)
    x = draw_mvn([1.0, 2.0], np.diag([2.0, 3.0]), SeededStream(2), size=200_000)
    assert np.allclose(x.std(axis=0), [2.0, 3.0], rtol=0.01)
    assert np.allclose(x.mean(axis=0), [1, 2], atol=0.03)


def test_mvn_correlation():
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    L = np.linalg.cholesky(cov)
    x = draw_mvn(np.zeros(2), L, SeededStream(3), size=100_000)
    rho = 0.6 / math.sqrt(2.0)
    r = np.corrcoef(x.T)[0, 1]
    assert abs(r - rho) < 3 * (1 - rho ** 2) / math.sqrt(x.shape[0])
    single = draw_mvn(np.zeros(2), L, SeededStream(3))
    assert single.shape == (2,)


def test_mvn_rejects_bad_factor():
    with pytest.raises(InvalidParameterError):
        draw_mvn(np.zeros(2), np.array([[1.0, 0], [0, -1.0]]), SeededStream(0))
