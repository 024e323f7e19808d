import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from baeprior import likelihood as L


def test_normalizer_at_half():
    assert L.cb_log_norm_const(0.5) == pytest.approx(np.log(2.0), abs=1e-15)
    assert isinstance(L.cb_log_norm_const(0.5), float)


def test_normalizer_symmetric(rng):
    lam = rng.uniform(1e-4, 0.5, 100)
    np.testing.assert_allclose(L.cb_log_norm_const(lam), L.cb_log_norm_const(1 - lam), rtol=1e-12)


@pytest.mark.parametrize("lam", [1e-6, 0.01, 0.3, 0.5 - 5e-5, 0.5, 0.5 + 2e-5, 0.7, 0.999])
def test_density_integrates_to_one(lam):
    total, _ = integrate.quad(lambda x: np.exp(L.cb_log_density(x, lam)), 0, 1, epsabs=1e-13, epsrel=1e-12)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_domain_errors():
    with pytest.raises(L.DomainError):
        L.cb_log_density(0.5, 0.0)
    with pytest.raises(L.DomainError):
        L.cb_log_density(0.5, 1.0)
    with pytest.raises(L.DomainError):
        L.cb_log_density(1.5, 0.3)
    with pytest.raises(L.DomainError):
        L.cb_sample(0.3, 1.0)


def test_cdf_endpoints_and_monotone(rng):
    for lam in [0.1, 0.5, 0.5 + 1e-5, 0.9]:
        assert L.cb_cdf(0.0, lam) == pytest.approx(0.0, abs=1e-15)
        assert L.cb_cdf(1.0, lam) == pytest.approx(1.0, abs=1e-14)
        xs = np.linspace(0, 1, 101)
        assert np.all(np.diff(L.cb_cdf(xs, np.full(101, lam))) > 0)


def test_cdf_matches_quadrature():
    for lam in [0.2, 0.8]:
        for x in [0.1, 0.5, 0.9]:
            num, _ = integrate.quad(lambda t: np.exp(L.cb_log_density(t, lam)), 0, x, epsabs=1e-13)
            assert L.cb_cdf(x, lam) == pytest.approx(num, abs=1e-10)


def test_mean_matches_quadrature():
    for lam in [0.05, 0.3, 0.5, 0.5 + 1e-4, 0.75]:
        num, _ = integrate.quad(lambda t: t * np.exp(L.cb_log_density(t, lam)), 0, 1, epsabs=1e-13)
        assert L.cb_mean(lam) == pytest.approx(num, abs=1e-10)


@pytest.mark.parametrize("lam", [0.2, 0.8, 0.5])
def test_sampler_ks(lam):
    rng = np.random.default_rng(7)
    x, _ = L.cb_sample(np.full(20000, lam), rng.uniform(size=20000))
    res = stats.kstest(x, lambda t: L.cb_cdf(np.clip(t, 0, 1), np.full(np.size(t), lam)))
    assert res.pvalue > 1e-3


@pytest.mark.parametrize("seed", range(4))
def test_reparameterization_gradient_finite_difference(seed):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.02, 0.98, 200)
    lam[:40] = 0.5 + rng.uniform(-3e-4, 3e-4, 40)
    u = rng.uniform(0.01, 0.99, 200)
    h = 1e-7
    _, dx = L.cb_sample(lam, u)
    fd = (L.cb_sample(lam + h, u)[0] - L.cb_sample(lam - h, u)[0]) / (2 * h)
    np.testing.assert_allclose(dx, fd, rtol=1e-5, atol=1e-8)


def test_log_density_gradient_finite_difference(rng):
    lam = rng.uniform(0.02, 0.98, 100)
    x = rng.uniform(size=100)
    h = 1e-6
    _, g = L.cb_log_density_and_grad(x, lam)
    fd = (L.cb_log_density(x, lam + h) - L.cb_log_density(x, lam - h)) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_row_log_likelihood_sums(rng):
    x = rng.uniform(size=(3, 5))
    lam = rng.uniform(0.1, 0.9, size=(3, 5))
    np.testing.assert_allclose(L.row_log_likelihood(x, lam), L.cb_log_density(x, lam).sum(axis=1),
                               rtol=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-9, 1 - 1e-9), st.floats(1e-9, 1 - 1e-9))
def test_sample_inside_unit_interval(lam, u):
    x, dx = L.cb_sample(lam, u)
    assert 0.0 <= x <= 1.0
    assert np.isfinite(dx)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-9, 1 - 1e-9))
def test_log_normalizer_finite_and_at_least_log2(lam):
    # K(lam) >= 2 with equality at lam = 1/2
    assert L.cb_log_norm_const(lam) >= np.log(2.0) - 1e-15
