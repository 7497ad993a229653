import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from mfpof.hyperprior import (HyperParams, PriorSpec, default_prior, log_prior_density,
                              n_params, param_names, sample_prior)

BOUNDS = ((0.0, 30.0), (0.0, 1.0))


def test_layout_lengths():
    assert n_params(2, 5) == 12
    assert n_params(2, 1, multi_fidelity=False) == 4
    assert param_names(2, 5)[:4] == ["log_sigma0_sq", "log_rho0_1", "log_rho0_2", "log_g"]
    assert param_names(1, 2)[-2:] == ["log_lambda_1", "log_lambda_2"]


def test_default_prior_centres_and_spreads():
    pr = default_prior(2, 5, 40.0, BOUNDS)
    expected_mean = [np.log(0.16), np.log(15.0), np.log(0.5), 0.0, np.log(15.0), np.log(0.5),
                     np.log(4.0)] + [np.log(0.16)] * 5
    np.testing.assert_allclose(pr.mean, expected_mean, rtol=1e-14)
    np.testing.assert_allclose(pr.sd[:7], np.log([100, 10, 10, 100, 10, 10, 3]), rtol=1e-14)
    noise = pr.cov[7:, 7:]
    np.testing.assert_allclose(np.diag(noise), np.log(100) ** 2, rtol=1e-14)
    np.testing.assert_allclose(noise[0, 1] / noise[0, 0], 0.99, rtol=1e-14)
    # kernel block and noise block are uncorrelated
    assert np.all(pr.cov[:7, 7:] == 0)


def test_single_level_prior():
    pr = default_prior(2, 5, 40.0, BOUNDS, multi_fidelity=False)
    assert pr.D == 4 and pr.S == 1
    np.testing.assert_allclose(pr.mean, [np.log(0.16), np.log(15), np.log(0.5), np.log(0.16)])


@pytest.mark.parametrize("c", [-0.1, 1.0, 1.5])
def test_noise_correlation_out_of_range(c):
    with pytest.raises(ValueError):
        default_prior(2, 3, 1.0, BOUNDS, noise_correlation=c)


def test_invalid_bounds_rejected():
    with pytest.raises(ValueError):
        default_prior(1, 2, 1.0, [(1.0, 1.0)])


def test_log_density_matches_scipy():
    pr = default_prior(2, 5, 40.0, BOUNDS)
    rng = np.random.default_rng(0)
    for h in sample_prior(pr, 5, rng):
        ref = multivariate_normal(pr.mean, pr.cov).logpdf(h.log_theta)
        assert log_prior_density(pr, h) == pytest.approx(ref, rel=1e-10)


def test_prior_samples_have_prior_moments():
    pr = default_prior(1, 3, 2.0, [(0.0, 1.0)])
    draws = np.array([h.log_theta for h in sample_prior(pr, 40000, np.random.default_rng(1))])
    se = pr.sd / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(0) - pr.mean) < 5 * se)
    corr = np.corrcoef(draws[:, -3:].T)
    assert corr[0, 2] == pytest.approx(0.99, abs=0.005)


def test_hyperparams_views():
    pr = default_prior(2, 5, 40.0, BOUNDS)
    h = pr.mode()
    kp = h.kernel_params(1.0)
    assert kp.sigma0_sq == pytest.approx(0.16)
    assert kp.degree_L == pytest.approx(4.0)
    np.testing.assert_allclose(h.noise_variances(), 0.16)
    with pytest.raises(ValueError):
        HyperParams(np.zeros(5), 2, 5)


def test_hyperparams_are_immutable():
    h = HyperParams(np.zeros(12), 2, 5)
    with pytest.raises(ValueError):
        h.log_theta[0] = 1.0


def test_prior_roundtrip():
    pr = default_prior(2, 5, 40.0, BOUNDS)
    back = PriorSpec.from_dict(pr.to_dict())
    np.testing.assert_array_equal(back.mean, pr.mean)
    np.testing.assert_array_equal(back.cov, pr.cov)
    assert back.S == 5 and back.multi_fidelity


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.floats(0.0, 0.999), st.floats(1e-3, 1e3))
def test_prior_covariance_positive_definite(d, S, c, r_out):
    pr = default_prior(d, S, r_out, [(0.0, 1.0)] * d, noise_correlation=c)
    assert pr.D == 2 * d + 3 + S
    assert np.linalg.eigvalsh(pr.cov).min() > 0
    assert np.isfinite(log_prior_density(pr, pr.mean))


def test_density_at_mode_and_one_sigma_shift():
    pr = default_prior(2, 3, 40.0, BOUNDS)
    _, logdet = np.linalg.slogdet(pr.cov)
    mode = -0.5 * (pr.D * np.log(2 * np.pi) + logdet)
    assert log_prior_density(pr, pr.mean) == pytest.approx(mode, rel=1e-12)
    h = pr.mean.copy()
    h[2] += pr.sd[2]
    assert log_prior_density(pr, h) == pytest.approx(mode - 0.5, rel=1e-12)


def test_sample_prior_is_deterministic_given_seed():
    pr = default_prior(2, 5, 40.0, BOUNDS)
    a = [h.log_theta for h in sample_prior(pr, 3, np.random.default_rng(4))]
    b = [h.log_theta for h in sample_prior(pr, 3, np.random.default_rng(4))]
    np.testing.assert_array_equal(a, b)


def test_sample_prior_fidelity_exponent_and_noise_correlation():
    pr = default_prior(2, 5, 40.0, BOUNDS)
    draws = np.array([h.log_theta for h in sample_prior(pr, 100_000, np.random.default_rng(6))])
    iL = 2 * 2 + 2
    assert abs(draws[:, iL].mean() - np.log(4)) < 4 * np.log(3) / np.sqrt(len(draws))
    assert np.corrcoef(draws[:, -1], draws[:, -4])[0, 1] == pytest.approx(0.99, abs=0.01)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.floats(0.0, 0.999))
def test_noise_difference_variance(S, c):
    pr = default_prior(2, S, 40.0, BOUNDS, noise_correlation=c)
    e = np.zeros(pr.D)
    e[-1], e[-2] = 1.0, -1.0
    assert e @ pr.cov @ e == pytest.approx(2 * (1 - c) * np.log(100) ** 2, rel=1e-12)
