"""Tests for the counter-based RNG, Box-Muller transform, and OU noise."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from eitcorr import noise


class TestGaussianPair:
    def test_unit_u1_gives_zeros(self):
        z1, z2 = noise.gaussian_pair(1.0, 0.25)
        assert z1 == 0.0 and z2 == 0.0

    def test_closed_form_point(self):
        z1, z2 = noise.gaussian_pair(math.exp(-2.0), 0.0)
        assert z1 == pytest.approx(2.0, abs=1e-12)
        assert z2 == pytest.approx(0.0, abs=1e-12)

    def test_rejects_zero_u1(self):
        with pytest.raises(ValueError):
            noise.gaussian_pair(0.0, 0.5)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            noise.gaussian_pair(1.5, 0.5)
        with pytest.raises(ValueError):
            noise.gaussian_pair(0.5, 1.0)
        with pytest.raises(ValueError):
            noise.gaussian_pair(0.5, -0.1)

    def test_array_input(self):
        u1 = np.array([1.0, math.exp(-2.0)])
        u2 = np.array([0.25, 0.0])
        z1, z2 = noise.gaussian_pair(u1, u2)
        assert z1.shape == (2,)
        assert z1[1] == pytest.approx(2.0, abs=1e-12)

    def test_moments_of_many_pairs(self):
        # 1e6 deviates: bounds are ~5 standard errors of each moment
        z = noise.standard_normals(noise.stream_key(123), 1_000_000)
        assert abs(z.mean()) < 0.005
        assert 0.99 < z.var() < 1.01

    def test_higher_moments(self):
        z = noise.standard_normals(noise.stream_key(123), 1_000_000)
        m2 = z.var()
        skew = np.mean(z**3) / m2**1.5
        kurt = np.mean(z**4) / m2**2 - 3.0
        assert abs(skew) < 0.01
        assert abs(kurt) < 0.02


class TestStreams:
    def test_deterministic(self):
        a = noise.standard_normals(noise.stream_key(9, 4), 1000)
        b = noise.standard_normals(noise.stream_key(9, 4), 1000)
        assert np.array_equal(a, b)

    def test_chunk_offsets_agree(self):
        key = noise.stream_key(17)
        whole = noise.standard_normals(key, 101)
        pieces = np.concatenate([noise.standard_normals(key, 13, start=0),
                                 noise.standard_normals(key, 55, start=13),
                                 noise.standard_normals(key, 33, start=68)])
        assert np.array_equal(whole, pieces)

    def test_streams_differ(self):
        a = noise.standard_normals(noise.stream_key(9, 0), 1000)
        b = noise.standard_normals(noise.stream_key(9, 1), 1000)
        assert not np.array_equal(a, b)
        # independent streams are uncorrelated
        r = np.corrcoef(a, b)[0, 1]
        assert abs(r) < 5.0 / math.sqrt(1000)


class TestNoiseParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            noise.NoiseParams(theta=-0.1)
        with pytest.raises(ValueError):
            noise.NoiseParams(lambda_l=0.0)
        with pytest.raises(ValueError):
            noise.NoiseParams(dt=0.0)

    def test_white_noise_mapping(self):
        p = noise.white_noise_params(0.0)
        assert p.theta == 0.0
        p = noise.white_noise_params(0.1)
        assert p.theta == 0.1
        assert p.lambda_l == 50.0
        assert p.dt == pytest.approx(0.05 / 50.0)

    def test_white_noise_rejects_negative(self):
        with pytest.raises(ValueError):
            noise.white_noise_params(-1.0)

    def test_autocorrelation_area_matches_white_noise(self):
        # independent quadrature of the model autocorrelation against the
        # white-noise area 2*theta
        p = noise.white_noise_params(0.1)
        area, _ = quad(lambda t: p.stationary_variance
                       * math.exp(-p.lambda_l * abs(t)), -math.inf, math.inf)
        assert area == pytest.approx(2.0 * p.theta, rel=1e-9)


class TestOuStep:
    def test_pure_decay(self):
        p = noise.NoiseParams(theta=0.3, lambda_l=math.log(2.0), dt=1.0)
        assert noise.ou_step(1.0, p, 0.0) == pytest.approx(0.5, rel=1e-14)

    def test_zero_strength(self):
        p = noise.NoiseParams(theta=0.0, lambda_l=50.0, dt=1e-3)
        assert noise.ou_step(0.0, p, 1.7) == 0.0

    def test_long_run_variance(self):
        # exact update preserves the stationary variance; lambda*dt = 0.1
        p = noise.NoiseParams(theta=0.1, lambda_l=50.0, dt=2e-3)
        x = noise.ou_trajectory(21, 1_000_000, p)
        assert x.var() == pytest.approx(p.stationary_variance, rel=0.03)


class TestOuTrajectory:
    def test_zero_strength_is_zero_series(self):
        p = noise.NoiseParams(theta=0.0, lambda_l=50.0, dt=1e-3)
        x = noise.ou_trajectory(3, 10_000, p)
        assert np.all(x == 0.0)

    def test_deterministic_under_seed(self):
        p = noise.NoiseParams()
        a = noise.ou_trajectory(5, 5000, p)
        b = noise.ou_trajectory(5, 5000, p)
        assert np.array_equal(a, b)

    def test_stream_chunks_match_one_shot(self):
        p = noise.NoiseParams()
        s = noise.NoiseStream(7, p)
        chunked = np.concatenate([s.take(13), s.take(1000), s.take(87)])
        assert np.array_equal(chunked, noise.ou_trajectory(7, 1100, p))

    def test_stationary_variance_within_three_stderr(self):
        p = noise.NoiseParams(theta=0.1, lambda_l=50.0, dt=1e-3)
        n = 2_000_000
        x = noise.ou_trajectory(42, n, p)
        var = x.var()
        expected = p.stationary_variance
        # variance estimator stderr with integrated autocorrelation time
        n_eff = n * p.lambda_l * p.dt / 2.0
        stderr = expected * math.sqrt(2.0 / n_eff)
        assert abs(var - expected) < 3.0 * stderr

    def test_autocorrelation_decay_rate(self):
        p = noise.NoiseParams(theta=0.1, lambda_l=50.0, dt=1e-3)
        x = noise.ou_trajectory(42, 2_000_000, p)
        max_lag = int(round(3.0 / (p.lambda_l * p.dt)))
        acov = noise.autocovariance(x, max_lag)
        rate, _ = noise.fit_decay_rate(np.arange(max_lag + 1) * p.dt, acov)
        assert rate == pytest.approx(p.lambda_l, rel=0.05)

    def test_self_test_passes_on_good_stream(self):
        p = noise.NoiseParams(theta=0.1, lambda_l=50.0, dt=1e-3)
        result = noise.ou_self_test(42, p, 2_000_000)
        assert result["passed"]
        assert result["variance_ok"] and result["rate_ok"]

    def test_rejects_empty_request(self):
        with pytest.raises(ValueError):
            noise.ou_trajectory(1, 0, noise.NoiseParams())


def test_fit_decay_rate_on_exact_exponential():
    t = np.linspace(0.0, 1.0, 50)
    rate, amp = noise.fit_decay_rate(t, 2.5 * np.exp(-4.0 * t))
    assert rate == pytest.approx(4.0, rel=1e-9)
    assert amp == pytest.approx(2.5, rel=1e-9)
