"""Tests for intensity fluctuations and the cross-correlation estimator."""

import math
from dataclasses import replace

import numpy as np
import pytest

from eitcorr import dynamics as dyn
from eitcorr import observables as obs
from eitcorr.noise import standard_normals, stream_key


@pytest.fixture(scope="module")
def resonant():
    cfg = dyn.make_config(delta=0.0)
    traj = dyn.simulate_trajectory(cfg, 3000.0, seed=8)
    return cfg, traj, obs.intensity_fluctuations(traj, cfg)


@pytest.fixture(scope="module")
def detuned():
    cfg = dyn.make_config(delta=0.01)
    traj = dyn.simulate_trajectory(cfg, 3000.0, seed=8)
    return cfg, traj, obs.intensity_fluctuations(traj, cfg)


def white_series(seed, n=100_000, dt_record=0.05):
    d1 = standard_normals(stream_key(seed, 0), n)
    d2 = standard_normals(stream_key(seed, 1), n)
    return obs.IntensitySeries(dt_record=dt_record, di1=d1 - d1.mean(),
                               di2=d2 - d2.mean(), scale1=1.0, scale2=1.0)


class TestOutputFields:
    def test_transparent_medium(self):
        assert obs.output_fields(1.0, 2.0, 0.1, 0.1, 0j, 0j) == (1.0 + 0j, 2.0 + 0j)

    def test_zero_coupling(self):
        out = obs.output_fields(1.0, 2.0, 0.0, 0.0, 0.3 + 0.1j, -0.2j)
        assert out == (1.0 + 0j, 2.0 + 0j)

    def test_induced_field_arithmetic(self):
        out1, _ = obs.output_fields(1.0, 1.0, 0.1, 0.1, -0.2j, 0j)
        assert out1 == pytest.approx(1.0 + 0.02)


class TestIntensityFluctuations:
    def test_constant_coherences_give_zero_series(self):
        cfg = dyn.make_config()
        n = 100
        traj = dyn.Trajectory(dt=1e-3, dt_record=0.05, t_transient=0.0, seed=0,
                              t=np.arange(1, n + 1) * 0.05,
                              rho_ba=np.full(n, 0.1 - 0.2j),
                              rho_ca=np.full(n, 0.3j),
                              rho_bc=np.full(n, -0.4 + 0j),
                              rho_bb=np.full(n, 0.5), rho_cc=np.full(n, 0.4))
        series = obs.intensity_fluctuations(traj, cfg)
        # zero up to the rounding of the removed mean
        assert np.max(np.abs(series.di1)) <= 1e-15 * series.scale1
        assert np.max(np.abs(series.di2)) <= 1e-15 * series.scale2
        with pytest.raises(obs.DegenerateSeriesError):
            obs.g2(series, 0.0)

    def test_mean_removed(self, detuned):
        _, _, series = detuned
        for di in (series.di1, series.di2):
            assert abs(di.mean()) < 1e-10 * np.max(np.abs(di))

    def test_channel_scale_linearity(self, detuned):
        cfg, traj, series = detuned
        doubled = replace(cfg, kappa1_l=2 * cfg.kappa1_l)
        series2 = obs.intensity_fluctuations(traj, doubled)
        assert np.allclose(series2.di1, 2.0 * series.di1, rtol=1e-12)
        assert obs.g2(series2, 0.0) == pytest.approx(obs.g2(series, 0.0), rel=1e-12)

    def test_resonant_channels_synchronized(self, resonant):
        _, _, series = resonant
        frac = np.mean(np.sign(series.di1 * series.di2) > 0)
        assert frac > 0.8

    def test_swap_switch_exchanges_channels(self, detuned):
        cfg, traj, series = detuned
        swapped_cfg = replace(cfg, swap_output_channels=True)
        swapped = obs.intensity_fluctuations(traj, swapped_cfg)
        assert np.array_equal(swapped.di1, series.di2)
        assert np.array_equal(swapped.di2, series.di1)
        assert obs.g2(swapped, 0.0) == obs.g2(series, 0.0)

    def test_empty_trajectory_rejected(self):
        cfg = dyn.make_config()
        traj = dyn.Trajectory(dt=1e-3, dt_record=0.05, t_transient=0.0, seed=0,
                              t=np.empty(0), rho_ba=np.empty(0, complex),
                              rho_ca=np.empty(0, complex),
                              rho_bc=np.empty(0, complex),
                              rho_bb=np.empty(0), rho_cc=np.empty(0))
        with pytest.raises(ValueError):
            obs.intensity_fluctuations(traj, cfg)


class TestG2:
    def test_identical_series_exactly_one(self, detuned):
        _, _, series = detuned
        same = obs.IntensitySeries(series.dt_record, series.di1.copy(),
                                   series.di1.copy(), series.scale1, series.scale1)
        assert obs.g2(same, 0.0) == 1.0

    def test_negated_series_exactly_minus_one(self, detuned):
        _, _, series = detuned
        anti = obs.IntensitySeries(series.dt_record, series.di1.copy(),
                                   -series.di1, series.scale1, series.scale1)
        assert obs.g2(anti, 0.0) == -1.0

    def test_independent_noise_null(self):
        series = white_series(2)
        n = series.di1.size
        assert abs(obs.g2(series, 0.0)) < 5.0 / math.sqrt(n)

    def test_bounded_on_random_series_at_all_lags(self):
        series = white_series(7, n=2000)
        for tau in series.dt_record * np.arange(-1500, 1501, 125):
            assert abs(obs.g2(series, tau)) <= 1.0 + 1e-9

    def test_power_of_two_rescaling_exact(self, detuned):
        _, _, series = detuned
        v0 = obs.g2(series, 0.0)
        scaled = obs.IntensitySeries(series.dt_record, 4.0 * series.di1,
                                     series.di2, 4.0 * series.scale1,
                                     series.scale2)
        assert obs.g2(scaled, 0.0) == v0
        scaled2 = obs.IntensitySeries(series.dt_record, series.di1,
                                      0.25 * series.di2, series.scale1,
                                      0.25 * series.scale2)
        assert obs.g2(scaled2, 0.0) == v0

    def test_generic_rescaling_machine_precision(self, detuned):
        _, _, series = detuned
        v0 = obs.g2(series, 0.25)
        scaled = obs.IntensitySeries(series.dt_record, 3.7 * series.di1,
                                     1.3 * series.di2, 3.7 * series.scale1,
                                     1.3 * series.scale2)
        assert obs.g2(scaled, 0.25) == pytest.approx(v0, rel=1e-12)

    def test_channel_swap_symmetric_at_zero_delay(self, detuned):
        _, _, series = detuned
        swapped = obs.IntensitySeries(series.dt_record, series.di2, series.di1,
                                      series.scale2, series.scale1)
        assert obs.g2(swapped, 0.0) == obs.g2(series, 0.0)

    def test_lag_must_sit_on_raster(self, detuned):
        _, _, series = detuned
        with pytest.raises(ValueError):
            obs.g2(series, 0.5 * series.dt_record)

    def test_lag_beyond_span_rejected(self, detuned):
        _, _, series = detuned
        with pytest.raises(ValueError):
            obs.g2(series, series.dt_record * (series.di1.size + 1))

    def test_lag_sign_convention(self):
        # channel 1 leads channel 2 by one raster step, so the correlation
        # peaks at positive delay (channel 2 sampled later matches channel 1)
        rng = np.random.default_rng(0)
        base = rng.normal(size=5000)
        di1 = base[1:] - base[1:].mean()
        di2 = base[:-1] - base[:-1].mean()
        series = obs.IntensitySeries(0.05, di1, di2, 1.0, 1.0)
        assert obs.g2(series, 0.05) > 0.9
        assert obs.g2(series, -0.05) < 0.1


class TestBlocks:
    def test_block_consistency(self, detuned):
        _, _, series = detuned
        full = obs.g2(series, 0.0)
        blocks = obs.g2_blocks(series, 0.0, 8)
        stderr = blocks.std(ddof=1) / math.sqrt(8)
        assert abs(full - blocks.mean()) < 3.0 * max(stderr, 1e-12)

    def test_stderr_positive_for_noisy_series(self, detuned):
        _, _, series = detuned
        assert obs.g2_stderr(series, 0.0) > 0.0

    def test_too_many_blocks_rejected(self):
        series = white_series(1, n=10)
        with pytest.raises(ValueError):
            obs.g2_blocks(series, 0.0, n_blocks=11)


class TestCurve:
    def test_single_point_grid(self, detuned):
        _, _, series = detuned
        curve = obs.g2_curve(series, [0.0])
        assert curve.g2.shape == (1,)
        assert curve.g2[0] == obs.g2(series, 0.0)

    def test_detuned_curve_dips_at_zero(self, detuned):
        _, _, series = detuned
        curve = obs.g2_curve(series, obs.tau_grid(series, 5.0))
        i_min = int(np.argmin(curve.g2))
        assert curve.g2[i_min] <= -0.5
        assert abs(curve.taus[i_min]) < 2.0 / 1.005

    def test_resonant_curve_spikes_at_zero(self, resonant):
        _, _, series = resonant
        curve = obs.g2_curve(series, obs.tau_grid(series, 5.0))
        i_max = int(np.argmax(curve.g2))
        assert curve.taus[i_max] == 0.0
        assert curve.g2[i_max] >= 0.8
        assert np.all(np.abs(curve.g2) <= 1.0 + 1e-9)

    def test_tau_grid_symmetric(self, detuned):
        _, _, series = detuned
        taus = obs.tau_grid(series, 1.0)
        assert taus[0] == -taus[-1]
        assert 0.0 in taus


class TestSweep:
    def test_axis_validation(self):
        with pytest.raises(ValueError):
            obs.AxisSpec("delta", (0.0, 0.0, 0.1))
        with pytest.raises(ValueError):
            obs.AxisSpec("nonsense", (0.0, 0.1))
        with pytest.raises(ValueError):
            obs.AxisSpec("delta", ())

    def test_config_at_rules(self):
        base = dyn.make_config()
        assert obs.config_at(base, "delta", 0.3).delta == 0.3
        g = obs.config_at(base, "gamma3", 0.07)
        assert dyn.effective_rates(g.rates).gamma3 == pytest.approx(0.07)
        om = obs.config_at(base, "omega", 4.0)
        assert om.omega1 == om.omega2 == 4.0
        assert om.noise.lambda_l == pytest.approx(200.0)
        assert om.noise.dt <= dyn.dt_max(om) * (1 + 1e-12)
        b = obs.config_at(base, "b_gauss", 2.0, alpha_gauss=0.5)
        assert b.delta == pytest.approx(0.01 * 2.0 / 0.5)

    def test_b_axis_requires_alpha(self):
        base = dyn.make_config()
        with pytest.raises(ValueError):
            obs.config_at(base, "b_gauss", 1.0, alpha_gauss=None)

    def test_small_sweep_reproducible_and_ordered(self):
        base = dyn.make_config()
        axis = obs.AxisSpec("delta", (0.0, 0.01))
        t1 = obs.g2_zero_sweep(base, axis, t_end=2500.0, seed=5, threads=2)
        t2 = obs.g2_zero_sweep(base, axis, t_end=2500.0, seed=5, threads=1)
        assert np.array_equal(t1.values, t2.values)
        assert t1.values[0] > 0.8 and t1.values[1] < -0.5
        assert len(t1.configs) == 2
        assert t1.configs[1]["delta"] == 0.01

    def test_two_axis_sweep_shape(self):
        base = dyn.make_config()
        a1 = obs.AxisSpec("delta", (0.0, 0.05))
        a2 = obs.AxisSpec("gamma3", (0.01, 0.05))
        table = obs.g2_zero_sweep(base, a1, a2, t_end=2500.0, seed=5, threads=2)
        assert table.values.shape == (2, 2)
        assert np.all(table.stderr >= 0.0)
