"""Transmitted-field intensity fluctuations and their cross-correlation.

In the thin-medium model each transmitted field is the input field plus the
first-order induced field i*kappa*L*rho, so the intensity fluctuation of each
beam is proportional to the imaginary part of the matching optical coherence
with its window mean removed. The normalized zero-mean cross-correlation
g2(tau) between the two beams is the central observable: +1 for perfectly
synchronized fluctuations, -1 for perfectly opposed ones.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .dynamics import (SystemConfig, Trajectory, dt_max, effective_rates,
                       simulate_trajectory)
from .noise import white_noise_params


class DegenerateSeriesError(ValueError):
    """A correlation was requested for a channel with no usable variance,
    which signals a noise-free or misconfigured run."""


def output_fields(omega1: float, omega2: float, kappa1_l: float, kappa2_l: float,
                  rho_ac: complex, rho_ab: complex) -> tuple[complex, complex]:
    """Transmitted field amplitudes to first order in the coupling-length
    products: out1 = omega1 + i*kappa1_l*rho_ac, out2 = omega2 + i*kappa2_l*rho_ab."""
    return (omega1 + 1j * kappa1_l * rho_ac,
            omega2 + 1j * kappa2_l * rho_ab)


@dataclass
class IntensitySeries:
    """Mean-removed intensity fluctuation series of the two beams.

    scale1/scale2 hold the rms of the raw (pre-mean-removal) series; they
    let the correlation estimator distinguish genuine fluctuations from
    numerical dust left by a noise-free run.
    """

    dt_record: float
    di1: np.ndarray
    di2: np.ndarray
    scale1: float
    scale2: float


def intensity_fluctuations(traj: Trajectory, cfg: SystemConfig) -> IntensitySeries:
    """Convert recorded coherences to beam intensity fluctuations.

    Beam 1 reads the a-c coherence and beam 2 the a-b coherence (so channel i
    is driven by the coherence induced by the *other* beam); setting
    cfg.swap_output_channels pairs them the other way round. The recorded
    components are rho_ca and rho_ba, whose conjugates are the needed
    rho_ac and rho_ab.
    """
    if len(traj) == 0:
        raise ValueError("trajectory holds no recorded samples")
    im_ac = -traj.rho_ca.imag  # Im conj(rho_ca)
    im_ab = -traj.rho_ba.imag
    if cfg.swap_output_channels:
        im_ac, im_ab = im_ab, im_ac
    raw1 = (cfg.omega1 * cfg.kappa1_l) * im_ac
    raw2 = (cfg.omega2 * cfg.kappa2_l) * im_ab
    scale1 = float(np.sqrt(np.mean(raw1 * raw1)))
    scale2 = float(np.sqrt(np.mean(raw2 * raw2)))
    return IntensitySeries(dt_record=traj.dt_record,
                           di1=raw1 - raw1.mean(), di2=raw2 - raw2.mean(),
                           scale1=scale1, scale2=scale2)


def _lag_steps(series: IntensitySeries, tau: float) -> int:
    k = int(round(tau / series.dt_record))
    if abs(tau - k * series.dt_record) > 1e-9 * max(series.dt_record, abs(tau)):
        raise ValueError(f"tau={tau} is not a multiple of dt_record={series.dt_record}")
    if abs(k) >= series.di1.size:
        raise ValueError(f"lag {tau} exceeds the recorded span")
    return k


def _g2_of_slices(di1: np.ndarray, di2: np.ndarray, k: int) -> float:
    n = di1.size
    if k >= 0:
        num = float(np.dot(di1[: n - k], di2[k:])) / n
    else:
        num = float(np.dot(di1[-k:], di2[: n + k])) / n
    v1 = float(np.dot(di1, di1)) / n
    v2 = float(np.dot(di2, di2)) / n
    if num == 0.0:
        return 0.0
    # squared form keeps |g2| = 1 exact for identical or negated channels
    return math.copysign(math.sqrt(num * num / (v1 * v2)), num)


def g2(series: IntensitySeries, tau: float) -> float:
    """Normalized intensity cross-correlation at delay tau.

    Time averages run over the full recorded window; lag products are
    normalized by the window length, which bounds the estimate by 1 in
    magnitude. Negative tau shifts channel 2 backward. tau must be a
    multiple of the recording interval.
    """
    k = _lag_steps(series, tau)
    for di, scale, name in ((series.di1, series.scale1, "1"),
                            (series.di2, series.scale2, "2")):
        if float(np.sqrt(np.mean(di * di))) <= 1e-8 * scale or scale == 0.0:
            raise DegenerateSeriesError(
                f"channel {name} carries no fluctuations; correlation undefined "
                "(noise-free or misconfigured run)")
    return _g2_of_slices(series.di1, series.di2, k)


def g2_blocks(series: IntensitySeries, tau: float, n_blocks: int = 8) -> np.ndarray:
    """Per-block correlation estimates from contiguous window blocks."""
    k = _lag_steps(series, tau)
    n = series.di1.size
    if n_blocks < 2 or n // n_blocks <= abs(k):
        raise ValueError("blocks too short for the requested lag")
    size = n // n_blocks
    out = np.empty(n_blocks)
    for b in range(n_blocks):
        s = slice(b * size, (b + 1) * size)
        out[b] = _g2_of_slices(series.di1[s], series.di2[s], k)
    return out


def g2_stderr(series: IntensitySeries, tau: float, n_blocks: int = 8) -> float:
    """Block standard error of the correlation estimate at delay tau."""
    blocks = g2_blocks(series, tau, n_blocks)
    return float(blocks.std(ddof=1) / math.sqrt(n_blocks))


@dataclass
class CorrelationCurve:
    """g2 sampled on a delay grid, with block standard errors."""

    taus: np.ndarray
    g2: np.ndarray
    stderr: np.ndarray
    t_window: float


def g2_curve(series: IntensitySeries, taus, n_blocks: int = 8) -> CorrelationCurve:
    """Map the correlation estimator over a delay grid."""
    taus = np.asarray(taus, dtype=float)
    vals = np.array([g2(series, t) for t in taus])
    errs = np.array([g2_stderr(series, t, n_blocks) for t in taus])
    t_window = series.dt_record * series.di1.size
    return CorrelationCurve(taus=taus, g2=vals, stderr=errs, t_window=t_window)


def tau_grid(series: IntensitySeries, tau_max: float) -> np.ndarray:
    """Symmetric delay grid on the recording raster covering [-tau_max, tau_max]."""
    k = int(math.floor(tau_max / series.dt_record))
    return series.dt_record * np.arange(-k, k + 1)


@dataclass(frozen=True)
class AxisSpec:
    """One sweep axis: name in {delta, gamma3, omega, b_gauss} plus its grid."""

    name: str
    values: tuple

    def __post_init__(self):
        if self.name not in ("delta", "gamma3", "omega", "b_gauss"):
            raise ValueError(f"unknown sweep axis {self.name!r}")
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 1:
            raise ValueError("axis needs at least one point")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError(f"axis {self.name} grid must be strictly increasing")
        object.__setattr__(self, "values", vals)


@dataclass
class SweepTable:
    """Zero-delay correlation over a one- or two-axis parameter grid.

    values and stderr have shape (len(axis1),) for one axis and
    (len(axis1), len(axis2)) for two. configs snapshots the full derived
    configuration of every grid point.
    """

    axis1: AxisSpec
    axis2: AxisSpec | None
    values: np.ndarray
    stderr: np.ndarray
    configs: list
    t_end: float
    seed: int


def config_at(base: SystemConfig, axis: str, value: float,
              alpha_gauss: float | None = None) -> SystemConfig:
    """Derive the configuration of one sweep grid point.

    delta: sets the two-photon detuning. gamma3: realizes the requested
    ground-coherence decay through symmetric dephasing d21 = d12 = value.
    omega: sets both Rabi frequencies and rescales the noise bandwidth and
    step to keep the white-noise ratio and the stability rule intact.
    b_gauss: sets delta = gamma3 * value / alpha_gauss, the detuning a field
    of value Gauss produces for scaling factor alpha_gauss.
    """
    if axis == "delta":
        return replace(base, delta=float(value))
    if axis == "gamma3":
        rates = replace(base.rates, d21=float(value), d12=float(value))
        return replace(base, rates=rates)
    if axis == "omega":
        old_fastest = max(base.rates.g1_tilde, base.omega1, base.omega2)
        ratio = base.noise.lambda_l / old_fastest
        fastest = max(base.rates.g1_tilde, float(value))
        noise = white_noise_params(base.noise.theta, fastest_rate=fastest,
                                   ratio=ratio)
        cfg = replace(base, omega1=float(value), omega2=float(value), noise=noise)
        step = dt_max(cfg)
        if cfg.noise.dt > step:
            cfg = replace(cfg, noise=replace(cfg.noise, dt=step))
        return cfg
    if axis == "b_gauss":
        if alpha_gauss is None or alpha_gauss <= 0.0:
            raise ValueError("a positive alpha_gauss is required for a b_gauss axis")
        gamma3 = effective_rates(base.rates).gamma3
        return replace(base, delta=gamma3 * float(value) / float(alpha_gauss))
    raise ValueError(f"unknown sweep axis {axis!r}")


def _sweep_point(base, axis1, v1, axis2, v2, t_end, seed, stream, n_blocks,
                 alpha_gauss):
    cfg = config_at(base, axis1.name, v1, alpha_gauss)
    if axis2 is not None:
        cfg = config_at(cfg, axis2.name, v2, alpha_gauss)
    traj = simulate_trajectory(cfg, t_end, seed=seed, stream=stream)
    series = intensity_fluctuations(traj, cfg)
    return g2(series, 0.0), g2_stderr(series, 0.0, n_blocks), cfg


def g2_zero_sweep(base: SystemConfig, axis1: AxisSpec,
                  axis2: AxisSpec | None = None, *, t_end: float,
                  seed: int = 0, n_blocks: int = 8,
                  threads: int | None = None,
                  alpha_gauss: float | None = None) -> SweepTable:
    """Zero-delay correlation over a parameter grid, one trajectory per point.

    Grid point k draws its noise from stream k of the master seed, so the
    table is reproducible regardless of thread scheduling. Each point also
    carries the block standard error of its estimate.
    """
    points = []
    if axis2 is None:
        for i, v1 in enumerate(axis1.values):
            points.append((i, v1, None))
        shape = (len(axis1.values),)
    else:
        k = 0
        for i, v1 in enumerate(axis1.values):
            for j, v2 in enumerate(axis2.values):
                points.append(((i, j), v1, v2))
                k += 1
        shape = (len(axis1.values), len(axis2.values))

    values = np.empty(shape)
    stderr = np.empty(shape)
    configs: list = [None] * len(points)

    def run(item):
        stream, (idx, v1, v2) = item
        val, err, cfg = _sweep_point(base, axis1, v1, axis2, v2, t_end, seed,
                                     stream, n_blocks, alpha_gauss)
        return stream, idx, val, err, cfg

    items = list(enumerate(points))
    if threads is None or threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(it) for it in items]
    for stream, idx, val, err, cfg in results:
        values[idx] = val
        stderr[idx] = err
        configs[stream] = asdict(cfg)
    return SweepTable(axis1=axis1, axis2=axis2, values=values, stderr=stderr,
                      configs=configs, t_end=t_end, seed=seed)
