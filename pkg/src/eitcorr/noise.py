"""Gaussian deviates and Ornstein-Uhlenbeck noise for the laser phase derivative.

The quantity produced here is xi(t), the time derivative of the fluctuating
laser phase. It is modeled as a stationary Ornstein-Uhlenbeck process with
autocorrelation theta * lambda_l * exp(-lambda_l * |t - t'|). The white-noise
(pure phase diffusion) limit is reached by making lambda_l large at fixed
theta, in which case theta plays the role of the diffusion coefficient D and
the laser line is Lorentzian with FWHM D/pi (in cycles per unit time).

All randomness derives from a counter-based 64-bit generator (splitmix64), so
any sample of any stream can be regenerated from (seed, stream, index) alone.
Normal deviates are produced from uniform pairs by the Box-Muller transform.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter, welch

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_TWO_M53 = 2.0**-53


def mix64(z: int) -> int:
    """splitmix64 finalizing mixer; a bijection on 64-bit integers."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int = 0) -> int:
    """Derive the 64-bit key of an independent sub-stream.

    One stream is used per trajectory or grid point. The derivation is
    key = mix64(seed XOR mix64(GOLDEN * (stream + 1))), so streams of one
    seed and streams of different seeds are all decorrelated.
    """
    return mix64((seed & _MASK64) ^ mix64((_GOLDEN * (stream + 1)) & _MASK64))


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
    return z ^ (z >> np.uint64(31))


def _raw64(key: int, start: int, n: int) -> np.ndarray:
    """Raw 64-bit words of a keyed stream at counter positions start..start+n-1."""
    idx = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    return _mix64_array(np.uint64(key) + idx * np.uint64(_GOLDEN))


def gaussian_pair(u1, u2):
    """Box-Muller transform of a uniform pair into two standard normals.

    z1 = sqrt(-2 ln u1) cos(2 pi u2), z2 = sqrt(-2 ln u1) sin(2 pi u2).
    u1 must lie in (0, 1] (the logarithm is singular at 0) and u2 in [0, 1).
    Accepts scalars or equal-shaped arrays.
    """
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if np.any(u1 <= 0.0) or np.any(u1 > 1.0):
        raise ValueError("u1 must lie in (0, 1]; the uniform source is invalid")
    if np.any(u2 < 0.0) or np.any(u2 >= 1.0):
        raise ValueError("u2 must lie in [0, 1)")
    r = np.sqrt(-2.0 * np.log(u1))
    phase = (2.0 * np.pi) * u2
    z1 = r * np.cos(phase)
    z2 = r * np.sin(phase)
    if z1.ndim == 0:
        return float(z1), float(z2)
    return z1, z2


def standard_normals(key: int, n: int, start: int = 0) -> np.ndarray:
    """n standard-normal deviates of the keyed stream, starting at index start.

    Deviates are generated in Box-Muller pairs from consecutive uniform
    words; sample k of a stream is the same no matter how the stream is
    chunked, so chunked consumers reproduce one continuous series.
    """
    if n <= 0:
        return np.empty(0)
    pair_lo = start // 2
    pair_hi = (start + n + 1) // 2
    n_pairs = pair_hi - pair_lo
    v = _raw64(key, 2 * pair_lo, 2 * n_pairs)
    u1 = ((v[0::2] >> np.uint64(11)) + np.uint64(1)) * _TWO_M53  # (0, 1]
    u2 = (v[1::2] >> np.uint64(11)) * _TWO_M53  # [0, 1)
    z1, z2 = gaussian_pair(u1, u2)
    out = np.empty(2 * n_pairs)
    out[0::2] = z1
    out[1::2] = z2
    lo = start - 2 * pair_lo
    return out[lo : lo + n]


@dataclass(frozen=True)
class NoiseParams:
    """Parameters of the Ornstein-Uhlenbeck phase-derivative process.

    theta: noise strength (rate units); equals the phase-diffusion
        coefficient D in the white-noise limit.
    lambda_l: inverse correlation time (rate units).
    dt: sample spacing; also the integration step of any dynamics
        consuming the stream.
    """

    theta: float = 0.02
    lambda_l: float = 50.0
    dt: float = 1e-3

    def __post_init__(self):
        if not (math.isfinite(self.theta) and self.theta >= 0.0):
            raise ValueError(f"theta must be finite and >= 0, got {self.theta}")
        if not (math.isfinite(self.lambda_l) and self.lambda_l > 0.0):
            raise ValueError(f"lambda_l must be finite and > 0, got {self.lambda_l}")
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"dt must be finite and > 0, got {self.dt}")

    @property
    def stationary_variance(self) -> float:
        return self.theta * self.lambda_l

    @property
    def decay_factor(self) -> float:
        """One-step memory exp(-lambda_l dt) of the exact update."""
        return math.exp(-self.lambda_l * self.dt)

    @property
    def kick_sigma(self) -> float:
        """Innovation standard deviation of the exact one-step update."""
        a = self.decay_factor
        return math.sqrt(self.theta * self.lambda_l * (1.0 - a * a))


def white_noise_params(d: float, fastest_rate: float = 1.0, ratio: float = 50.0,
                       dt: float | None = None) -> NoiseParams:
    """Map a phase-diffusion coefficient to OU parameters in the white limit.

    Sets theta = d and lambda_l = ratio * fastest_rate, so the correlation
    area integral theta*lambda*exp(-lambda|tau|) d tau = 2*theta matches the
    white-noise value 2*d while the correlation time 1/lambda_l sits at least
    a decade below every dynamical timescale. dt defaults to 0.05/lambda_l,
    the stability bound of the explicit integrator consuming the stream.
    """
    if d < 0.0:
        raise ValueError(f"diffusion coefficient must be >= 0, got {d}")
    lam = ratio * fastest_rate
    if dt is None:
        dt = 0.05 / lam
    return NoiseParams(theta=float(d), lambda_l=float(lam), dt=float(dt))


def ou_step(x: float, params: NoiseParams, z: float) -> float:
    """Advance one sample with the exact (transition-density) OU update.

    x' = x exp(-lambda dt) + sqrt(theta lambda (1 - exp(-2 lambda dt))) z
    preserves the stationary law N(0, theta*lambda) for standard normal z.
    """
    return x * params.decay_factor + params.kick_sigma * z


def _ou_scan(a: float, b: float, x_prev: float, z: np.ndarray) -> np.ndarray:
    """x_k = a x_{k-1} + b z_k as a linear recursion at C speed."""
    y, _ = lfilter([b], [1.0, -a], z, zi=np.array([a * x_prev]))
    return y


class NoiseStream:
    """Single-owner chunked realization of the OU phase-derivative process.

    The first sample is drawn from the stationary distribution, so the series
    carries no equilibration transient; later samples follow the exact
    one-step update. Equal (seed, stream, params) reproduce the same series
    bit-for-bit on one platform, independent of chunking.
    """

    def __init__(self, seed: int, params: NoiseParams, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.params = params
        self._key = stream_key(self.seed, self.stream)
        self._consumed = 0  # normal deviates consumed so far
        self.current = 0.0  # last emitted sample

    def take(self, n: int) -> np.ndarray:
        """Return the next n samples of the series."""
        if n <= 0:
            return np.empty(0)
        z = standard_normals(self._key, n, start=self._consumed)
        p = self.params
        out = np.empty(n)
        if self._consumed == 0:
            x0 = math.sqrt(p.stationary_variance) * z[0]
            out[0] = x0
            if n > 1:
                out[1:] = _ou_scan(p.decay_factor, p.kick_sigma, x0, z[1:])
        else:
            out[:] = _ou_scan(p.decay_factor, p.kick_sigma, self.current, z)
        self._consumed += n
        self.current = float(out[-1])
        return out


def ou_trajectory(seed: int, n_samples: int, params: NoiseParams,
                  stream: int = 0) -> np.ndarray:
    """A length-n realization of the stationary OU process for one stream."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return NoiseStream(seed, params, stream).take(n_samples)


def autocovariance(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Empirical autocovariance at lags 0..max_lag (mean removed, unbiased)."""
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    n = x.size
    if max_lag >= n:
        raise ValueError("max_lag must be smaller than the series length")
    out = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        out[k] = np.dot(x[: n - k], x[k:]) / (n - k)
    return out


def fit_decay_rate(lags_t: np.ndarray, acov: np.ndarray) -> tuple[float, float]:
    """Fit A*exp(-rate*t) to an autocovariance by log-linear least squares.

    Returns (rate, amplitude). Only the leading strictly positive stretch of
    the autocovariance is used; sign changes mark the onset of noise.
    """
    acov = np.asarray(acov, dtype=float)
    lags_t = np.asarray(lags_t, dtype=float)
    positive = acov > 0.0
    if not positive[0]:
        raise ValueError("autocovariance must be positive at lag 0")
    stop = np.argmin(positive) if not positive.all() else acov.size
    if stop < 3:
        raise ValueError("too few positive autocovariance points to fit")
    slope, intercept = np.polyfit(lags_t[:stop], np.log(acov[:stop]), 1)
    return -slope, math.exp(intercept)


def ou_self_test(seed: int, params: NoiseParams, n_samples: int,
                 variance_rtol: float = 0.03, rate_rtol: float = 0.05) -> dict:
    """Generate a long stream and check it against its own model.

    Verifies that the sample variance matches theta*lambda_l and that the
    fitted autocovariance decay rate matches lambda_l, over lags in
    [0, 3/lambda_l]. Returns a dict with the series statistics, the lag
    table (empirical and model autocovariance), and pass flags.
    """
    x = ou_trajectory(seed, n_samples, params)
    var = float(x.var())
    var_expected = params.stationary_variance
    max_lag = max(3, int(round(3.0 / (params.lambda_l * params.dt))))
    acov = autocovariance(x, max_lag)
    lags_t = np.arange(max_lag + 1) * params.dt
    rate, _ = fit_decay_rate(lags_t, acov)
    model = var_expected * np.exp(-params.lambda_l * lags_t)
    variance_ok = abs(var - var_expected) <= variance_rtol * var_expected
    rate_ok = abs(rate - params.lambda_l) <= rate_rtol * params.lambda_l
    return {
        "variance": var,
        "variance_expected": var_expected,
        "variance_ok": bool(variance_ok),
        "rate": float(rate),
        "rate_expected": params.lambda_l,
        "rate_ok": bool(rate_ok),
        "lags_t": lags_t,
        "empirical": acov,
        "model": model,
        "passed": bool(variance_ok and rate_ok),
    }


def linewidth_fwhm(seed: int, d: float, n_samples: int = 2_000_000,
                   n_streams: int = 12, ratio: float = 50.0,
                   nperseg: int = 1 << 17) -> float:
    """FWHM (cycles per unit time) of the field exp(i*phi) for white-limit streams.

    phi is the cumulative integral of the phase derivative. The two-sided
    Welch spectrum of the field, averaged over independent streams, is fitted
    over its core with the Lorentzian profile in the form 1/S = A + B*f**2
    (weighted linear least squares; the common chi-square scale of the
    spectral bins cancels in the width 2*sqrt(A/B)). For phase diffusion D
    the line has FWHM D/pi.
    """
    params = white_noise_params(d, fastest_rate=1.0, ratio=ratio)
    psd_sum = None
    for s in range(n_streams):
        xi = ou_trajectory(seed, n_samples, params, stream=s)
        phi = np.cumsum(xi) * params.dt
        field = np.exp(1j * phi)
        freqs, psd = welch(field, fs=1.0 / params.dt, nperseg=nperseg,
                           return_onesided=False, detrend=False)
        psd_sum = psd.real if psd_sum is None else psd_sum + psd.real
    freqs = np.fft.fftshift(freqs)
    psd = np.fft.fftshift(psd_sum) / n_streams
    core = psd > 0.1 * psd.max()
    f2 = freqs[core] ** 2
    y = 1.0 / psd[core]
    w = psd[core] ** 2  # inverse variance of 1/S up to a common factor
    sw, swx, swy = w.sum(), (w * f2).sum(), (w * y).sum()
    swxx, swxy = (w * f2 * f2).sum(), (w * f2 * y).sum()
    slope = (sw * swxy - swx * swy) / (sw * swxx - swx * swx)
    intercept = (swy - slope * swx) / sw
    if slope <= 0.0 or intercept <= 0.0:
        raise RuntimeError("spectral line fit degenerate; not a resolvable line")
    return 2.0 * math.sqrt(intercept / slope)
