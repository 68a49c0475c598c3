"""Magnetic-field calibration and decoherence-rate extraction.

An applied field B splits the two ground levels by delta = a*B with
a = (mu_B/hbar) * g * (m2 - m1) in MHz per Gauss. Because the zero-delay
correlation versus delta/gamma3 is one universal master curve (invariant in
gamma3 and, for strong enough driving, in Rabi frequency), a measured sweep
of the correlation versus B determines a single scaling factor alpha with
B = alpha * delta/gamma3, and the physical decoherence rate follows as
gamma3 = alpha * a.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from .dynamics import SystemConfig, effective_rates
from .observables import AxisSpec, config_at, g2_zero_sweep


class UnidentifiableScaleError(ValueError):
    """The measured sweep cannot pin the scaling factor (no sign change)."""


@dataclass(frozen=True)
class ZeemanParams:
    """Ground-level splitting constants: a = mu_b_over_hbar * g_factor * delta_m.

    Defaults describe two stretched ground sublevels with m2 - m1 = 2 and
    g = 0.5, giving a = 1.4 MHz/G.
    """

    g_factor: float = 0.5
    delta_m: int = 2
    mu_b_over_hbar: float = 1.4  # MHz per Gauss

    def __post_init__(self):
        if self.mu_b_over_hbar <= 0.0:
            raise ValueError("mu_b_over_hbar must be > 0")

    @property
    def mhz_per_gauss(self) -> float:
        return self.mu_b_over_hbar * self.g_factor * self.delta_m


def zeeman_detuning(b_gauss: float, zp: ZeemanParams) -> float:
    """Two-photon detuning in MHz produced by a field of b_gauss Gauss."""
    return zp.mhz_per_gauss * b_gauss


DEFAULT_MASTER_GRID = (-4.0, -3.0, -2.0, -1.5, -1.0, -0.75, -0.5, -0.25,
                       0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0)


@dataclass
class MasterCurve:
    """Zero-delay correlation versus the dimensionless detuning x = delta/gamma3."""

    x: np.ndarray
    y: np.ndarray
    stderr: np.ndarray
    provenance: dict

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if self.x.size != self.y.size or self.x.size < 2:
            raise ValueError("master curve needs matching x and y with >= 2 points")
        if np.any(np.diff(self.x) <= 0.0):
            raise ValueError("master-curve grid must be strictly increasing")

    def interpolator(self):
        """Monotone (shape-preserving) cubic through the sweep points,
        held at the endpoint values outside the computed range."""
        pchip = PchipInterpolator(self.x, self.y, extrapolate=False)
        x_lo, x_hi = self.x[0], self.x[-1]

        def evaluate(x):
            return pchip(np.clip(x, x_lo, x_hi))

        return evaluate


def build_master_curve(base: SystemConfig, x_grid=DEFAULT_MASTER_GRID,
                       gamma3: float | None = None, *, t_end: float,
                       seed: int = 0, threads: int | None = None) -> MasterCurve:
    """Sweep the zero-delay correlation at delta = x * gamma3.

    gamma3 defaults to the base configuration's ground-coherence decay. The
    driving should satisfy omega >= g1_tilde for the curve to be in the
    Rabi-invariant regime; weaker driving is allowed but flagged.
    """
    if gamma3 is None:
        gamma3 = effective_rates(base.rates).gamma3
    if gamma3 <= 0.0:
        raise ValueError("gamma3 must be > 0 to define x = delta/gamma3")
    cfg = config_at(base, "gamma3", gamma3)
    if min(cfg.omega1, cfg.omega2) < cfg.rates.g1_tilde:
        warnings.warn("Rabi frequency below g1_tilde: master curve may sit "
                      "outside its invariance regime", stacklevel=2)
    x = np.asarray(sorted(float(v) for v in x_grid))
    axis = AxisSpec("delta", tuple(x * gamma3))
    table = g2_zero_sweep(cfg, axis, t_end=t_end, seed=seed, threads=threads)
    provenance = {"gamma3": gamma3, "t_end": t_end, "seed": seed,
                  "config": table.configs[0]}
    return MasterCurve(x=x, y=table.values, stderr=table.stderr,
                       provenance=provenance)


def collapse_residual(curves: list[MasterCurve]) -> float:
    """RMS pairwise deviation of master curves sharing one x grid."""
    if len(curves) < 2:
        raise ValueError("need at least two curves")
    x0 = curves[0].x
    for c in curves[1:]:
        if c.x.size != x0.size or not np.allclose(c.x, x0, rtol=0.0, atol=1e-12):
            raise ValueError("curves are not on a common x grid")
    devs = []
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            devs.append(curves[i].y - curves[j].y)
    return float(np.sqrt(np.mean(np.concatenate(devs) ** 2)))


@dataclass(frozen=True)
class FitResult:
    """Scaling fit outcome: B = alpha * x, decoherence rate gamma3 = alpha * a."""

    alpha: float
    alpha_stderr: float
    gamma3_physical: float  # MHz
    residual: float  # RMS misfit in correlation units


def fit_alpha(b_gauss, g2_zero, master: MasterCurve, zp: ZeemanParams,
              stderr=None, alpha_bounds: tuple[float, float] | None = None,
              n_scan: int = 200) -> FitResult:
    """Least-squares scaling of a measured sweep onto the master curve.

    Finds alpha > 0 minimizing the weighted squared distance between the
    measured correlations at fields b and the master curve evaluated at
    x = b/alpha. The objective is scanned on a dense logarithmic alpha grid
    and polished with bounded scalar minimization. Weights default to
    uniform; per-point standard errors, when given, weight as 1/stderr**2.
    """
    b = np.asarray(b_gauss, dtype=float)
    y = np.asarray(g2_zero, dtype=float)
    if b.size != y.size or b.size < 3:
        raise ValueError("need matching b and g2 arrays with >= 3 points")
    if y.min() >= 0.0 or y.max() <= 0.0:
        raise UnidentifiableScaleError(
            "measured sweep must span both correlated and anticorrelated "
            "regions to identify the scale")
    if stderr is None:
        w = np.ones_like(y)
    else:
        se = np.asarray(stderr, dtype=float)
        if np.any(~np.isfinite(se)) or np.any(se <= 0.0):
            # degenerate error bars (e.g. an exactly-saturated point): the
            # inverse-variance weighting is meaningless, use uniform weights
            w = np.ones_like(y)
        else:
            w = 1.0 / se**2
    model = master.interpolator()

    def sse(alpha):
        r = y - model(b / alpha)
        return float(np.dot(w, r * r))

    if alpha_bounds is None:
        scale = np.max(np.abs(b)) / np.max(np.abs(master.x))
        alpha_bounds = (0.02 * scale, 50.0 * scale)
    lo, hi = alpha_bounds
    grid = np.geomspace(lo, hi, n_scan)
    costs = np.array([sse(a) for a in grid])
    k = int(np.argmin(costs))
    bracket_lo = grid[max(0, k - 1)]
    bracket_hi = grid[min(n_scan - 1, k + 1)]
    res = minimize_scalar(sse, bounds=(bracket_lo, bracket_hi), method="bounded",
                          options={"xatol": 1e-6 * grid[k]})
    alpha = float(res.x)
    n = y.size
    ssr = sse(alpha)
    r = y - model(b / alpha)
    residual = float(np.sqrt(np.mean(r * r)))
    # curvature-based uncertainty: var(alpha) ~ 2 s^2 / d2(SSE)/d(alpha)^2
    h = 1e-3 * alpha
    curv = (sse(alpha + h) - 2.0 * ssr + sse(alpha - h)) / (h * h)
    s2 = ssr / max(n - 1, 1)
    alpha_stderr = math.sqrt(2.0 * s2 / curv) if curv > 0.0 else math.nan
    return FitResult(alpha=alpha, alpha_stderr=alpha_stderr,
                     gamma3_physical=alpha * zp.mhz_per_gauss,
                     residual=residual)
