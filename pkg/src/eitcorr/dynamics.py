"""Stochastic density-matrix dynamics of a driven three-level lambda system.

Two ground levels |b>, |c> couple to one excited level |a> through two
optical fields with Rabi frequencies omega1 (b-a) and omega2 (c-a). The five
independent density-matrix components (rho_bc, rho_ba, rho_ca, rho_bb,
rho_cc) evolve under coherent driving, radiative decay, dephasing, and a
common multiplicative phase-derivative noise xi(t) acting on both optical
coherences; rho_aa is eliminated by the trace. All rates are expressed in
units of the a->c spontaneous rate g1_tilde, times in its inverse.

Two integrators are provided: an explicit Euler-Maruyama scheme driven by a
colored-noise realization (the Monte-Carlo workhorse), and a deterministic
stochastically-averaged scheme in which the noise is replaced by an extra
decay d on both optical coherences (exact for white noise; serves as the
ensemble-mean oracle).
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .noise import NoiseParams, NoiseStream, white_noise_params

_DIVERGENCE_BOUND = 10.0
_CHUNK_STEPS = 1 << 19


class DivergenceError(RuntimeError):
    """A trajectory component left the physical range; step size or
    parameters are at fault."""


@dataclass(frozen=True)
class RateSet:
    """Raw spontaneous-emission, population-decay, and dephasing rates.

    g1_tilde, g2_tilde: spontaneous rates a->c and a->b; g3_tilde: population
    decay of |b>; d21, d12, d32, d31: dephasing rates. Defaults are the
    standard working point of this package: radiative rates of 1, weak
    symmetric ground-state dephasing of 0.01.
    """

    g1_tilde: float = 1.0
    g2_tilde: float = 1.0
    g3_tilde: float = 0.0
    d21: float = 0.01
    d12: float = 0.01
    d32: float = 0.0
    d31: float = 0.0

    def __post_init__(self):
        for name in ("g1_tilde", "g2_tilde", "g3_tilde", "d21", "d12", "d32", "d31"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"rate {name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class EffectiveRates:
    """Decay rates of the three coherences: gamma1 (b-a), gamma2 (c-a),
    gamma3 (b-c, the ground-state decoherence rate)."""

    gamma1: float
    gamma2: float
    gamma3: float


def effective_rates(rates: RateSet) -> EffectiveRates:
    """Combine raw decay and dephasing rates into coherence decay rates."""
    gamma3 = (rates.g3_tilde + rates.d21 + rates.d12) / 2.0
    gamma1 = (rates.g1_tilde + rates.g2_tilde + rates.d21 + rates.d31) / 2.0
    gamma2 = (rates.g1_tilde + rates.g2_tilde + rates.g3_tilde
              + rates.d12 + rates.d32) / 2.0
    return EffectiveRates(gamma1=gamma1, gamma2=gamma2, gamma3=gamma3)


@dataclass(frozen=True)
class SystemConfig:
    """Full physical configuration of one simulation.

    omega1, omega2: Rabi frequencies; delta: two-photon (ground-splitting)
    detuning; delta1: one-photon detuning; kappa1_l, kappa2_l: dimensionless
    coupling-length products of the thin-medium output model (must be < 1);
    noise: parameters of the phase-derivative process. If
    swap_output_channels is set, the output-field model pairs beam 1 with
    the a-b coherence instead of a-c (both pairings give the same zero-delay
    cross-correlation).
    """

    rates: RateSet = field(default_factory=RateSet)
    omega1: float = 1.0
    omega2: float = 1.0
    delta: float = 0.0
    delta1: float = 0.0
    kappa1_l: float = 0.1
    kappa2_l: float = 0.1
    noise: NoiseParams = field(default_factory=NoiseParams)
    swap_output_channels: bool = False

    def __post_init__(self):
        if self.omega1 < 0.0 or self.omega2 < 0.0:
            raise ValueError("Rabi frequencies must be >= 0")
        for name in ("kappa1_l", "kappa2_l"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ValueError(
                    f"{name} must lie in [0, 1) for the thin-medium expansion, got {v}")
        for name in ("delta", "delta1"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def effective(self) -> EffectiveRates:
        return effective_rates(self.rates)


def dt_max(cfg: SystemConfig) -> float:
    """Largest admissible Euler step: 0.05 over the fastest rate present."""
    eff = cfg.effective
    fastest = max(eff.gamma1, eff.gamma2, cfg.omega1, cfg.omega2,
                  abs(cfg.delta1), cfg.noise.lambda_l)
    return 0.05 / fastest


def make_config(delta: float = 0.0, gamma3: float = 0.01, omega: float = 1.0,
                diffusion: float = 0.02, lambda_ratio: float = 50.0,
                delta1: float = 0.0, kappa_l: float = 0.1) -> SystemConfig:
    """Build a self-consistent configuration around the standard working point.

    The ground-coherence decay gamma3 is realized through symmetric
    dephasing (d21 = d12 = gamma3, no population decay of |b>), both Rabi
    frequencies are set to omega, and the noise is placed in the white limit
    for the given diffusion coefficient with lambda_l = lambda_ratio times
    the fastest physical rate. The integration step stored in the noise
    parameters satisfies the stability rule.
    """
    rates = RateSet(d21=gamma3, d12=gamma3)
    noise = white_noise_params(diffusion,
                               fastest_rate=max(rates.g1_tilde, omega),
                               ratio=lambda_ratio)
    cfg = SystemConfig(rates=rates, omega1=omega, omega2=omega, delta=delta,
                       delta1=delta1, kappa1_l=kappa_l, kappa2_l=kappa_l,
                       noise=noise)
    step = dt_max(cfg)
    if noise.dt > step:
        cfg = replace(cfg, noise=replace(noise, dt=step))
    return cfg


@dataclass
class DensityState:
    """The five independent density-matrix components; rho_aa is implied
    by the trace."""

    rho_bb: float = 0.5
    rho_cc: float = 0.5
    rho_bc: complex = 0j
    rho_ba: complex = 0j
    rho_ca: complex = 0j

    @property
    def rho_aa(self) -> float:
        return 1.0 - (self.rho_bb + self.rho_cc)


def drift(state: DensityState, cfg: SystemConfig, xi: float = 0.0,
          extra_optical_decay: float = 0.0) -> DensityState:
    """Time derivative of the density-matrix components.

    xi is the instantaneous phase-derivative sample multiplying both optical
    coherences. extra_optical_decay adds to gamma1 and gamma2 only; the
    stochastically-averaged equations use it to absorb white phase noise of
    diffusion coefficient d as extra_optical_decay = d.
    """
    eff = cfg.effective
    g1 = eff.gamma1 + extra_optical_decay
    g2 = eff.gamma2 + extra_optical_decay
    om1, om2 = cfg.omega1, cfg.omega2
    raa = state.rho_aa
    d_bc = (-(eff.gamma3 + 1j * cfg.delta) * state.rho_bc
            + 1j * om1 * np.conj(state.rho_ca) - 1j * om2 * state.rho_ba)
    d_ba = (-(g1 + 1j * cfg.delta1) * state.rho_ba
            - 1j * om1 * (state.rho_bb - raa)
            - 1j * om2 * state.rho_bc + 1j * xi * state.rho_ba)
    d_ca = (-(g2 - 1j * cfg.delta1) * state.rho_ca
            - 1j * om2 * (state.rho_cc - raa)
            - 1j * om1 * np.conj(state.rho_bc) + 1j * xi * state.rho_ca)
    d_bb = (cfg.rates.g3_tilde * state.rho_cc + cfg.rates.g1_tilde * raa
            + 2.0 * om1 * state.rho_ba.imag)
    d_cc = (cfg.rates.g2_tilde * raa - cfg.rates.g3_tilde * state.rho_cc
            + 2.0 * om2 * state.rho_ca.imag)
    return DensityState(rho_bb=d_bb, rho_cc=d_cc, rho_bc=complex(d_bc),
                        rho_ba=complex(d_ba), rho_ca=complex(d_ca))


def step(state: DensityState, cfg: SystemConfig, xi: float, dt: float) -> DensityState:
    """One explicit Euler update; dt must satisfy the step-size rule."""
    if dt > dt_max(cfg):
        raise ValueError(f"dt={dt} exceeds the stability bound {dt_max(cfg)}")
    d = drift(state, cfg, xi)
    return DensityState(
        rho_bb=state.rho_bb + dt * d.rho_bb,
        rho_cc=state.rho_cc + dt * d.rho_cc,
        rho_bc=state.rho_bc + dt * d.rho_bc,
        rho_ba=state.rho_ba + dt * d.rho_ba,
        rho_ca=state.rho_ca + dt * d.rho_ca,
    )


@dataclass
class Trajectory:
    """Recorded post-transient samples of one integration."""

    dt: float
    dt_record: float
    t_transient: float
    seed: int
    t: np.ndarray
    rho_ba: np.ndarray
    rho_ca: np.ndarray
    rho_bc: np.ndarray
    rho_bb: np.ndarray
    rho_cc: np.ndarray

    def __len__(self):
        return self.t.size


@njit(cache=True, nogil=True)
def _advance_chunk(rbc, rba, rca, rbb, rcc, xi, dt,
                   gamma1, gamma2, gamma3, g1t, g2t, g3t,
                   om1, om2, delta, delta1,
                   step_start, next_record, record_every, rec_index,
                   rec_ba, rec_ca, rec_bc, rec_bb, rec_cc):
    status = 0
    n = xi.shape[0]
    for j in range(n):
        x = xi[j]
        raa = 1.0 - (rbb + rcc)
        d_bc = (-(gamma3 + 1j * delta) * rbc
                + 1j * om1 * np.conj(rca) - 1j * om2 * rba)
        d_ba = (-(gamma1 + 1j * delta1) * rba - 1j * om1 * (rbb - raa)
                - 1j * om2 * rbc + 1j * x * rba)
        d_ca = (-(gamma2 - 1j * delta1) * rca - 1j * om2 * (rcc - raa)
                - 1j * om1 * np.conj(rbc) + 1j * x * rca)
        d_bb = g3t * rcc + g1t * raa + 2.0 * om1 * rba.imag
        d_cc = g2t * raa - g3t * rcc + 2.0 * om2 * rca.imag
        rbc = rbc + dt * d_bc
        rba = rba + dt * d_ba
        rca = rca + dt * d_ca
        rbb = rbb + dt * d_bb
        rcc = rcc + dt * d_cc
        if step_start + j + 1 == next_record:
            rec_ba[rec_index] = rba
            rec_ca[rec_index] = rca
            rec_bc[rec_index] = rbc
            rec_bb[rec_index] = rbb
            rec_cc[rec_index] = rcc
            rec_index += 1
            next_record += record_every
            ok = (abs(rba) <= _DIVERGENCE_BOUND and abs(rca) <= _DIVERGENCE_BOUND
                  and abs(rbc) <= _DIVERGENCE_BOUND and abs(rbb) <= _DIVERGENCE_BOUND
                  and abs(rcc) <= _DIVERGENCE_BOUND)
            if not ok:
                status = 1
                break
    return rbc, rba, rca, rbb, rcc, next_record, rec_index, status


def default_transient(cfg: SystemConfig, t_end: float) -> float:
    """Transient span to discard: twenty times the slowest relaxation time,
    capped at half the run."""
    eff = cfg.effective
    slowest = min(eff.gamma3, eff.gamma1)
    raw = 20.0 / slowest if slowest > 0.0 else math.inf
    return min(raw, t_end / 2.0)


def _plan(cfg, t_end, dt, dt_record, t_transient):
    if dt is None:
        dt = cfg.noise.dt
    if t_transient is None:
        t_transient = default_transient(cfg, t_end)
    if dt_record is None:
        dt_record = 50.0 * dt
    record_every = max(1, int(round(dt_record / dt)))
    dt_record = record_every * dt
    n_transient = int(round(t_transient / dt))
    t_transient = n_transient * dt
    if t_end <= t_transient:
        raise ValueError(f"t_end={t_end} must exceed the transient {t_transient}")
    n_rec = int(math.floor((t_end - t_transient) / dt_record))
    if n_rec < 1:
        raise ValueError("recording window shorter than one recording interval")
    return dt, dt_record, record_every, n_transient, t_transient, n_rec


def _integrate(cfg: SystemConfig, t_end: float, dt, seed, stream, dt_record,
               t_transient, initial: DensityState, xi_series, averaged_d,
               enforce_step_rule: bool) -> Trajectory:
    """Shared chunked driver for the stochastic and averaged integrators."""
    dt, dt_record, record_every, n_transient, t_transient, n_rec = _plan(
        cfg, t_end, dt, dt_record, t_transient)
    if enforce_step_rule and dt > dt_max(cfg) * (1.0 + 1e-12):
        raise ValueError(
            f"dt={dt} violates the step-size rule dt <= {dt_max(cfg):.3g}; "
            "reduce dt or the fastest rate")
    n_total = n_transient + n_rec * record_every

    eff = cfg.effective
    gamma1, gamma2 = eff.gamma1, eff.gamma2
    noise_source = None
    if averaged_d is not None:
        gamma1 += averaged_d
        gamma2 += averaged_d
    elif xi_series is None:
        params = cfg.noise if cfg.noise.dt == dt else replace(cfg.noise, dt=dt)
        noise_source = NoiseStream(seed, params, stream)
    elif len(xi_series) < n_total:
        raise ValueError(f"xi series has {len(xi_series)} samples, need {n_total}")

    rec_ba = np.empty(n_rec, dtype=np.complex128)
    rec_ca = np.empty(n_rec, dtype=np.complex128)
    rec_bc = np.empty(n_rec, dtype=np.complex128)
    rec_bb = np.empty(n_rec)
    rec_cc = np.empty(n_rec)

    rbc, rba, rca = complex(initial.rho_bc), complex(initial.rho_ba), complex(initial.rho_ca)
    rbb, rcc = float(initial.rho_bb), float(initial.rho_cc)
    done = 0
    rec_index = 0
    next_record = n_transient + record_every
    while done < n_total:
        n_chunk = min(_CHUNK_STEPS, n_total - done)
        if averaged_d is not None:
            xi = np.zeros(n_chunk)
        elif xi_series is not None:
            xi = np.ascontiguousarray(xi_series[done:done + n_chunk], dtype=float)
        else:
            xi = noise_source.take(n_chunk)
        (rbc, rba, rca, rbb, rcc, next_record, rec_index, status) = _advance_chunk(
            rbc, rba, rca, rbb, rcc, xi, dt,
            gamma1, gamma2, eff.gamma3,
            cfg.rates.g1_tilde, cfg.rates.g2_tilde, cfg.rates.g3_tilde,
            cfg.omega1, cfg.omega2, cfg.delta, cfg.delta1,
            done, next_record, record_every, rec_index,
            rec_ba, rec_ca, rec_bc, rec_bb, rec_cc)
        if status != 0:
            t_fail = t_transient + rec_index * dt_record
            raise DivergenceError(
                f"component magnitude exceeded {_DIVERGENCE_BOUND} near t={t_fail:.3g}; "
                "step size or parameters are at fault")
        done += n_chunk

    t = t_transient + dt_record * np.arange(1, n_rec + 1)
    return Trajectory(dt=dt, dt_record=dt_record, t_transient=t_transient,
                      seed=int(seed), t=t, rho_ba=rec_ba, rho_ca=rec_ca,
                      rho_bc=rec_bc, rho_bb=rec_bb, rho_cc=rec_cc)


def simulate_trajectory(cfg: SystemConfig, t_end: float, dt: float | None = None,
                        seed: int = 0, stream: int = 0,
                        dt_record: float | None = None,
                        t_transient: float | None = None,
                        initial: DensityState | None = None,
                        xi_series: np.ndarray | None = None,
                        enforce_step_rule: bool = True) -> Trajectory:
    """Integrate one noisy trajectory and record it after the transient.

    The run starts from unpolarized ground-state atoms (rho_bb = rho_cc =
    1/2, no coherences) unless an initial state is given. The noise
    realization is fully determined by (seed, stream); passing xi_series
    overrides the generator with an externally supplied sample array (one
    sample per step).
    """
    if initial is None:
        initial = DensityState()
    return _integrate(cfg, t_end, dt, seed, stream, dt_record, t_transient,
                      initial, xi_series, None, enforce_step_rule)


def integrate_averaged(cfg: SystemConfig, d: float, t_end: float,
                       dt: float | None = None,
                       dt_record: float | None = None,
                       t_transient: float | None = None,
                       initial: DensityState | None = None) -> Trajectory:
    """Deterministic stochastically-averaged dynamics for white noise.

    The multiplicative phase noise is switched off and replaced by an extra
    decay d of both optical coherences, which is the exact ensemble-mean
    equation when the phase derivative is white with diffusion coefficient
    d (the noise coupling is diagonal with entries +-1 on the optical
    coherences, so the second-order average contributes -d on each).
    """
    if d < 0.0:
        raise ValueError("diffusion coefficient must be >= 0")
    if initial is None:
        initial = DensityState()
    return _integrate(cfg, t_end, dt, 0, 0, dt_record, t_transient,
                      initial, None, d, True)


def ensemble_mean(cfg: SystemConfig, t_end: float, n_trajectories: int,
                  master_seed: int = 0, dt: float | None = None,
                  dt_record: float | None = None,
                  t_transient: float = 0.0) -> dict:
    """Monte-Carlo ensemble mean of the recorded components.

    Trajectory i draws its noise from stream i of the master seed, so the
    result is independent of execution order. Returns means and standard
    errors of rho_ba (and the other components' means) on the recording grid.
    """
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be >= 1")
    acc = {}
    sum_ba = sum_ca = sum_bc = None
    sumsq_ba_re = sumsq_ba_im = None
    sum_bb = sum_cc = None
    t = None
    for i in range(n_trajectories):
        traj = simulate_trajectory(cfg, t_end, dt=dt, seed=master_seed, stream=i,
                                   dt_record=dt_record, t_transient=t_transient)
        if sum_ba is None:
            t = traj.t
            sum_ba = np.zeros_like(traj.rho_ba)
            sum_ca = np.zeros_like(traj.rho_ca)
            sum_bc = np.zeros_like(traj.rho_bc)
            sum_bb = np.zeros_like(traj.rho_bb)
            sum_cc = np.zeros_like(traj.rho_cc)
            sumsq_ba_re = np.zeros_like(traj.rho_bb)
            sumsq_ba_im = np.zeros_like(traj.rho_bb)
        sum_ba += traj.rho_ba
        sum_ca += traj.rho_ca
        sum_bc += traj.rho_bc
        sum_bb += traj.rho_bb
        sum_cc += traj.rho_cc
        sumsq_ba_re += traj.rho_ba.real**2
        sumsq_ba_im += traj.rho_ba.imag**2
    n = n_trajectories
    mean_ba = sum_ba / n
    var_re = np.maximum(sumsq_ba_re / n - mean_ba.real**2, 0.0)
    var_im = np.maximum(sumsq_ba_im / n - mean_ba.imag**2, 0.0)
    acc["t"] = t
    acc["rho_ba"] = mean_ba
    acc["rho_ca"] = sum_ca / n
    acc["rho_bc"] = sum_bc / n
    acc["rho_bb"] = sum_bb / n
    acc["rho_cc"] = sum_cc / n
    acc["stderr_ba_re"] = np.sqrt(var_re / n)
    acc["stderr_ba_im"] = np.sqrt(var_im / n)
    acc["n_trajectories"] = n
    return acc
