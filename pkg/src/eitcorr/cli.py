"""Command-line surface: run simulations, correlation curves, sweeps, noise
self-tests, master-curve collapse checks, and scaling fits from a declarative
INI config plus per-subcommand flags.

All physical quantities in the config are expressed in units of g1_tilde
(rates) and its inverse (times), except magnetic fields (Gauss) and the
Zeeman block (MHz/G). Every run writes its CSV products plus a metadata
sidecar holding the fully resolved configuration, the master seed, the
package version, and the wall time, which is sufficient to re-run the job.

Exit codes: 0 success, 1 validation or parse error, 2 numerical divergence,
3 statistical self-test failure.
"""

import argparse
import configparser
import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .calibration import (DEFAULT_MASTER_GRID, MasterCurve, ZeemanParams,
                          build_master_curve, collapse_residual, fit_alpha)
from .dynamics import (DivergenceError, RateSet, SystemConfig, dt_max,
                       default_transient, effective_rates, simulate_trajectory)
from .noise import NoiseParams, ou_self_test
from .observables import (AxisSpec, g2_curve, g2_zero_sweep,
                          intensity_fluctuations, tau_grid)


class ConfigError(ValueError):
    """Configuration file is malformed or violates a model invariant."""


@dataclass
class SweepSpec:
    axis1: AxisSpec | None = None
    axis2: AxisSpec | None = None
    alpha_gauss: float = 1.0


@dataclass
class CollapseSpec:
    gamma3_values: tuple = (0.01, 0.05, 0.11)
    x_grid: tuple = DEFAULT_MASTER_GRID


@dataclass
class RunConfig:
    """Fully resolved and validated run description."""

    system: SystemConfig
    dt: float
    t_end: float
    t_transient: float
    dt_record: float
    n_trajectories: int
    master_seed: int
    sweep: SweepSpec
    collapse: CollapseSpec
    zeeman: ZeemanParams
    out_dir: str
    noise_test_samples: int

    def as_dict(self) -> dict:
        d = {
            "system": asdict(self.system),
            "integration": {"dt": self.dt, "t_end": self.t_end,
                            "t_transient": self.t_transient,
                            "dt_record": self.dt_record},
            "ensemble": {"n_trajectories": self.n_trajectories,
                         "master_seed": self.master_seed},
            "zeeman": asdict(self.zeeman),
            "io": {"out_dir": self.out_dir},
            "noise_test_samples": self.noise_test_samples,
        }
        if self.sweep.axis1 is not None:
            d["sweep"] = {
                "axis1": {"name": self.sweep.axis1.name,
                          "values": list(self.sweep.axis1.values)},
                "axis2": None if self.sweep.axis2 is None else
                         {"name": self.sweep.axis2.name,
                          "values": list(self.sweep.axis2.values)},
                "alpha_gauss": self.sweep.alpha_gauss,
            }
        d["collapse"] = {"gamma3_values": list(self.collapse.gamma3_values),
                         "x_grid": list(self.collapse.x_grid)}
        return d


_SCHEMA = {
    "system": {"gamma1_tilde", "gamma2_tilde", "gamma3_tilde", "gamma21_tilde",
               "gamma12_tilde", "gamma32_tilde", "gamma31_tilde", "omega1",
               "omega2", "delta", "delta1", "kappa1_l", "kappa2_l",
               "swap_output_channels"},
    "noise": {"theta", "diffusion_d", "lambda_l", "lambda_ratio",
              "self_test_samples"},
    "integration": {"dt", "t_end", "t_transient", "dt_record"},
    "ensemble": {"n_trajectories", "master_seed"},
    "sweep": {"axis1", "axis1_min", "axis1_max", "axis1_steps", "axis1_values",
              "axis2", "axis2_min", "axis2_max", "axis2_steps", "axis2_values",
              "alpha_gauss"},
    "collapse": {"gamma3_values", "x_min", "x_max", "x_steps", "x_values"},
    "zeeman": {"g_factor", "delta_m", "mu_b_mhz_per_gauss"},
    "io": {"out_dir"},
}


def _axis_from_section(sec, prefix: str) -> AxisSpec | None:
    name = sec.get(prefix)
    if name is None:
        return None
    values_key = f"{prefix}_values"
    if sec.get(values_key) is not None:
        values = tuple(float(v) for v in sec[values_key].split(","))
    else:
        lo = sec.getfloat(f"{prefix}_min")
        hi = sec.getfloat(f"{prefix}_max")
        steps = sec.getint(f"{prefix}_steps")
        if lo is None or hi is None or steps is None:
            raise ConfigError(
                f"sweep axis {prefix} needs {prefix}_values or "
                f"{prefix}_min/{prefix}_max/{prefix}_steps")
        values = tuple(np.linspace(lo, hi, steps))
    return AxisSpec(name.strip(), values)


def parse_config(path: str) -> RunConfig:
    """Read, default, and validate a run configuration.

    Unknown sections or keys are hard errors; every unset key takes its
    documented default; any violated model invariant is reported by name.
    """
    parser = configparser.ConfigParser(interpolation=None,
                                       inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    def sec(name):
        return parser[name] if parser.has_section(name) else parser["DEFAULT"]

    try:
        s = sec("system")
        rates = RateSet(
            g1_tilde=s.getfloat("gamma1_tilde", 1.0),
            g2_tilde=s.getfloat("gamma2_tilde", 1.0),
            g3_tilde=s.getfloat("gamma3_tilde", 0.0),
            d21=s.getfloat("gamma21_tilde", 0.01),
            d12=s.getfloat("gamma12_tilde", 0.01),
            d32=s.getfloat("gamma32_tilde", 0.0),
            d31=s.getfloat("gamma31_tilde", 0.0),
        )
        omega1 = s.getfloat("omega1", 1.0)
        omega2 = s.getfloat("omega2", 1.0)

        nsec = sec("noise")
        if nsec.get("theta") is not None and nsec.get("diffusion_d") is not None:
            raise ConfigError("give either theta or diffusion_d, not both")
        theta = nsec.getfloat("theta", nsec.getfloat("diffusion_d", 0.02))
        ratio = nsec.getfloat("lambda_ratio", 50.0)
        fastest = max(rates.g1_tilde, omega1, omega2)
        lambda_l = nsec.getfloat("lambda_l", ratio * fastest)
        noise_test_samples = nsec.getint("self_test_samples", 2_000_000)

        isec = sec("integration")
        # dt default is the stability bound of the full configuration
        probe_noise = NoiseParams(theta=theta, lambda_l=lambda_l, dt=1.0)
        probe = SystemConfig(rates=rates, omega1=omega1, omega2=omega2,
                             delta=s.getfloat("delta", 0.0),
                             delta1=s.getfloat("delta1", 0.0),
                             kappa1_l=s.getfloat("kappa1_l", 0.1),
                             kappa2_l=s.getfloat("kappa2_l", 0.1),
                             noise=probe_noise,
                             swap_output_channels=s.getboolean(
                                 "swap_output_channels", False))
        dt = isec.getfloat("dt", dt_max(probe))
        system = SystemConfig(rates=probe.rates, omega1=probe.omega1,
                              omega2=probe.omega2, delta=probe.delta,
                              delta1=probe.delta1, kappa1_l=probe.kappa1_l,
                              kappa2_l=probe.kappa2_l,
                              noise=NoiseParams(theta=theta, lambda_l=lambda_l,
                                                dt=dt),
                              swap_output_channels=probe.swap_output_channels)
        if dt > dt_max(system) * (1.0 + 1e-12):
            raise ConfigError(
                f"dt={dt} violates the step-size rule dt <= {dt_max(system):.3g}")

        eff = effective_rates(rates)
        span_default = 1e4 / eff.gamma1 if eff.gamma1 > 0 else 1e4
        t_end = isec.getfloat("t_end")
        t_transient = isec.getfloat("t_transient")
        if t_end is None:
            slowest = min(eff.gamma3, eff.gamma1)
            tr_raw = 20.0 / slowest if slowest > 0.0 else math.inf
            t_end = min(tr_raw, span_default) + span_default
        if t_transient is None:
            t_transient = default_transient(system, t_end)
        if t_end <= t_transient:
            raise ConfigError(
                f"t_end={t_end} must exceed t_transient={t_transient}")
        dt_record = isec.getfloat("dt_record", 50.0 * dt)

        esec = sec("ensemble")
        n_trajectories = esec.getint("n_trajectories", 1)
        if n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1")
        master_seed = esec.getint("master_seed", 0)

        swsec = sec("sweep")
        sweep = SweepSpec(axis1=_axis_from_section(swsec, "axis1"),
                          axis2=_axis_from_section(swsec, "axis2"),
                          alpha_gauss=swsec.getfloat("alpha_gauss", 1.0))

        csec = sec("collapse")
        if csec.get("gamma3_values") is not None:
            g3_values = tuple(float(v) for v in csec["gamma3_values"].split(","))
        else:
            g3_values = (0.01, 0.05, 0.11)
        if csec.get("x_values") is not None:
            x_grid = tuple(float(v) for v in csec["x_values"].split(","))
        elif csec.get("x_min") is not None:
            x_grid = tuple(np.linspace(csec.getfloat("x_min"),
                                       csec.getfloat("x_max"),
                                       csec.getint("x_steps")))
        else:
            x_grid = DEFAULT_MASTER_GRID
        collapse = CollapseSpec(gamma3_values=g3_values, x_grid=x_grid)

        zsec = sec("zeeman")
        zeeman = ZeemanParams(
            g_factor=zsec.getfloat("g_factor", 0.5),
            delta_m=zsec.getint("delta_m", 2),
            mu_b_over_hbar=zsec.getfloat("mu_b_mhz_per_gauss", 1.4))

        out_dir = sec("io").get("out_dir", "runs")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return RunConfig(system=system, dt=dt, t_end=t_end,
                     t_transient=t_transient, dt_record=dt_record,
                     n_trajectories=n_trajectories, master_seed=master_seed,
                     sweep=sweep, collapse=collapse, zeeman=zeeman,
                     out_dir=out_dir, noise_test_samples=noise_test_samples)


def _fmt(x: float) -> str:
    return format(float(x), ".15g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _write_metadata(out_dir, run_cfg: RunConfig, subcommand: str, seed: int,
                    wall_time: float, extra: dict | None = None):
    meta = {
        "subcommand": subcommand,
        "seed": seed,
        "version": __version__,
        "wall_time_s": wall_time,
        "config": run_cfg.as_dict(),
    }
    if extra:
        meta.update(extra)
    with open(out_dir / "metadata.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_simulate(run_cfg: RunConfig, args, out_dir) -> int:
    traj = simulate_trajectory(run_cfg.system, run_cfg.t_end, dt=run_cfg.dt,
                               seed=args.seed, dt_record=run_cfg.dt_record,
                               t_transient=run_cfg.t_transient)
    rows = zip(traj.t, traj.rho_ba.real, traj.rho_ba.imag,
               traj.rho_ca.real, traj.rho_ca.imag,
               traj.rho_bc.real, traj.rho_bc.imag, traj.rho_bb, traj.rho_cc)
    _write_csv(out_dir / "trajectory.csv",
               ["t", "re_rho_ba", "im_rho_ba", "re_rho_ca", "im_rho_ca",
                "re_rho_bc", "im_rho_bc", "rho_bb", "rho_cc"], rows)
    print(f"wrote {out_dir / 'trajectory.csv'} ({len(traj)} samples)")
    return 0


def _cmd_correlate(run_cfg: RunConfig, args, out_dir) -> int:
    traj = simulate_trajectory(run_cfg.system, run_cfg.t_end, dt=run_cfg.dt,
                               seed=args.seed, dt_record=run_cfg.dt_record,
                               t_transient=run_cfg.t_transient)
    series = intensity_fluctuations(traj, run_cfg.system)
    curve = g2_curve(series, tau_grid(series, args.tau_max))
    _write_csv(out_dir / "correlation.csv", ["tau", "g2", "stderr"],
               zip(curve.taus, curve.g2, curve.stderr))
    i0 = int(np.argmin(np.abs(curve.taus)))
    print(f"wrote {out_dir / 'correlation.csv'}; g2(0) = {curve.g2[i0]:+.4f} "
          f"+- {curve.stderr[i0]:.4f}")
    return 0


def _cmd_sweep(run_cfg: RunConfig, args, out_dir) -> int:
    axis1 = run_cfg.sweep.axis1
    if args.b_min is not None or args.b_max is not None or args.b_steps is not None:
        if None in (args.b_min, args.b_max, args.b_steps):
            raise ConfigError("--b-min, --b-max and --b-steps must be given together")
        axis1 = AxisSpec("b_gauss", tuple(np.linspace(args.b_min, args.b_max,
                                                      args.b_steps)))
    if axis1 is None:
        raise ConfigError("sweep needs a [sweep] axis1 in the config or --b-* flags")
    table = g2_zero_sweep(run_cfg.system, axis1, run_cfg.sweep.axis2,
                          t_end=run_cfg.t_end, seed=args.seed,
                          threads=args.threads,
                          alpha_gauss=run_cfg.sweep.alpha_gauss)
    rows = []
    if table.axis2 is None:
        for i, v1 in enumerate(table.axis1.values):
            rows.append((v1, "", table.values[i], table.stderr[i]))
    else:
        for i, v1 in enumerate(table.axis1.values):
            for j, v2 in enumerate(table.axis2.values):
                rows.append((v1, v2, table.values[i, j], table.stderr[i, j]))
    _write_csv(out_dir / "sweep.csv", ["axis1", "axis2", "g2_zero", "stderr"], rows)
    extra = {"axis1": axis1.name,
             "axis2": None if table.axis2 is None else table.axis2.name,
             "point_configs": table.configs}
    print(f"wrote {out_dir / 'sweep.csv'} ({len(rows)} points)")
    if axis1.name == "b_gauss" and table.axis2 is None:
        _write_csv(out_dir / "measured.csv", ["b_gauss", "g2_zero", "stderr"],
                   ((v, table.values[i], table.stderr[i])
                    for i, v in enumerate(table.axis1.values)))
        print(f"wrote {out_dir / 'measured.csv'}")
    _write_metadata(out_dir, run_cfg, "sweep", args.seed, time.time() - args.t0,
                    extra)
    return 0


def _cmd_noise_test(run_cfg: RunConfig, args, out_dir) -> int:
    params = run_cfg.system.noise
    result = ou_self_test(args.seed, params, run_cfg.noise_test_samples)
    _write_csv(out_dir / "noise_autocorrelation.csv",
               ["lag", "empirical_autocorrelation", "model_autocorrelation"],
               zip(result["lags_t"], result["empirical"], result["model"]))
    verdict = "PASS" if result["passed"] else "FAIL"
    print(f"{verdict}: stationary variance {result['variance']:.5g} "
          f"(model {result['variance_expected']:.5g}, ok={result['variance_ok']}); "
          f"decay rate {result['rate']:.5g} "
          f"(model {result['rate_expected']:.5g}, ok={result['rate_ok']})")
    return 0 if result["passed"] else 3


def _load_curve_csv(path, x_name):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or x_name not in reader.fieldnames \
                or "g2_zero" not in reader.fieldnames:
            raise ConfigError(f"{path}: header must contain {x_name},g2_zero[,stderr]")
        xs, ys, errs = [], [], []
        for row in reader:
            xs.append(float(row[x_name]))
            ys.append(float(row["g2_zero"]))
            if row.get("stderr") not in (None, ""):
                errs.append(float(row["stderr"]))
    stderr = np.array(errs) if len(errs) == len(xs) else None
    return np.array(xs), np.array(ys), stderr


def _cmd_collapse(run_cfg: RunConfig, args, out_dir) -> int:
    curves = []
    rows = []
    for i, g3 in enumerate(run_cfg.collapse.gamma3_values):
        curve = build_master_curve(run_cfg.system, run_cfg.collapse.x_grid,
                                   gamma3=g3, t_end=run_cfg.t_end,
                                   seed=args.seed + i, threads=args.threads)
        curves.append(curve)
        rows.extend((g3, x, y, e) for x, y, e in
                    zip(curve.x, curve.y, curve.stderr))
        _write_csv(out_dir / f"master_gamma3_{g3:g}.csv",
                   ["x", "g2_zero", "stderr"],
                   zip(curve.x, curve.y, curve.stderr))
    _write_csv(out_dir / "master_curves.csv",
               ["gamma3", "x", "g2_zero", "stderr"], rows)
    residual = None
    if len(curves) >= 2:
        residual = collapse_residual(curves)
        print(f"collapse residual (RMS pairwise deviation): {residual:.4f} "
              f"over gamma3 = {list(run_cfg.collapse.gamma3_values)}")
    else:
        print(f"one master curve built (gamma3 = {run_cfg.collapse.gamma3_values[0]:g}); "
              "no collapse residual")
    _write_metadata(out_dir, run_cfg, "collapse", args.seed,
                    time.time() - args.t0, {"collapse_residual": residual})
    return 0


def _cmd_fit_alpha(run_cfg: RunConfig, args, out_dir) -> int:
    if args.measured is None:
        raise ConfigError("fit-alpha requires --measured <csv>")
    b, y, err = _load_curve_csv(args.measured, "b_gauss")
    if args.master is not None:
        mx, my, merr = _load_curve_csv(args.master, "x")
        if merr is None:
            merr = np.zeros_like(mx)
        master = MasterCurve(x=mx, y=my, stderr=merr, provenance={"path": args.master})
    else:
        master = build_master_curve(run_cfg.system, run_cfg.collapse.x_grid,
                                    t_end=run_cfg.t_end, seed=args.seed,
                                    threads=args.threads)
    fit = fit_alpha(b, y, master, run_cfg.zeeman, stderr=err)
    _write_csv(out_dir / "fit.csv",
               ["alpha_gauss", "alpha_stderr", "gamma3_mhz", "residual"],
               [(fit.alpha, fit.alpha_stderr, fit.gamma3_physical, fit.residual)])
    print(f"scaling factor alpha = {fit.alpha:.4g} +- {fit.alpha_stderr:.2g} G")
    print(f"decoherence rate gamma3 = alpha * a = {fit.gamma3_physical:.4g} MHz")
    print(f"RMS misfit: {fit.residual:.4g}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "correlate": _cmd_correlate,
    "sweep": _cmd_sweep,
    "noise-test": _cmd_noise_test,
    "collapse": _cmd_collapse,
    "fit-alpha": _cmd_fit_alpha,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eitcorr",
        description="Two-beam intensity correlations of a driven lambda medium "
                    "under laser phase noise")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured master seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads for sweeps (default: executor choice)")
        if name == "correlate":
            p.add_argument("--tau-max", type=float, default=10.0,
                           help="correlation delay half-range")
        if name == "sweep":
            p.add_argument("--b-min", type=float, default=None)
            p.add_argument("--b-max", type=float, default=None)
            p.add_argument("--b-steps", type=int, default=None)
        if name == "fit-alpha":
            p.add_argument("--measured", default=None,
                           help="CSV b_gauss,g2_zero[,stderr]")
            p.add_argument("--master", default=None,
                           help="CSV x,g2_zero[,stderr]; built from config if absent")
    return parser


def main(argv=None) -> int:
    from pathlib import Path

    args = build_parser().parse_args(argv)
    args.t0 = time.time()
    try:
        run_cfg = parse_config(args.config)
        if args.seed is None:
            args.seed = run_cfg.master_seed
        out_dir = Path(args.out if args.out is not None else run_cfg.out_dir)
        # validation passed; only now touch the filesystem
        out_dir.mkdir(parents=True, exist_ok=True)
        code = _COMMANDS[args.command](run_cfg, args, out_dir)
        if args.command not in ("sweep", "collapse"):
            _write_metadata(out_dir, run_cfg, args.command, args.seed,
                            time.time() - args.t0)
        return code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
