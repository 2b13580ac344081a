"""Command-line front end.

Subcommands: point, sweep, budget, oracle, fit, locate.  Exit status is 0 on
success, 1 on a runtime or physics error and 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (fit_lorentzian, locate_particle, read_psd_csv, read_trace_csv,
                       temperature_from_area)
from .budget import combined_temperature, noise_budget, quadratic_cooling
from .coupling import couplings_for, drive
from .dynamics import AXES, REFERENCE_DETUNING, SpectrumResult, axis_spectrum, build_system
from .errors import CohscatError, ConfigError
from .oracle import SimTrace, default_segment, integrate, stability_bound, welch_psd
from .params import (CONFIG_KEYS, TWO_PI, ExperimentConfig, derive_constants, dump_config,
                     load_config)

SWEEP_UNITS = {"x0": ("m", 1.0), "theta": ("deg", math.pi / 180),
               "delta": ("hz", TWO_PI), "pressure": ("mbar", 1.0)}

CSV_HELP = """\
CSV columns (all files start with a '#' comment line naming units):
  sweep.csv   <variable>_<unit>, P_over_P0, then per axis a:
              gamma_eff_<a>_hz, gamma_ref_<a>_hz  (FWHM/2pi, cooled and reference detuning),
              omega_eff_<a>_hz, T_lin_over_T0_<a>, T_comb_over_T0_<a>, T_ref_over_T0_<a>, error
              (T_lin/T_comb are relative to the reference run; T_ref is relative to the bath;
              T_comb adds the quadratic channel on the x axis)
  budget.csv  n_phase, gamma_recoil_rad_s, gamma_recoil_g_form_rad_s,
              gamma_recoil_intensity_form_rad_s, cooperativity_CQ, n_min_sideband,
              n_min_recoil, n_min_phase, n_min_total, ground_state_probability,
              phase_suppression_ratio, T_quad_over_T0, quadratic_regime
  point.csv   axis, omega_eff_hz, gamma_eff_hz, T_eff_k, T_eff_over_T0
  oracle.csv  quantity, analytic, oracle, deviation_percent
  locate.csv  step, stage_m, x0_m, x0_over_lambda
"""


# ----------------------------------------------------------------------------- helpers

def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    return repr(float(v))


def _write_csv(path: Path, header_note: str, rows: list[dict]) -> None:
    buf = io.StringIO()
    buf.write(f"# {header_note}\n")
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(rows[0].keys())
        for r in rows:
            w.writerow(_fmt(v) for v in r.values())
    path.write_text(buf.getvalue())


def _emit(args, name: str, note: str, rows: list[dict]) -> Path | None:
    """Write rows to <out>/<name> if --out is set, else print the CSV."""
    if args.out is None:
        tmp = io.StringIO()
        tmp.write(f"# {note}\n")
        if rows:
            w = csv.writer(tmp, lineterminator="\n")
            w.writerow(rows[0].keys())
            for r in rows:
                w.writerow(_fmt(v) for v in r.values())
        sys.stdout.write(tmp.getvalue())
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    _write_csv(path, note, rows)
    return path


def _plot_dir(args) -> Path:
    d = Path(args.out) if args.out else Path(".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            out[key] = float(value)
        except ValueError:
            raise ConfigError(f"value for {key!r} is not a number: {value!r}") from None
    return out


def _config(args) -> ExperimentConfig:
    return load_config(args.config, _parse_overrides(args.set))


def _hz(w: float) -> float:
    return w / TWO_PI


# ----------------------------------------------------------------------------- point

def run_point(config: ExperimentConfig) -> tuple[str, list[dict]]:
    """Full report at one operating point: (text, per-axis rows)."""
    d = derive_constants(config)
    cs = couplings_for(config, d)
    lines = ["# derived constants"]
    lines += [
        f"polarizability_C_m2_V = {d.polarizability:.6g}",
        f"mass_kg = {d.mass:.6g}",
        f"field_tweezer_V_m = {d.field_tw:.6g}",
        f"field_cavity_V_m = {d.field_cav:.6g}",
        f"rayleigh_range_m = {d.rayleigh_range:.6g}",
        f"k_zR = {d.wavenumber * d.rayleigh_range:.6g}",
        "mech_freq_hz = " + ", ".join(f"{_hz(w):.6g}" for w in d.mech_freqs),
        "mech_freq_from_potential_hz = " + ", ".join(f"{_hz(w):.6g}" for w in d.mech_freqs_from_potential),
        "zpf_m = " + ", ".join(f"{z:.6g}" for z in d.zpf),
        f"kappa_over_2pi_hz = {_hz(d.kappa):.6g}",
        f"fsr_hz = {d.fsr_hz:.6g}",
        f"gamma_gas_over_2pi_hz = {_hz(d.gas_damping):.6g}",
        "# couplings (all /2pi, Hz)",
        f"E_d = {_hz(cs.drive_Ed):.6g}",
        f"g_x = {_hz(cs.g_x):.6g}",
        f"g_y = {_hz(cs.g_y):.6g}",
        f"g_z = {_hz(cs.g_z):.6g}",
        f"g_z_tilt = {_hz(cs.g_z_tilt):.6g}",
        f"g_quad = {_hz(cs.g_quad):.6g}",
        f"n_phot = {cs.n_phot:.6g}",
        f"kappa_nano_per_s = {cs.kappa_nano:.6g}",
    ]
    if not cs.any_scattering:
        lines.append("note: no scattering (E_d = 0); all couplings vanish")
    rows = []
    lines.append("# spectra")
    for a in AXES:
        try:
            s = axis_spectrum(config, a, d)
            row = {"axis": a, "omega_eff_hz": _hz(s.omega_eff), "gamma_eff_hz": _hz(s.gamma_eff),
                   "T_eff_k": s.T_eff, "T_eff_over_T0": s.T_eff / d.temperature}
        except CohscatError as exc:
            row = {"axis": a, "omega_eff_hz": math.nan, "gamma_eff_hz": math.nan,
                   "T_eff_k": math.nan, "T_eff_over_T0": math.nan}
            lines.append(f"{a}: {exc}")
        rows.append(row)
        lines.append(f"{a}: Omega_eff/2pi = {row['omega_eff_hz']:.6g} Hz, "
                     f"gamma_eff/2pi = {row['gamma_eff_hz']:.6g} Hz, "
                     f"T_eff/T0 = {row['T_eff_over_T0']:.4g}")
    lines.append("# noise budget")
    lines += _budget_lines(noise_budget(config, d, cs))
    return "\n".join(lines) + "\n", rows


def _budget_lines(b) -> list[str]:
    out = [f"{k} = {v if isinstance(v, str) else f'{v:.6g}'}" for k, v in b.as_row().items()]
    out += [f"note: {n}" for n in b.notes]
    return out


def cmd_point(args) -> int:
    config = _config(args)
    text, rows = run_point(config)
    sys.stdout.write(text)
    if args.out:
        _emit(args, "point.csv", "per-axis spectrum summary; frequencies in Hz (rate/2pi), T in K", rows)
    return 0


# ----------------------------------------------------------------------------- sweep

@dataclass(frozen=True)
class SweepSpec:
    variable: str
    start: float  # in the variable's CLI unit (m, deg, Hz, mbar)
    stop: float
    steps: int
    axes: tuple = AXES
    reference_detuning: float = REFERENCE_DETUNING  # rad/s

    def __post_init__(self):
        if self.variable not in SWEEP_UNITS:
            raise ConfigError(f"sweep variable must be one of {sorted(SWEEP_UNITS)}")
        if self.steps < 2:
            raise ConfigError("sweep needs steps >= 2")
        if not all(a in AXES for a in self.axes) or not self.axes:
            raise ConfigError("axes must be a non-empty subset of x, y, z")
        if not (math.isfinite(self.start) and math.isfinite(self.stop)):
            raise ConfigError("sweep range must be finite")
        if self.variable == "pressure" and min(self.start, self.stop) <= 0:
            raise ConfigError("pressure range must be positive")

    @property
    def column(self) -> str:
        return f"{self.variable}_{SWEEP_UNITS[self.variable][0]}"

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.steps)


def _apply(config: ExperimentConfig, variable: str, value: float) -> ExperimentConfig:
    return config.evolve(**{variable: value * SWEEP_UNITS[variable][1]})


_AXIS_COLUMNS = ("gamma_eff_{}_hz", "gamma_ref_{}_hz", "omega_eff_{}_hz",
                 "T_lin_over_T0_{}", "T_comb_over_T0_{}", "T_ref_over_T0_{}")


def _sweep_point(task) -> dict:
    """One sweep row.  Cooling factors are normalized to the reference-detuning
    run; failures are recorded per axis so the other axes still report."""
    config, spec, value = task
    row = {spec.column: value, "P_over_P0": math.nan}
    for a in spec.axes:
        row.update({c.format(a): math.nan for c in _AXIS_COLUMNS})
    errors = []
    try:
        cfg = _apply(config, spec.variable, value)
        d = derive_constants(cfg)
        x0 = cfg.operating.position_x0
        theta = cfg.tweezer.polarization_theta
        row["P_over_P0"] = math.sin(theta) ** 2 * math.cos(d.wavenumber * x0) ** 2
        quad = quadratic_cooling(d, drive(d, theta), cfg.operating.detuning, 0.0, theta=theta)
    except (CohscatError, ValueError, ArithmeticError) as exc:
        row["error"] = _clean(str(exc))
        return row
    for a in spec.axes:
        try:
            ref = axis_spectrum(cfg, a, d, delta=spec.reference_detuning)
            row[f"gamma_ref_{a}_hz"] = _hz(ref.gamma_eff)
            row[f"T_ref_over_T0_{a}"] = ref.T_eff / d.temperature
            cooled = axis_spectrum(cfg, a, d)
            lin = cooled.T_eff / ref.T_eff
            comb = combined_temperature(lin, x0, quad.ratio, d.wavelength) if a == "x" else lin
            row.update({
                f"gamma_eff_{a}_hz": _hz(cooled.gamma_eff),
                f"omega_eff_{a}_hz": _hz(cooled.omega_eff),
                f"T_lin_over_T0_{a}": lin,
                f"T_comb_over_T0_{a}": comb,
            })
        except (CohscatError, ValueError, ArithmeticError) as exc:
            errors.append(f"{a}: {_clean(str(exc))}")
    row["error"] = "; ".join(errors)
    return row


def _clean(msg: str) -> str:
    return msg.replace(",", ";").replace("\n", " ")


def run_sweep(config: ExperimentConfig, spec: SweepSpec, workers: int = 1) -> list[dict]:
    """One row per sweep value, in sweep order regardless of worker count."""
    tasks = [(config, spec, float(v)) for v in spec.values()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]


def _plot_sweep(path: Path, spec: SweepSpec, rows: list[dict]) -> None:
    plt = _pyplot()
    xs = np.array([r[spec.column] for r in rows])
    fig, ax = plt.subplots(3, 1, sharex=True, figsize=(6, 8))
    ax[0].plot(xs, [r["P_over_P0"] for r in rows], "k.-")
    ax[0].set_ylabel("P/P0")
    for a, color in zip(spec.axes, ("tab:red", "tab:green", "tab:blue")):
        ax[1].plot(xs, [r[f"gamma_eff_{a}_hz"] for r in rows], ".-", color=color, label=f"{a} cooled")
        ax[1].plot(xs, [r[f"gamma_ref_{a}_hz"] for r in rows], ":", color=color, label=f"{a} reference")
        ax[2].plot(xs, [r[f"T_comb_over_T0_{a}"] for r in rows], ".-", color=color, label=a)
    ax[1].set_yscale("log")
    ax[1].set_ylabel("gamma_eff/2pi (Hz)")
    ax[1].legend(fontsize="small")
    ax[2].set_yscale("log")
    ax[2].set_ylabel("T_eff/T0")
    ax[2].set_xlabel(spec.column)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_sweep(args) -> int:
    config = _config(args)
    spec = SweepSpec(args.variable, args.start, args.stop, args.steps, tuple(args.axes),
                     TWO_PI * args.reference_detuning_hz)
    rows = run_sweep(config, spec, args.workers)
    note = (f"sweep of {spec.column}; gamma in Hz (FWHM/2pi); reference detuning "
            f"{args.reference_detuning_hz:g} Hz; cooling factors relative to the reference run")
    _emit(args, "sweep.csv", note, rows)
    if args.plot:
        _plot_sweep(_plot_dir(args) / "sweep.png", spec, rows)
    return 0


# ----------------------------------------------------------------------------- budget

def cmd_budget(args) -> int:
    config = _config(args)
    b = noise_budget(config)
    print("\n".join(_budget_lines(b)))
    if args.out:
        _emit(args, "budget.csv", "noise budget; rates in rad/s, occupations in phonons", [b.as_row()])
    return 0


# ----------------------------------------------------------------------------- oracle

def run_oracle(config: ExperimentConfig, duration: float, seed: int, dt: float = 20e-9,
               axis: str = "x", reference_detuning: float = REFERENCE_DETUNING):
    """Simulate the configured point and a far-detuned reference, fit both
    spectra and compare (Omega_eff, gamma_eff, T_eff/T0) with the closed form.

    The tweezer tilt couples all axes, so a tilted configuration is
    integrated in full 3D.  Returns (rows, cooled trace, cooled Welch spectrum,
    analytic spectrum).
    """
    d = derive_constants(config)
    cs = couplings_for(config, d)
    axes = AXES if config.tweezer.tilt_phi != 0.0 else (axis,)
    delta = config.operating.detuning

    analytic = axis_spectrum(config, axis, d)
    analytic_ref = axis_spectrum(config, axis, d, delta=reference_detuning)

    def simulate(det, spec, step, seed_):
        record = max(1, int(round(200e-9 / step)))
        trace = integrate(config, d, cs, det, duration, step, seed_, axes=axes, record_every=record)
        seg = default_segment(trace.duration, _hz(spec.gamma_eff))
        welch = welch_psd(trace, seg, axis=axis)
        return trace, welch, fit_lorentzian(welch)

    trace, welch, fit = simulate(delta, analytic, dt, seed)
    ref_system = build_system(d, cs, axes, reference_detuning)
    ref_dt = min(dt, 0.8 * stability_bound(ref_system))
    _, _, fit_ref = simulate(reference_detuning, analytic_ref, ref_dt, seed + 1)

    t_an = analytic.T_eff / analytic_ref.T_eff
    t_or = temperature_from_area(fit, fit_ref, 1.0)
    rows = []
    for name, a, o in (("omega_eff_hz", _hz(analytic.omega_eff), fit.center),
                       ("gamma_eff_hz", _hz(analytic.gamma_eff), fit.fwhm),
                       ("T_eff_over_T0", t_an, t_or)):
        rows.append({"quantity": name, "analytic": a, "oracle": o,
                     "deviation_percent": 100.0 * (o / a - 1.0)})
    return rows, trace, welch, analytic


def cmd_oracle(args) -> int:
    config = _config(args)
    rows, trace, welch, analytic = run_oracle(config, args.duration, args.seed, args.dt, args.axis)
    print(f"{'quantity':<16}{'analytic':>14}{'oracle':>14}{'dev %':>9}")
    for r in rows:
        print(f"{r['quantity']:<16}{r['analytic']:>14.6g}{r['oracle']:>14.6g}"
              f"{r['deviation_percent']:>9.2f}")
    note = (f"oracle vs closed form; axis {args.axis}; seed {args.seed}; duration {args.duration} s; "
            f"dt {args.dt} s; frequencies in Hz; T relative to the far-detuned reference")
    if args.out:
        _emit(args, "oracle.csv", note, rows)
        if args.dump_trace:
            trace.to_csv(Path(args.out) / "trace.csv")
    if args.plot:
        _plot_psd(_plot_dir(args) / "oracle_psd.png", welch, analytic, trace, args.axis)
    return 0


def _plot_psd(path, welch: SpectrumResult, analytic: SpectrumResult, trace: SimTrace, axis: str):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    f = welch.freqs[1:]
    ax.loglog(f, welch.psd[1:], lw=0.6, label="oracle (Welch)")
    ax.loglog(analytic.freqs, analytic.psd, "k", lw=1, label="closed form")
    ax.set_xlim(analytic.freqs[0], analytic.freqs[-1])
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel(f"S_{axis} (m^2/Hz)")
    ax.set_title(f"seed {trace.seed}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ----------------------------------------------------------------------------- fit

def cmd_fit(args) -> int:
    if args.kind == "psd":
        spectrum = read_psd_csv(args.input)
    else:
        dt, values = read_trace_csv(args.input)
        trace = SimTrace(dt, values[:, None], ("x",), seed=-1, duration=dt * len(values), step=dt)
        seg = args.segment if args.segment else trace.duration / 16
        spectrum = welch_psd(trace, seg)
    fit = fit_lorentzian(spectrum, tuple(args.window) if args.window else None)
    report = {"center_hz": fit.center, "fwhm_hz": fit.fwhm, "area_m2": fit.area,
              "offset_m2_per_hz": fit.offset, "residual_norm": fit.residual_norm}
    text = "".join(f"{k} = {v:.8g}\n" for k, v in report.items())
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "fit.txt").write_text(text)
    if args.plot:
        plt = _pyplot()
        fig, ax = plt.subplots(figsize=(6, 4))
        lo = fit.center - 5 * fit.fwhm
        hi = fit.center + 5 * fit.fwhm
        sel = (spectrum.freqs >= lo) & (spectrum.freqs <= hi)
        ax.semilogy(spectrum.freqs[sel], spectrum.psd[sel], ".", ms=2, label="data")
        ax.semilogy(spectrum.freqs[sel], fit(spectrum.freqs[sel]), "k", label="Lorentzian fit")
        ax.set_xlabel("frequency (Hz)")
        ax.set_ylabel("PSD (m^2/Hz)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(_plot_dir(args) / "fit.png", dpi=120)
        plt.close(fig)
    return 0


# ----------------------------------------------------------------------------- locate

def cmd_locate(args) -> int:
    config = _config(args)
    data = np.loadtxt(args.input, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] < 3:
        raise ConfigError("locate input needs columns stage_m, scatter_power, lock_coupling")
    lam = config.tweezer.wavelength
    est = locate_particle(data[:, 0], data[:, 1], data[:, 2], lam)
    print(f"offset_m = {est.offset:.6g}")
    print(f"scatter_channel_offset_m = {est.scatter_offset:.6g}")
    print(f"lock_channel_offset_m = {est.lock_offset:.6g}")
    print(f"rms_residual = {est.rms_residual:.4g}")
    rows = [{"step": float(i), "stage_m": s, "x0_m": x, "x0_over_lambda": x / lam}
            for i, (s, x) in enumerate(zip(data[:, 0], est.x0))]
    if args.out:
        _emit(args, "locate.csv", "particle position per stage step; x0 measured from an antinode (m)", rows)
    if args.plot:
        plt = _pyplot()
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(est.x0 / lam, data[:, 1] / np.max(data[:, 1]), "r.", label="scattered power")
        ax.plot(est.x0 / lam, data[:, 2] / np.max(data[:, 2]), "b.", label="lock coupling")
        ax.set_xlabel("x0 / lambda")
        ax.legend()
        fig.tight_layout()
        fig.savefig(_plot_dir(args) / "locate.png", dpi=120)
        plt.close(fig)
    return 0


# ----------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="config file (default: bundled reference parameters)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--out", metavar="DIR", help="directory for CSV and plot files")
    common.add_argument("--seed", type=int, default=1, help="noise seed for oracle runs")
    common.add_argument("--plot", action="store_true", help="also write a PNG figure")
    common.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")

    p = argparse.ArgumentParser(prog="cohscat", description=__doc__, epilog=CSV_HELP,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("point", parents=[common], help="full report at the configured operating point")
    sp.set_defaults(func=cmd_point)

    sp = sub.add_parser("sweep", parents=[common], help="sweep x0, theta, delta or pressure",
                        epilog="units: x0 in m, theta in deg, delta in Hz, pressure in mbar")
    sp.add_argument("--variable", required=True, choices=sorted(SWEEP_UNITS))
    sp.add_argument("--start", type=float, required=True)
    sp.add_argument("--stop", type=float, required=True)
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--axes", default="xyz", type=lambda s: tuple(s), help="subset of xyz")
    sp.add_argument("--reference-detuning-hz", type=float, default=_hz(REFERENCE_DETUNING))
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("budget", parents=[common], help="closed-form noise budget")
    sp.set_defaults(func=cmd_budget)

    sp = sub.add_parser("oracle", parents=[common], help="stochastic simulation vs closed form")
    sp.add_argument("--duration", type=float, default=2.0, help="trace length (s)")
    sp.add_argument("--dt", type=float, default=20e-9, help="integration step (s)")
    sp.add_argument("--axis", choices=AXES, default="x")
    sp.add_argument("--dump-trace", action="store_true", help="write trace.csv to --out")
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("fit", parents=[common], help="Lorentzian fit of a trace or PSD CSV")
    sp.add_argument("--input", required=True, help="CSV: (t_s, value) or (f_hz, psd)")
    sp.add_argument("--kind", choices=("trace", "psd"), default="trace")
    sp.add_argument("--segment", type=float, help="Welch segment length (s)")
    sp.add_argument("--window", type=float, nargs=2, metavar=("LO_HZ", "HI_HZ"))
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("locate", parents=[common], help="particle position from a stage sweep")
    sp.add_argument("--input", required=True, help="CSV: stage_m, scatter_power, lock_coupling")
    sp.set_defaults(func=cmd_locate)

    sp = sub.add_parser("dump-config", parents=[common], help="print the effective config")
    sp.set_defaults(func=lambda a: sys.stdout.write(dump_config(_config(a))) and 0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except CohscatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
