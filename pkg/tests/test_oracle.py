import math
import warnings

import numpy as np
import pytest
from scipy import constants as sc

from cohscat.analysis import fit_lorentzian
from cohscat.coupling import couplings_for
from cohscat.dynamics import REFERENCE_DETUNING, ModeCoupling1D, axis_spectrum, build_system
from cohscat.errors import InsufficientDataError, UnstableStepError, UnstableSystemError
from cohscat.oracle import (SimTrace, band_deviation, default_segment, integrate, stability_bound,
                            step_matrices, welch_psd)
from cohscat.params import TWO_PI, derive_constants, load_config

LAMBDA = 1064e-9
DELTA = TWO_PI * 400e3
DT = 20e-9


def cfg_at(pressure, **kw):
    values = {"pressure_mbar": pressure, "position_x0_m": LAMBDA / 4}
    values.update(kw)
    return load_config(None, values)


@pytest.fixture(scope="module")
def thermal_run():
    """Uncoupled thermal motion at 4 mbar, 1 s."""
    cfg = cfg_at(4.0)
    d = derive_constants(cfg)
    return cfg, d, integrate(cfg, d, None, DELTA, 1.0, DT, seed=11)


def short(seed, **kw):
    cfg = cfg_at(4.0)
    d = derive_constants(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return integrate(cfg, d, couplings_for(cfg, d), DELTA, 2e-3, DT, seed, **kw)


def test_determinism():
    a, b, c = short(5), short(5), short(6)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)
    assert np.all(np.isfinite(a.samples))
    assert len(a.samples) == round(a.duration / a.dt)


def test_short_duration_warns():
    cfg = cfg_at(4.0)
    d = derive_constants(cfg)
    with pytest.warns(UserWarning, match="decay times"):
        integrate(cfg, d, None, DELTA, 1e-3, DT, 1)


def test_unstable_step_is_rejected():
    cfg = cfg_at(4.0)
    d = derive_constants(cfg)
    with pytest.raises(UnstableStepError, match="unstable step"):
        integrate(cfg, d, couplings_for(cfg, d), DELTA, 1e-3, 1e-6, 1)


def test_operating_point_without_steady_state_is_rejected():
    cfg = cfg_at(4.0, position_x0_m=0.0)
    d = derive_constants(cfg)
    with pytest.raises(UnstableSystemError):
        integrate(cfg, d, couplings_for(cfg, d), DELTA, 1e-3, DT, 1, axes=("z",))


@pytest.mark.filterwarnings("ignore:duration covers")
def test_ringdown_at_half_the_damping_rate():
    cfg = cfg_at(4.0)
    d = derive_constants(cfg)
    trace = integrate(cfg, d, None, DELTA, 2e-3, DT, 1, thermal=False, burn_in=0.0,
                      initial={"x": (1e-9, 0.0)}, record_every=5)
    x = trace.axis("x")
    w = d.mech_freqs[0]
    t = trace.times
    # amplitude from position and velocity-like quadrature of the sampled signal
    amp = np.hypot(x, np.gradient(x, trace.dt) / w)
    sel = slice(10, -10)
    slope = np.polyfit(t[sel], np.log(amp[sel]), 1)[0]
    assert -slope == pytest.approx(d.gas_damping / 2, rel=0.01)


def test_sine_parseval():
    dt, a, f = 1e-6, 3e-9, 12.5e3
    t = dt * np.arange(1 << 16)
    trace = SimTrace(dt, (a * np.sin(TWO_PI * f * t))[:, None], ("x",), 0, t[-1], dt)
    spec = welch_psd(trace, 4e-3)
    assert spec.variance == pytest.approx(a**2 / 2, rel=0.01)
    assert spec.omega_eff / TWO_PI == pytest.approx(f, rel=0.01)


def test_white_noise_is_flat():
    rng = np.random.default_rng(2)
    dt, sigma = 1e-6, 2.0
    trace = SimTrace(dt, sigma * rng.standard_normal((1 << 18, 1)), ("x",), 0, 0.26, dt)
    spec = welch_psd(trace, 1e-3)
    level = 2 * sigma**2 * dt
    inner = spec.psd[1:-1]
    assert np.mean(inner) == pytest.approx(level, rel=0.01)
    # each bin averages about 2 x 512 independent segments (50 % overlap)
    assert np.std(inner / level) < 0.1
    assert np.polyfit(spec.freqs[1:-1], inner / level, 1)[0] * spec.freqs[-1] == pytest.approx(0, abs=0.02)


def test_insufficient_segments(thermal_run):
    _, _, trace = thermal_run
    with pytest.raises(InsufficientDataError, match="insufficient data"):
        welch_psd(trace, trace.duration / 4)


def test_thermal_trace_parseval_and_equipartition(thermal_run):
    cfg, d, trace = thermal_run
    spec = welch_psd(trace, 4e-3)
    x = trace.axis("x")
    assert spec.variance == pytest.approx(np.var(x), rel=0.01)
    expected = sc.k * d.temperature / (d.mass * d.mech_freqs[0] ** 2)
    assert np.var(x) == pytest.approx(expected, rel=0.02)


def test_equipartition_at_higher_pressure():
    cfg = cfg_at(10.0)
    d = derive_constants(cfg)
    trace = integrate(cfg, d, None, DELTA, 1.0, DT, seed=3)
    expected = sc.k * d.temperature / (d.mass * d.mech_freqs[0] ** 2)
    assert np.var(trace.axis("x")) == pytest.approx(expected, rel=0.02)


def test_thermal_fit_recovers_frequency_and_damping(thermal_run):
    _, d, trace = thermal_run
    fit = fit_lorentzian(welch_psd(trace, default_segment(trace.duration, d.gas_damping / TWO_PI)))
    assert fit.center == pytest.approx(d.mech_freqs[0] / TWO_PI, rel=0.005)
    assert fit.fwhm == pytest.approx(d.gas_damping / TWO_PI, rel=0.10)


def stationary_covariance(P, Q, doublings=60):
    """Sum of P^k Q P^kT by repeated squaring (Smith iteration)."""
    S, A = Q.copy(), P.copy()
    for _ in range(doublings):
        S = S + A @ S @ A.T
        A = A @ A
    return S


def test_step_halving_convergence():
    """Pole locations and stationary variance of the one-step map barely move when dt halves."""
    cfg = cfg_at(4.0)
    d = derive_constants(cfg)
    system = build_system(d, couplings_for(cfg, d), ("x",), DELTA)
    results = []
    for dt in (DT, DT / 2):
        P, N, _ = step_matrices(system, dt)
        poles = np.log(np.linalg.eigvals(P).astype(complex)) / dt
        mech = poles[np.argmin(np.abs(np.abs(poles.imag) - d.mech_freqs[0]))]
        cov = stationary_covariance(P, N @ N.T)
        results.append((abs(mech.imag), -2 * mech.real, cov[0, 0]))
    (w1, g1, v1), (w2, g2, v2) = results
    assert w1 == pytest.approx(w2, rel=0.01)
    assert g1 == pytest.approx(g2, rel=0.01)
    assert v1 == pytest.approx(v2, rel=0.01)


def test_stability_bound_scales_with_fastest_rate(derived):
    sys_ref = build_system(derived, None, ("x",), REFERENCE_DETUNING)
    assert stability_bound(sys_ref) == pytest.approx(1 / (20 * 4e6))


def test_trace_csv(tmp_path):
    trace = short(9, record_cavity=True)
    assert trace.cavity is not None and len(trace.cavity) == len(trace.samples)
    path = tmp_path / "t.csv"
    trace.to_csv(path)
    header = path.read_text().splitlines()[:2]
    assert "seed=9" in header[0]
    assert header[1] == "# t_s,x_m,y_m,z_m,re_a,im_a"
    data = np.loadtxt(path, delimiter=",")
    np.testing.assert_allclose(data[:, 1], trace.axis("x"), rtol=1e-15)
    assert np.all(np.isnan(data[:, 2]))


def test_strong_cooling_matches_closed_form():
    cfg = cfg_at(4.0)
    d = derive_constants(cfg)
    cs = couplings_for(cfg, d)
    trace = integrate(cfg, d, cs, DELTA, 1.0, DT, seed=21)
    analytic = axis_spectrum(cfg, "x", d)
    spec = welch_psd(trace, default_segment(1.0, analytic.gamma_eff / TWO_PI))
    system = build_system(d, cs, ("x",), DELTA)
    from cohscat.dynamics import psd
    w = d.mech_freqs[0] / TWO_PI
    dev = band_deviation(spec, lambda f: psd(system, f), w / 2, 2 * w)
    assert np.max(np.abs(dev)) < 0.10
    fit = fit_lorentzian(spec)
    assert fit.fwhm == pytest.approx(analytic.gamma_eff / TWO_PI, rel=0.10)
    # red detuning softens the mode in both descriptions
    assert fit.center < w and analytic.omega_eff / TWO_PI < w
    assert fit.center == pytest.approx(analytic.omega_eff / TWO_PI, rel=0.01)


@pytest.mark.slow
def test_reference_point_variance_ratio():
    """Cooled / far-detuned variance ratio at 0.06 mbar against the closed form."""
    cfg = cfg_at(0.06)
    d = derive_constants(cfg)
    cs = couplings_for(cfg, d)
    cooled = integrate(cfg, d, cs, DELTA, 2.0, DT, seed=1)
    ref = integrate(cfg, d, cs, REFERENCE_DETUNING, 2.0, 10e-9, seed=2)
    a_cool = axis_spectrum(cfg, "x", d)
    a_ref = axis_spectrum(cfg, "x", d, delta=REFERENCE_DETUNING)
    ratio = (np.var(cooled.axis("x")) * a_cool.omega_eff**2) / (np.var(ref.axis("x")) * a_ref.omega_eff**2)
    assert ratio == pytest.approx(a_cool.T_eff / a_ref.T_eff, rel=0.15)
