"""Data reduction: Lorentzian fits of noise power spectra, mode temperatures
from spectral areas, particle positioning from detection periodicities and
damping-versus-position fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize, signal
from scipy.ndimage import uniform_filter1d

from .dynamics import SpectrumResult
from .errors import (AmbiguousPhaseError, InsufficientDataError, MultiplePeaksError,
                     NoConvergenceError)
from .oracle import spectrum_summary


@dataclass(frozen=True)
class LorentzianFit:
    center: float  # Hz
    fwhm: float  # Hz
    area: float  # m^2
    offset: float  # m^2/Hz
    residual_norm: float  # ||residual|| / ||data||, weighted

    def __call__(self, f):
        return lorentzian(np.asarray(f, float), self.center, self.fwhm, self.area, self.offset)


def lorentzian(f, center, fwhm, area, offset=0.0):
    """offset + area * (fwhm / 2pi) / ((f - center)^2 + (fwhm/2)^2)."""
    h = fwhm / 2
    return offset + area * h / math.pi / ((f - center) ** 2 + h * h)


def _jacobian(f, c, w, a, weights):
    h = w / 2
    d = (f - c) ** 2 + h * h
    base = h / math.pi / d
    jc = a * base * 2 * (f - c) / d
    jw = a / (2 * math.pi) * ((f - c) ** 2 - h * h) / d**2
    ja = base
    jo = np.ones_like(f)
    return np.column_stack([jc, jw, ja, jo]) * weights[:, None]


def _check_single_peak(f, y):
    n_smooth = max(1, len(y) // 64)
    smooth = uniform_filter1d(y, n_smooth) if n_smooth > 1 else y
    floor = max(float(np.min(smooth)), 0.0)
    scatter = 1.4826 * float(np.median(np.abs(y / np.where(smooth > 0, smooth, 1) - 1)))
    threshold = 3 * max(floor, scatter * float(np.max(smooth)) / math.sqrt(n_smooth))
    peaks, _ = signal.find_peaks(np.concatenate([[0.0], smooth, [0.0]]), prominence=threshold)
    if len(peaks) > 1:
        where = ", ".join(f"{f[p - 1]:.6g}" for p in peaks)
        raise MultiplePeaksError(f"multiple peaks in fit window (Hz: {where})")


def fit_lorentzian(spectrum: SpectrumResult, window=None, max_iter: int = 200) -> LorentzianFit:
    """Least-squares offset + Lorentzian fit to a PSD inside ``window`` (Hz).

    Two Levenberg-Marquardt passes with the analytic Jacobian: the first
    unweighted, the second with weights 1/model from the first pass so that
    every bin carries similar relative uncertainty.  The default window is
    the highest peak +- 2 estimated FWHM.
    """
    freqs = np.asarray(spectrum.freqs, float)
    data = np.asarray(spectrum.psd, float)
    keep = freqs > 0
    freqs, data = freqs[keep], data[keep]
    if window is None:
        fp, fw = spectrum_summary(freqs, data)
        fw = max(fw, 2 * (freqs[1] - freqs[0]))
        window = (fp - 2 * fw, fp + 2 * fw)
    sel = (freqs >= window[0]) & (freqs <= window[1])
    f, y = freqs[sel], data[sel]
    if len(f) < 5:
        raise InsufficientDataError("insufficient data: fewer than 5 bins in the fit window")
    _check_single_peak(f, y)

    scale = float(np.max(y))
    yn = y / scale
    i = int(np.argmax(yn))
    fp, fw = spectrum_summary(f, yn) if 0 < i < len(f) - 1 else (f[i], (f[-1] - f[0]) / 4)
    fw = max(fw, f[1] - f[0])
    p0 = np.array([fp, fw, (yn[i] - yn.min()) * math.pi * fw / 2, max(yn.min(), 0.0)])
    lower = np.array([f[0], 0.0, 0.0, -np.inf])

    weights = np.ones_like(f)
    for _ in range(2):
        w = weights
        res = optimize.least_squares(
            lambda p: (lorentzian(f, *p) - yn) * w,
            p0, jac=lambda p: _jacobian(f, *p[:3], w), method="lm",
            xtol=1e-10, ftol=1e-12, gtol=1e-12, max_nfev=max_iter, x_scale=np.abs(p0) + 1e-30,
        )
        if res.status == 0:
            raise NoConvergenceError(f"no convergence after {max_iter} iterations")
        p0 = res.x
        weights = 1.0 / np.maximum(lorentzian(f, *p0), 1e-12)
    c, wd, a, off = p0
    if wd <= 0 or a <= 0 or not (lower[0] <= c):
        raise NoConvergenceError("no convergence: fit left the physical parameter range")
    resid = float(np.linalg.norm(res.fun) / np.linalg.norm(yn * weights))
    return LorentzianFit(float(c), float(abs(wd)), float(a * scale), float(off * scale), resid)


def temperature_from_area(fit: LorentzianFit, reference: LorentzianFit, T0: float,
                          center_correction: bool = True) -> float:
    """Mode temperature from the fitted area relative to a reference at T0.

    With ``center_correction`` the areas are weighted by center^2, so a
    spring-shifted peak is compared in energy (m W^2 <x^2>) rather than in
    raw displacement variance.
    """
    ratio = fit.area / reference.area
    if center_correction:
        ratio *= (fit.center / reference.center) ** 2
    return T0 * ratio


@dataclass(frozen=True)
class DampingFit:
    gamma_min: float
    gamma_max: float
    max_relative_residual: float  # max |residual| / gamma, pointwise
    kind: str
    max_span_residual: float = 0.0  # max |residual| / (gamma_max - gamma_min)


def fit_damping_model(x0, gamma, wavelength: float, kind: str = "sin2") -> DampingFit:
    """Linear fit of gamma_min + (gamma_max - gamma_min) sin^2(kx0) (or cos^2)."""
    if kind not in ("sin2", "cos2"):
        raise ValueError("kind must be 'sin2' or 'cos2'")
    k = 2 * math.pi / wavelength
    x0, gamma = np.asarray(x0, float), np.asarray(gamma, float)
    shape = np.sin(k * x0) ** 2 if kind == "sin2" else np.cos(k * x0) ** 2
    A = np.column_stack([np.ones_like(shape), shape])
    (gmin, span), *_ = np.linalg.lstsq(A, gamma, rcond=None)
    err = np.abs(A @ [gmin, span] - gamma)
    return DampingFit(float(gmin), float(gmin + span), float(np.max(err / np.abs(gamma))), kind,
                      float(np.max(err) / abs(span)) if span else math.inf)


@dataclass(frozen=True)
class PositionEstimate:
    x0: np.ndarray  # estimated position of each stage step, m (from an antinode)
    offset: float  # x0 - stage reading, in [-lambda/4, lambda/4)
    scatter_offset: float
    lock_offset: float
    rms_residual: float


def _harmonic_phase(s, y, q):
    """Fit y = c0 + c1 cos(q s) + c2 sin(q s); return (c0, c1, c2)."""
    A = np.column_stack([np.ones_like(s), np.cos(q * s), np.sin(q * s)])
    return np.linalg.lstsq(A, y, rcond=None)[0]


def _wrap(x, period):
    return (x + period / 2) % period - period / 2


def locate_particle(stage_positions, scatter_powers, lock_couplings, wavelength: float,
                    tolerance: float | None = None) -> PositionEstimate:
    """Reconstruct the cavity-axis position from two detection channels.

    Scattered power follows cos^2(kx0) and the dispersive lock coupling
    sin^2(2kx0), with x0 = stage reading + unknown offset.  Each channel is
    first fitted linearly for its phase; the lock channel alone cannot
    distinguish node from antinode, the scatter channel can.  A joint
    nonlinear fit then refines the offset.
    """
    s = np.asarray(stage_positions, float)
    p = np.asarray(scatter_powers, float)
    g = np.asarray(lock_couplings, float)
    if not (len(s) == len(p) == len(g)) or len(s) < 6:
        raise InsufficientDataError("insufficient data: need >= 6 matching samples")
    if np.ptp(s) < wavelength / 4:
        raise InsufficientDataError("insufficient data: sweep must cover half a period (lambda/4)")
    k = 2 * math.pi / wavelength
    tolerance = wavelength / 40 if tolerance is None else tolerance

    _, c1, c2 = _harmonic_phase(s, p, 2 * k)
    x_scatter = math.atan2(-c2, c1) / (2 * k)  # mod lambda/2
    _, d1, d2 = _harmonic_phase(s, g, 4 * k)
    x_lock = math.atan2(d2, -d1) / (4 * k)  # mod lambda/4
    mismatch = _wrap(x_scatter - x_lock, wavelength / 4)
    if abs(mismatch) > tolerance:
        raise AmbiguousPhaseError(
            f"ambiguous phase: channels disagree by {mismatch * 1e9:.1f} nm")

    pn = (p - p.mean()) / (np.ptp(p) or 1.0)
    gn = (g - g.mean()) / (np.ptp(g) or 1.0)

    def resid(theta):
        x, ap, bp, ag, bg = theta
        return np.concatenate([ap * np.cos(k * (s + x)) ** 2 + bp - pn,
                               ag * np.sin(2 * k * (s + x)) ** 2 + bg - gn])

    start = x_scatter - mismatch / 2
    sol = optimize.least_squares(resid, [start, 1.0, -0.5, 1.0, -0.5], method="lm", xtol=1e-12)
    x_off = float(_wrap(sol.x[0], wavelength / 2))
    if sol.x[1] < 0:  # a negative scatter amplitude would swap node and antinode
        raise AmbiguousPhaseError("ambiguous phase: scatter channel inverted in joint fit")
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    return PositionEstimate(s + x_off, x_off, float(_wrap(x_scatter, wavelength / 2)),
                            float(_wrap(x_lock, wavelength / 4)), rms)


def read_trace_csv(path, rtol: float = 1e-6):
    """Read a two-column (t_s, value) trace; returns (dt, values).

    The time column must be uniformly sampled to within ``rtol``.
    """
    data = np.loadtxt(Path(path), delimiter=",", comments="#", ndmin=2)
    if data.shape[1] < 2 or data.shape[0] < 16:
        raise InsufficientDataError("insufficient data: trace needs >= 16 rows of (t_s, value)")
    t = data[:, 0]
    steps = np.diff(t)
    dt = float(np.mean(steps))
    if dt <= 0 or np.max(np.abs(steps - dt)) > rtol * dt + 1e-15:
        raise ValueError("trace time column is not uniformly sampled")
    return dt, data[:, 1]


def read_psd_csv(path) -> SpectrumResult:
    """Read a two-column (f_Hz, psd_m2_per_Hz) spectrum."""
    data = np.loadtxt(Path(path), delimiter=",", comments="#", ndmin=2)
    if data.shape[1] < 2 or data.shape[0] < 5:
        raise InsufficientDataError("insufficient data: PSD needs >= 5 rows of (f_Hz, psd)")
    return SpectrumResult(data[:, 0], data[:, 1], math.nan, math.nan, math.nan)
