"""Time-domain stochastic integration of the linearized equations.

Independent check of the closed-form spectra in :mod:`cohscat.dynamics`.
The state is (q_j, v_j) per axis in zero-point units plus (Re a, Im a):

    dv_j = [-W_j^2 q_j - gamma v_j - 4 W_j Re(A_j^* a)] dt + sqrt(D_j) dW_j
    da   = [-(kappa/2 + i delta) a - i sum_j A_j q_j] dt + sqrt(kappa) dW_a

with D_j = 2 k_B T gamma / (m q_zpf_j^2).  One step is a Strang splitting
coupling(dt/2) . free(dt/2) . kick . free(dt/2) . coupling(dt/2), where the
free flow (damped oscillators, decaying rotating cavity) and the coupling
flow (linear in time at fixed positions) are both integrated exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy import constants as sc
from scipy import linalg, signal

from .dynamics import AXES, LinearSystem, SpectrumResult, build_system
from .errors import InsufficientDataError, UnstableStepError, UnstableSystemError
from .params import TWO_PI, DerivedConstants, ExperimentConfig


@dataclass
class SimTrace:
    dt: float  # sample interval, s
    samples: np.ndarray  # (n, n_axes) displacement in m
    axes: tuple
    seed: int
    duration: float
    step: float  # integration step, s
    mass: float = math.nan
    cavity: np.ndarray | None = None  # complex cavity amplitude per sample

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, len(self.samples) + 1)

    def axis(self, name: str) -> np.ndarray:
        return self.samples[:, self.axes.index(name)]

    def to_csv(self, path) -> None:
        """Write t, x, y, z, Re a, Im a (missing columns left empty-valued as nan)."""
        n = len(self.samples)
        cols = [self.times]
        for a in AXES:
            cols.append(self.axis(a) if a in self.axes else np.full(n, np.nan))
        cav = self.cavity if self.cavity is not None else np.full(n, np.nan + 0j)
        cols += [cav.real, cav.imag]
        header = (f"seed={self.seed} step_s={self.step!r} sample_dt_s={self.dt!r}\n"
                  "t_s,x_m,y_m,z_m,re_a,im_a")
        np.savetxt(Path(path), np.column_stack(cols), delimiter=",", header=header, comments="# ")


def stability_bound(system: LinearSystem) -> float:
    """Largest admissible step: 1 / (20 max(W, kappa, |delta|) / 2pi)."""
    fastest = max(float(np.max(system.omega)), system.kappa, abs(system.delta))
    return TWO_PI / (20.0 * fastest)


def _matrices(system: LinearSystem):
    n = len(system.axes)
    dim = 2 * n + 2
    ca = 2 * n  # index of Re a
    free = np.zeros((dim, dim))
    coup = np.zeros((dim, dim))
    for j in range(n):
        w = system.omega[j]
        free[2 * j, 2 * j + 1] = 1.0
        free[2 * j + 1, 2 * j] = -w * w
        free[2 * j + 1, 2 * j + 1] = -system.gamma
        ar, ai = system.coupling[j].real, system.coupling[j].imag
        coup[2 * j + 1, ca] = -4 * w * ar
        coup[2 * j + 1, ca + 1] = -4 * w * ai
        coup[ca, 2 * j] = ai
        coup[ca + 1, 2 * j] = -ar
    k2 = system.kappa / 2
    free[ca, ca] = free[ca + 1, ca + 1] = -k2
    free[ca, ca + 1] = system.delta
    free[ca + 1, ca] = -system.delta
    return free, coup


def step_matrices(system: LinearSystem, dt: float, cavity_noise: float = 0.0, thermal: bool = True):
    """One-step propagator P and noise map N: y <- P y + N xi, xi ~ N(0, 1)."""
    free, coup = _matrices(system)
    half_free = linalg.expm(free * dt / 2)
    half_coup = linalg.expm(coup * dt / 2)
    P = half_coup @ half_free @ half_free @ half_coup
    n = len(system.axes)
    dim = 2 * n + 2
    B = np.zeros((dim, n + 2))
    if thermal:
        for j in range(n):
            D = 2 * sc.k * system.temperature * system.gamma / (system.mass * system.zpf[j] ** 2)
            B[2 * j + 1, j] = math.sqrt(D * dt)
    if cavity_noise > 0:
        s = math.sqrt(system.kappa * cavity_noise * dt / 2)
        B[2 * n, n] = B[2 * n + 1, n + 1] = s
    N = half_coup @ half_free @ B
    return P, N, free + coup


@njit(cache=True)
def _advance(P, N, y, xi, every, phase, out, cav_out, rec0):
    dim = y.shape[0]
    nn = xi.shape[1]
    ndof = out.shape[1]
    ynew = np.empty(dim)
    rec = rec0
    for s in range(xi.shape[0]):
        for r in range(dim):
            acc = 0.0
            for c in range(dim):
                acc += P[r, c] * y[c]
            for c in range(nn):
                acc += N[r, c] * xi[s, c]
            ynew[r] = acc
        for r in range(dim):
            y[r] = ynew[r]
        phase += 1
        if phase == every:
            phase = 0
            if rec < out.shape[0]:
                for j in range(ndof):
                    out[rec, j] = y[2 * j]
                cav_out[rec] = y[2 * ndof] + 1j * y[2 * ndof + 1]
            rec += 1
    return phase, rec


def integrate(config: ExperimentConfig, derived: DerivedConstants, couplings, delta: float,
              duration: float, dt: float, seed: int, *, axes=("x",), record_every: int = 10,
              burn_in: float | None = None, thermal: bool = True, initial=None,
              cavity_noise: float = 0.0, record_cavity: bool = False,
              gamma: float | None = None, chunk_steps: int = 1 << 18) -> SimTrace:
    """Simulate the linearized particle + cavity dynamics.

    Parameters
    ----------
    couplings : CouplingSet, ModeCoupling1D or None
        Coupling rates; None integrates uncoupled thermal motion.
    duration, dt : float
        Recorded length and integration step (s).  Samples are stored every
        ``record_every`` steps, so ``SimTrace.dt = record_every * dt``.
    seed : int
        Keys the counter-based (Philox) noise generator; equal seeds give
        bit-identical traces.
    burn_in : float, optional
        Discarded settling time; defaults to ten times the slowest decay time.
    initial : dict, optional
        axis -> (position m, velocity m/s).  Without it the particle starts
        from a thermal draw at the bath temperature and the cavity empty.
    """
    system = build_system(derived, couplings, axes, delta, gamma=gamma)
    bound = stability_bound(system)
    if dt >= bound:
        raise UnstableStepError(f"unstable step: dt = {dt:.3g} s exceeds the bound {bound:.3g} s")
    P, N, drift = step_matrices(system, dt, cavity_noise, thermal)
    rates = np.linalg.eigvals(drift).real
    if rates.max() > 0:
        raise UnstableSystemError("unstable operating point: a linearized mode grows, no steady state")
    if np.max(np.abs(np.linalg.eigvals(P))) > 1 + 1e-12:
        raise UnstableStepError("unstable step: discrete propagator is expanding")

    slowest = -rates.max()
    if burn_in is None:
        burn_in = 0.0 if slowest == 0 else min(10.0 / slowest, duration)
    if slowest > 0 and duration * slowest < 100:
        warnings.warn(f"duration covers only {duration * slowest:.0f} decay times", stacklevel=2)

    n = len(axes)
    rng = np.random.Generator(np.random.Philox(seed))
    y = np.zeros(2 * n + 2)
    for j, a in enumerate(axes):
        zpf = system.zpf[j]
        if initial is not None:
            q, v = initial.get(a, (0.0, 0.0))
            y[2 * j], y[2 * j + 1] = q / zpf, v / zpf
        elif thermal:
            sigma_q = math.sqrt(sc.k * system.temperature / system.mass) / (system.omega[j] * zpf)
            y[2 * j] = sigma_q * rng.standard_normal()
            y[2 * j + 1] = sigma_q * system.omega[j] * rng.standard_normal()

    n_rec = int(round(duration / (dt * record_every)))
    burn_steps = int(math.ceil(burn_in / dt / record_every)) * record_every
    total = burn_steps + n_rec * record_every
    out = np.zeros((n_rec, n))
    cav = np.zeros(n_rec, complex)
    sink = np.zeros((0, n))
    sink_c = np.zeros(0, complex)
    chunk = max(record_every, (chunk_steps // record_every) * record_every)
    n_noise = N.shape[1]

    done, phase, rec = 0, 0, 0
    while done < total:
        m = min(chunk, total - done)
        xi = rng.standard_normal((m, n_noise))
        if done < burn_steps:
            m = min(m, burn_steps - done)
            phase, _ = _advance(P, N, y, xi[:m], record_every, 0, sink, sink_c, 0)
            phase = 0
        else:
            phase, rec = _advance(P, N, y, xi, record_every, phase, out, cav, rec)
        done += m
        if not np.all(np.isfinite(y)):
            raise UnstableStepError("unstable step: state diverged")

    return SimTrace(dt=dt * record_every, samples=out * system.zpf, axes=tuple(axes), seed=seed,
                    duration=n_rec * dt * record_every, step=dt, mass=system.mass,
                    cavity=cav if record_cavity else None)


def spectrum_summary(freqs, psd):
    """(f_peak, fwhm) in Hz from the highest PSD bin, interpolating half-maximum crossings."""
    i = int(np.argmax(psd))
    half = psd[i] / 2
    lo = i
    while lo > 0 and psd[lo] > half:
        lo -= 1
    hi = i
    while hi < len(psd) - 1 and psd[hi] > half:
        hi += 1
    f_lo = np.interp(half, [psd[lo], psd[lo + 1]], [freqs[lo], freqs[lo + 1]])
    f_hi = np.interp(half, [psd[hi], psd[hi - 1]], [freqs[hi], freqs[hi - 1]])
    return freqs[i], f_hi - f_lo


def welch_psd(trace: SimTrace, segment_length: float, overlap: float = 0.5,
              axis: str | None = None) -> SpectrumResult:
    """Hann-windowed averaged periodogram of one axis (one-sided, m^2/Hz).

    ``segment_length`` is in seconds and ``overlap`` a fraction of it.
    """
    axis = axis or trace.axes[0]
    x = trace.axis(axis)
    fs = 1.0 / trace.dt
    nperseg = int(round(segment_length * fs))
    if nperseg < 2 or nperseg > len(x):
        raise InsufficientDataError("insufficient data: segment longer than the trace")
    noverlap = int(round(overlap * nperseg))
    n_seg = 1 + (len(x) - nperseg) // (nperseg - noverlap)
    if n_seg < 8:
        raise InsufficientDataError(f"insufficient data: only {n_seg} segments (need 8)")
    freqs, pxx = signal.welch(x, fs=fs, window="hann", nperseg=nperseg, noverlap=noverlap,
                              detrend="constant", scaling="density")
    df = freqs[1] - freqs[0]
    variance = float(np.sum(pxx) * df)
    f_peak, fwhm = spectrum_summary(freqs[1:], pxx[1:])
    omega = TWO_PI * f_peak
    t_eff = trace.mass * omega**2 * variance / sc.k if math.isfinite(trace.mass) else math.nan
    return SpectrumResult(freqs, pxx, omega, TWO_PI * fwhm, t_eff, axis, variance)


def default_segment(duration: float, fwhm_hz: float) -> float:
    """Welch segment (s) resolving a line of width ``fwhm_hz`` by ~16 bins, capped at duration/8."""
    return min(16.0 / fwhm_hz, duration / 8)


def band_deviation(spectrum: SpectrumResult, analytic, f_lo: float, f_hi: float,
                   bins_per_band: int = 8) -> np.ndarray:
    """Relative deviation of a Welch PSD from ``analytic(freqs)`` in bands of adjacent bins.

    Both spectra are averaged over the same bins before comparison, which
    keeps the check pointwise on a grid ``bins_per_band`` bins wide while
    suppressing the per-bin chi-square scatter.
    """
    sel = (spectrum.freqs >= f_lo) & (spectrum.freqs <= f_hi)
    f = spectrum.freqs[sel]
    est = spectrum.psd[sel]
    ref = analytic(f)
    nb = len(f) // bins_per_band
    est = est[: nb * bins_per_band].reshape(nb, bins_per_band).mean(axis=1)
    ref = ref[: nb * bins_per_band].reshape(nb, bins_per_band).mean(axis=1)
    return est / ref - 1.0
