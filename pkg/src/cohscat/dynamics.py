"""Linearized Langevin dynamics solved in the frequency domain.

The particle coordinates q_j couple to the cavity fluctuation a through

    H/hbar = delta a^+ a + sum_j (q_j / q_zpf_j) (A_j a^+ + A_j^* a)

with A_x = -g_x, A_y = -g_y (amplitude quadrature) and A_z = i g_z (phase
quadrature; a tweezer tilt adds a real part).  Eliminating the cavity field
gives the mechanical response matrix

    M_jk(w) = m (W_j^2 - w^2 - i gamma w) delta_jk
              + hbar/(q_zpf_j q_zpf_k) i [A_j A_k^*/(kappa/2 - i(delta + w))
                                          - A_j^* A_k/(kappa/2 + i(delta - w))]

and the one-sided displacement PSD S_j(f) = 4 k_B T m gamma sum_k |M^-1_jk|^2
for a classical white thermal force on every axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants as sc
from scipy import integrate, optimize

from .coupling import CouplingSet, coupling_rates, couplings_for
from .errors import UnresolvedPeakError, UnstableSystemError
from .params import TWO_PI, DerivedConstants, ExperimentConfig, derive_constants

AXES = ("x", "y", "z")
REFERENCE_DETUNING = TWO_PI * 4e6


@dataclass(frozen=True)
class ModeCoupling1D:
    axis: str
    g: float
    quadrature: str

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown axis {self.axis!r}")
        if (self.quadrature == "phase") != (self.axis == "z"):
            raise ValueError("z couples to the phase quadrature, x and y to the amplitude quadrature")

    @classmethod
    def from_couplings(cls, cs: CouplingSet, axis: str) -> "ModeCoupling1D":
        idx = AXES.index(axis)
        return cls(axis, cs.signed[idx], "phase" if axis == "z" else "amplitude")

    @property
    def amplitude(self) -> complex:
        return complex(0.0, self.g) if self.quadrature == "phase" else complex(-self.g)


@dataclass(frozen=True)
class LinearSystem:
    """Particle degrees of freedom coupled to one cavity mode."""

    axes: tuple
    omega: np.ndarray  # rad/s per axis
    zpf: np.ndarray  # m per axis
    coupling: np.ndarray  # complex A_j, rad/s
    gamma: float
    mass: float
    temperature: float
    kappa: float
    delta: float

    @property
    def force_psd(self) -> float:
        """One-sided thermal force PSD 4 k_B T m gamma (N^2/Hz)."""
        return 4.0 * sc.k * self.temperature * self.mass * self.gamma


@dataclass
class SpectrumResult:
    freqs: np.ndarray  # Hz
    psd: np.ndarray  # m^2/Hz, one-sided
    omega_eff: float  # rad/s
    gamma_eff: float  # rad/s, FWHM of the PSD peak
    T_eff: float  # K
    axis: str = "x"
    variance: float = math.nan  # m^2, integral of the PSD


def build_system(derived: DerivedConstants, couplings, axes=("x",), delta: float = 0.0,
                 gamma: float | None = None) -> LinearSystem:
    """Assemble a :class:`LinearSystem` for the requested axes.

    ``couplings`` is a :class:`CouplingSet` (tilt cross term included), a
    single :class:`ModeCoupling1D`, or None for uncoupled motion.
    """
    axes = tuple(axes)
    idx = [AXES.index(a) for a in axes]
    if couplings is None:
        amps = np.zeros(len(axes), complex)
    elif isinstance(couplings, ModeCoupling1D):
        if axes != (couplings.axis,):
            raise ValueError("a ModeCoupling1D describes exactly its own axis")
        amps = np.array([couplings.amplitude])
    else:
        quad = couplings.quadrature_couplings()
        amps = np.array([quad[a] for a in axes])
    return LinearSystem(
        axes=axes,
        omega=np.array([derived.mech_freqs[i] for i in idx]),
        zpf=np.array([derived.zpf[i] for i in idx]),
        coupling=amps,
        gamma=derived.gas_damping if gamma is None else gamma,
        mass=derived.mass,
        temperature=derived.temperature,
        kappa=derived.kappa,
        delta=delta,
    )


def response_matrix(system: LinearSystem, omega) -> np.ndarray:
    """M(w) of shape (len(w), n, n) in N/m."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))[:, None, None]
    A = system.coupling
    k2 = system.kappa / 2
    scale = sc.hbar / np.outer(system.zpf, system.zpf)
    cross = np.outer(A, A.conj())  # A_j A_k^*
    back = 1j * scale * (cross / (k2 - 1j * (system.delta + w))
                         - cross.conj() / (k2 + 1j * (system.delta - w)))
    diag = system.mass * (system.omega**2 - w**2 - 1j * system.gamma * w)
    eye = np.eye(len(system.axes))
    return back + diag * eye


def drift_matrix(system: LinearSystem) -> np.ndarray:
    """Real drift matrix of (q_j/q_zpf, its time derivative, Re a, Im a) without noise."""
    n = len(system.axes)
    ca = 2 * n
    A = np.zeros((ca + 2, ca + 2))
    for j, (w, amp) in enumerate(zip(system.omega, system.coupling)):
        A[2 * j, 2 * j + 1] = 1.0
        A[2 * j + 1, 2 * j] = -w * w
        A[2 * j + 1, 2 * j + 1] = -system.gamma
        A[2 * j + 1, ca:] = -4 * w * amp.real, -4 * w * amp.imag
        A[ca, 2 * j], A[ca + 1, 2 * j] = amp.imag, -amp.real
    A[ca, ca] = A[ca + 1, ca + 1] = -system.kappa / 2
    A[ca, ca + 1], A[ca + 1, ca] = system.delta, -system.delta
    return A


def check_stable(system: LinearSystem) -> None:
    """Raise :class:`UnstableSystemError` if any linearized mode grows."""
    ev = np.linalg.eigvals(drift_matrix(system))
    worst = ev[np.argmax(ev.real)]
    if worst.real > 0:
        kind = "optical spring exceeds the trap stiffness" if abs(worst.imag) < 1e-9 * abs(worst.real) \
            else "optical anti-damping exceeds the mechanical damping"
        raise UnstableSystemError(f"unstable operating point: {kind} (growth rate {worst.real:.3g} s^-1)")


def psd(system: LinearSystem, freqs, axis: str | None = None) -> np.ndarray:
    """One-sided displacement PSD (m^2/Hz) of ``axis`` at ordinary frequencies ``freqs``."""
    j = system.axes.index(axis or system.axes[0])
    f = np.asarray(freqs, dtype=float)
    chi = np.linalg.inv(response_matrix(system, TWO_PI * f.ravel()))
    out = system.force_psd * np.sum(np.abs(chi[:, j, :]) ** 2, axis=-1)
    return out.reshape(f.shape)


def self_energy(g: float, delta: float, kappa: float, omega_m: float, omega) -> complex:
    """Back-action term Sigma(w) added to W^2 for a single mode (rad^2/s^2)."""
    k2 = kappa / 2
    return 2j * omega_m * g**2 * (1 / (k2 - 1j * (delta + omega)) - 1 / (k2 + 1j * (delta - omega)))


def optical_damping(g: float, delta: float, kappa: float, omega_m: float) -> float:
    """Sideband-asymmetry damping g^2 kappa [1/((k/2)^2+(d-W)^2) - 1/((k/2)^2+(d+W)^2)]."""
    k2sq = (kappa / 2) ** 2
    return g**2 * kappa * (1 / (k2sq + (delta - omega_m) ** 2) - 1 / (k2sq + (delta + omega_m) ** 2))


def optical_spring(coupling, delta: float, kappa: float, omega: float,
                   self_consistent: bool = True) -> float:
    """Back-action frequency shift (rad/s) of a single mode.

    With ``self_consistent`` the shift is taken from the real part of the
    complex pole of the susceptibility, W^2 - w^2 + Sigma(w) = 0; otherwise the
    first-order value Re Sigma(W) / 2W is returned.
    """
    g = coupling.g if isinstance(coupling, ModeCoupling1D) else float(coupling)
    if g == 0:
        return 0.0
    if not self_consistent:
        return float(np.real(self_energy(g, delta, kappa, omega, omega)) / (2 * omega))
    w = complex(omega)
    for _ in range(100):
        f = omega**2 - w**2 + self_energy(g, delta, kappa, omega, w)
        h = 1e-6 * omega
        df = (-(w + h) ** 2 + self_energy(g, delta, kappa, omega, w + h) + w**2
              - self_energy(g, delta, kappa, omega, w)) / h
        step = f / df
        w -= step
        if abs(step) < 1e-13 * omega:
            break
    return float(w.real - omega)


def default_grid(omega: float, n: int = 4096) -> np.ndarray:
    """Log-spaced grid (Hz) over [W/4, 4W]."""
    f0 = omega / TWO_PI
    return np.geomspace(f0 / 4, 4 * f0, n)


def _peak_and_fwhm(func, freqs, values):
    """Refine the highest grid peak and its half-maximum crossings on ``func``."""
    i = int(np.argmax(values))
    if i == 0 or i == len(freqs) - 1:
        raise UnresolvedPeakError("unresolved peak: maximum lies on the grid edge")
    res = optimize.minimize_scalar(lambda f: -func(f), bounds=(freqs[i - 1], freqs[i + 1]),
                                   method="bounded",
                                   options={"xatol": 1e-9 * freqs[i]})
    f_peak = float(res.x)
    half = func(f_peak) / 2
    g = lambda f: func(f) - half  # noqa: E731

    lo = int(np.searchsorted(freqs, f_peak)) - 1
    while lo > 0 and values[lo] > half:
        lo -= 1
    hi = lo + 1
    while hi < len(freqs) - 1 and (freqs[hi] <= f_peak or values[hi] > half):
        hi += 1
    if values[lo] > half or values[hi] > half or freqs[hi] <= f_peak:
        raise UnresolvedPeakError("unresolved peak: half maximum not reached on the grid")
    f_lo = optimize.brentq(g, freqs[lo], f_peak, xtol=1e-12 * f_peak)
    f_hi = optimize.brentq(g, f_peak, freqs[hi], xtol=1e-12 * f_peak)
    return f_peak, f_hi - f_lo


def _integrate(func, f_peak, width):
    edges = [0.0, max(f_peak - 50 * width, 0.0), f_peak - 2 * width, f_peak + 2 * width,
             f_peak + 50 * width, 20 * f_peak + 50 * width]
    edges = sorted(set(max(e, 0.0) for e in edges))
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += integrate.quad(func, a, b, limit=400, epsrel=1e-10, epsabs=0)[0]
    # tail beyond 20 f_peak falls off as f^-4; integrate in u = 1/f
    fe = edges[-1]
    total += integrate.quad(lambda u: func(1.0 / u) / u**2, 0.0, 1.0 / fe, limit=200,
                            epsabs=1e-12 * total, epsrel=1e-8)[0]
    return total


def spectrum(system: LinearSystem, axis: str | None = None, freq_grid=None) -> SpectrumResult:
    """PSD on a grid plus (omega_eff, gamma_eff, T_eff) for one axis."""
    axis = axis or system.axes[0]
    j = system.axes.index(axis)
    check_stable(system)
    func = lambda f: float(psd(system, np.array([f]), axis)[0])  # noqa: E731
    if freq_grid is None:
        freqs = default_grid(system.omega[j])
        values = psd(system, freqs, axis)
        if np.argmax(values) == 0:
            # strong optical spring: follow the softened mode down in frequency
            f0 = system.omega[j] / TWO_PI
            freqs = np.geomspace(f0 / 400, 4 * f0, 8192)
            values = psd(system, freqs, axis)
    else:
        freqs = np.asarray(freq_grid, dtype=float)
        values = psd(system, freqs, axis)

    f_peak, width = _peak_and_fwhm(func, freqs, values)
    variance = _integrate(func, f_peak, width)
    omega_eff = TWO_PI * f_peak
    t_eff = system.mass * omega_eff**2 * variance / sc.k
    return SpectrumResult(freqs, values, omega_eff, TWO_PI * width, t_eff, axis, variance)


def displacement_psd(config: ExperimentConfig, derived: DerivedConstants, coupling: ModeCoupling1D,
                     delta: float, freq_grid=None) -> SpectrumResult:
    """Single-axis spectrum with the cavity field eliminated."""
    system = build_system(derived, coupling, (coupling.axis,), delta)
    return spectrum(system, coupling.axis, freq_grid)


def displacement_psd_3d(config: ExperimentConfig, derived: DerivedConstants, cs: CouplingSet,
                        delta: float, axis: str, freq_grid=None) -> SpectrumResult:
    """Spectrum of ``axis`` from the full 3-DOF + cavity system (tilt-enabled runs)."""
    system = build_system(derived, cs, AXES, delta)
    return spectrum(system, axis, freq_grid)


def axis_spectrum(config: ExperimentConfig, axis: str, derived: DerivedConstants | None = None,
                  delta: float | None = None, freq_grid=None) -> SpectrumResult:
    """Spectrum of one axis at the config's operating point.

    Axes are solved independently unless the tweezer is tilted, in which case
    the coupled 3-DOF system is used.
    """
    derived = derived or derive_constants(config)
    delta = config.operating.detuning if delta is None else delta
    cs = couplings_for(config, derived)
    if config.tweezer.tilt_phi != 0.0:
        return displacement_psd_3d(config, derived, cs, delta, axis, freq_grid)
    return displacement_psd(config, derived, ModeCoupling1D.from_couplings(cs, axis), delta, freq_grid)


@dataclass(frozen=True)
class PositionSweep:
    x0: np.ndarray
    gamma_x: np.ndarray  # rad/s; nan where the axis has no steady state
    gamma_z: np.ndarray
    method: str = "fwhm"

    @property
    def stable_x(self) -> np.ndarray:
        return np.isfinite(self.gamma_x)

    @property
    def stable_z(self) -> np.ndarray:
        return np.isfinite(self.gamma_z)


def position_sweep_damping(config: ExperimentConfig, theta: float, delta: float, x0_list,
                           method: str = "fwhm") -> PositionSweep:
    """gamma_eff of the x and z motion at each cavity position.

    ``method="fwhm"`` takes the PSD linewidth of the full back-action model;
    points without a steady state (optical spring stronger than the trap)
    are returned as nan.  ``method="sideband"`` uses the weak-coupling rate
    gamma_gas + optical_damping(g(x0)) and is defined everywhere.
    """
    if method not in ("fwhm", "sideband"):
        raise ValueError("method must be 'fwhm' or 'sideband'")
    x0_list = np.asarray(x0_list, dtype=float)
    out = {"x": [], "z": []}
    for x0 in x0_list:
        cfg = config.evolve(theta=theta, x0=float(x0), delta=delta)
        derived = derive_constants(cfg)
        cs = couplings_for(cfg, derived)
        for axis in out:
            if method == "sideband":
                g = cs.g_x if axis == "x" else cs.g_z_tilt
                w = derived.mech_freqs[AXES.index(axis)]
                out[axis].append(derived.gas_damping + optical_damping(g, delta, derived.kappa, w))
                continue
            try:
                out[axis].append(axis_spectrum(cfg, axis, derived).gamma_eff)
            except (UnstableSystemError, UnresolvedPeakError):
                out[axis].append(math.nan)
    return PositionSweep(x0_list, np.array(out["x"]), np.array(out["z"]), method)


@dataclass(frozen=True)
class TransverseModes:
    frequencies: np.ndarray  # rad/s, normal-mode frequencies
    damping: np.ndarray  # rad/s, total energy damping of each normal mode
    optical_damping: np.ndarray  # rad/s, damping minus gamma
    participation: np.ndarray  # |weights| of (x, y) in each mode


def transverse_modes(omega_x: float, omega_y: float, g_common: float, kappa: float,
                     delta: float, gamma: float = 0.0) -> TransverseModes:
    """Normal modes of the x/y motion coupled to the cavity at theta = pi/4.

    Both modes couple to the amplitude quadrature through (x + y)/sqrt(2);
    ``g_common`` is the rate of the x motion and the y rate follows from the
    zero-point ratio, g_y = g_common sqrt(W_x / W_y).
    Solves the eigenproblem of the 2-oscillator + cavity drift matrix in
    zero-point-scaled coordinates.  Modes are ordered by frequency (descending).
    """
    om = np.array([omega_x, omega_y], float)
    g = np.array([g_common, g_common * math.sqrt(omega_x / omega_y)])
    # state: (q_x, v_x, q_y, v_y, Re a, Im a), q in zpf units
    A = np.zeros((6, 6))
    for j in range(2):
        A[2 * j, 2 * j + 1] = 1.0
        A[2 * j + 1, 2 * j] = -om[j] ** 2
        A[2 * j + 1, 2 * j + 1] = -gamma
        # amplitude quadrature, coupling coefficient -g_j (real)
        A[2 * j + 1, 4] = 4 * om[j] * g[j]
        A[5, 2 * j] = g[j]
    A[4, 4] = A[5, 5] = -kappa / 2
    A[4, 5] = delta
    A[5, 4] = -delta

    vals, vecs = np.linalg.eig(A)
    scale = np.array([1, 1 / om[0], 1, 1 / om[1], 1, 1])
    weights = np.abs(vecs * scale[:, None])
    mech = np.vstack([np.hypot(weights[0], weights[1]), np.hypot(weights[2], weights[3])])
    cav = np.hypot(weights[4], weights[5])
    upper = vals.imag > 0
    mech_share = mech.sum(axis=0) / (mech.sum(axis=0) + cav)
    cand = np.flatnonzero(upper)
    chosen = cand[np.argsort(-mech_share[cand])[:2]]
    chosen = chosen[np.argsort(-vals[chosen].imag)]
    damping = -2 * vals[chosen].real
    part = mech[:, chosen] / mech[:, chosen].sum(axis=0)
    return TransverseModes(vals[chosen].imag, damping, damping - gamma, part.T)
