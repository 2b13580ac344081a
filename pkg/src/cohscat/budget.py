"""Closed-form noise budget: phase noise, recoil heating, cooperativity,
minimum phonon occupation and the quadratic-cooling temperature model.

Rates are angular (rad/s); occupations are phonon numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants as sc

from .coupling import CouplingSet, couplings_for, drive, photon_number
from .params import DerivedConstants, ExperimentConfig, derive_constants

PROJECTION_NOTE = "projection: recoil-limited regime (p ~ 1e-7 mbar), not a simulated result"


def phase_noise_phonons(n_phot: float, kappa: float, freq_noise_psd: float) -> float:
    """Added occupation (n_phot / kappa) S_phidot(Omega_x) from laser frequency noise."""
    if freq_noise_psd < 0:
        raise ValueError("frequency-noise PSD must be non-negative")
    return n_phot / kappa * freq_noise_psd


def phase_noise_ratio(drive_Ed: float, cos2: float, g_x: float, g0: float, kappa: float,
                      omega_x: float) -> float:
    """Coherent-scattering / dispersive phase-noise occupation at equal g_x.

    Both schemes are evaluated at the sideband detuning Delta = Omega_x; the
    dispersive scheme needs (g_x/g0)^2 intracavity photons.
    """
    n_cs = drive_Ed**2 * cos2 / ((kappa / 2) ** 2 + omega_x**2)
    n_disp = (g_x / g0) ** 2
    return n_cs / n_disp


def node_phase_suppression(derived: DerivedConstants, g0: float, x0: float | None = None,
                           cos2: float | None = None, omega_x: float | None = None) -> float:
    """Phase-noise ratio near a node when E_d is matched to the dispersive g_x.

    Equals g0^2 cos^2(kx0) / (k^2 x_zpf^2 ((kappa/2)^2 + Omega_x^2)).  Give
    either the position ``x0`` or the photon-number factor ``cos2`` directly.
    """
    if (x0 is None) == (cos2 is None):
        raise ValueError("give exactly one of x0 or cos2")
    if cos2 is None:
        cos2 = math.cos(derived.wavenumber * x0) ** 2
    omega_x = derived.mech_freqs[0] if omega_x is None else omega_x
    k, xz, kap = derived.wavenumber, derived.zpf[0], derived.kappa
    return g0**2 * cos2 / (k**2 * xz**2 * ((kap / 2) ** 2 + omega_x**2))


def cooperativity(finesse: float, wavenumber: float, waist: float) -> float:
    """Recoil-limited cooperativity C_Q = (30 F / pi) / (k w0)^2."""
    if finesse <= 0 or wavenumber <= 0 or waist <= 0:
        raise ValueError("finesse, wavenumber and waist must be positive")
    return 30.0 * finesse / math.pi / (wavenumber * waist) ** 2


@dataclass(frozen=True)
class RecoilHeating:
    """Recoil heating rate of the x-motion in three evaluations.

    ``canonical`` = 4 g_x^2 / (kappa C_Q) is the one used downstream.
    ``g_form`` and ``intensity_form`` are the two literal closed
    expressions; they agree with each other and sit a factor
    ``discrepancy`` above the canonical value.
    """

    canonical: float
    g_form: float
    intensity_form: float

    @property
    def discrepancy(self) -> float:
        return self.g_form / self.canonical


def recoil_heating(derived: DerivedConstants, g_x: float, omega_x: float | None = None,
                   intensity: float | None = None) -> RecoilHeating:
    """Recoil heating rate for coupling ``g_x`` (rad/s).

    ``intensity`` defaults to the tweezer focal intensity implied by the
    derived field amplitude.
    """
    k, w0 = derived.wavenumber, derived.cavity_waist
    cq = cooperativity(derived.finesse, k, w0)
    canonical = 4.0 * g_x**2 / (derived.kappa * cq)
    g_form = 2.0 / 15.0 * (k * w0) ** 2 / derived.fsr_hz * g_x**2
    omega_x = derived.mech_freqs[0] if omega_x is None else omega_x
    if intensity is None:
        intensity = sc.epsilon_0 * sc.c * derived.field_tw**2 / 2
    omega_c = sc.c * k
    intensity_form = (0.8 * omega_c / omega_x * intensity / (derived.mass * sc.c**2)
                      * k**4 * derived.polarizability**2 / (6 * math.pi * sc.epsilon_0**2))
    return RecoilHeating(canonical, g_form, intensity_form)


@dataclass(frozen=True)
class MinimumPhonons:
    sideband: float
    recoil: float
    phase: float

    @property
    def total(self) -> float:
        return self.sideband + self.recoil + self.phase

    @property
    def ground_state_probability(self) -> float:
        return 1.0 / (1.0 + self.total)


def minimum_phonons(derived: DerivedConstants, g_x: float, n_phase: float = 0.0,
                    omega_x: float | None = None, gamma_recoil: float | None = None) -> MinimumPhonons:
    """Occupation limit at a node: (kappa/4W)^2 + Gamma_rec kappa/(4 g^2) + n_phase."""
    omega_x = derived.mech_freqs[0] if omega_x is None else omega_x
    if gamma_recoil is None:
        gamma_recoil = recoil_heating(derived, g_x, omega_x).canonical
    sideband = (derived.kappa / (4 * omega_x)) ** 2
    recoil = gamma_recoil * derived.kappa / (4 * g_x**2) if g_x > 0 else math.inf
    return MinimumPhonons(sideband, recoil, n_phase)


@dataclass(frozen=True)
class QuadraticCooling:
    g_quad: float
    gamma_down: float
    n_th: float
    gamma_gas: float
    ratio: float  # T_quad / T0
    regime: str  # "quadratic" or "linear"


def quadratic_cooling(derived: DerivedConstants, drive_Ed: float, delta: float, x0: float = 0.0,
                      gamma_gas: float | None = None, theta: float = math.pi / 2) -> QuadraticCooling:
    """Temperature reached through the quadratic interaction near an antinode.

    The closed form sqrt(gamma_gas / (pi Gamma_down n_th)) only holds while
    gamma_gas < Gamma_down n_th.  Outside that range the result is flagged
    ``regime="linear"`` and the channel is treated as inactive (ratio 1).
    """
    k, xz = derived.wavenumber, derived.zpf[0]
    omega_x = derived.mech_freqs[0]
    kap = derived.kappa
    gamma_gas = derived.gas_damping if gamma_gas is None else gamma_gas
    g_quad = drive_Ed * k**2 * xz**2 * math.sin(theta) ** 2 * abs(math.cos(k * x0)) / 2
    gamma_down = g_quad**2 * kap / ((kap / 2) ** 2 + (2 * omega_x - delta) ** 2)
    n_th = sc.k * derived.temperature / (sc.hbar * omega_x)
    if gamma_gas < gamma_down * n_th:
        return QuadraticCooling(g_quad, gamma_down, n_th, gamma_gas,
                                math.sqrt(gamma_gas / (math.pi * gamma_down * n_th)), "quadratic")
    return QuadraticCooling(g_quad, gamma_down, n_th, gamma_gas, 1.0, "linear")


def temperature_model(x0, lin_ratio: float, quad_ratio: float = 1.0, wavelength: float = 1064e-9):
    """T_eff/T0 = [sin^2(kx0)/T_lin + cos^2(kx0)/T_quad]^-1 with both in units of T0.

    ``quad_ratio = 1`` switches the quadratic channel off, leaving the purely
    linear model 1 / (1 + (gamma_max/gamma_gas - 1) sin^2 kx0).
    """
    if lin_ratio <= 0 or quad_ratio <= 0:
        raise ValueError("temperature ratios must be positive")
    k = 2 * math.pi / wavelength
    x0 = np.asarray(x0, dtype=float)
    out = 1.0 / (np.sin(k * x0) ** 2 / lin_ratio + np.cos(k * x0) ** 2 / quad_ratio)
    return float(out) if out.ndim == 0 else out


def combined_temperature(lin_ratio, x0, quad_ratio: float, wavelength: float = 1064e-9):
    """Add the quadratic channel to a linear-model temperature at position x0.

    ``lin_ratio`` is the linear-only T_eff/T0 at x0, i.e.
    1 / (1 + (gamma_max/gamma_gas - 1) sin^2 kx0); the result equals
    :func:`temperature_model` with T_lin = gamma_gas/gamma_max.
    """
    k = 2 * math.pi / wavelength
    c2 = np.cos(k * np.asarray(x0, float)) ** 2
    out = 1.0 / (1.0 / np.asarray(lin_ratio, float) + c2 * (1.0 / quad_ratio - 1.0))
    return float(out) if out.ndim == 0 else out


@dataclass
class NoiseBudget:
    n_phase: float
    gamma_recoil: float
    cooperativity_CQ: float
    n_min: MinimumPhonons
    phase_suppression_ratio: float
    T_quad_over_T0: float
    gamma_recoil_g_form: float = 0.0
    gamma_recoil_intensity_form: float = 0.0
    quadratic_regime: str = "quadratic"
    notes: list = field(default_factory=list)

    @property
    def phase_dominates(self) -> bool:
        return self.n_min.phase > self.n_min.sideband + self.n_min.recoil

    def as_row(self) -> dict:
        """Flat mapping of all fields, suitable for one CSV row."""
        return {
            "n_phase": self.n_phase,
            "gamma_recoil_rad_s": self.gamma_recoil,
            "gamma_recoil_g_form_rad_s": self.gamma_recoil_g_form,
            "gamma_recoil_intensity_form_rad_s": self.gamma_recoil_intensity_form,
            "cooperativity_CQ": self.cooperativity_CQ,
            "n_min_sideband": self.n_min.sideband,
            "n_min_recoil": self.n_min.recoil,
            "n_min_phase": self.n_min.phase,
            "n_min_total": self.n_min.total,
            "ground_state_probability": self.n_min.ground_state_probability,
            "phase_suppression_ratio": self.phase_suppression_ratio,
            "T_quad_over_T0": self.T_quad_over_T0,
            "quadratic_regime": self.quadratic_regime,
        }


def noise_budget(config: ExperimentConfig, derived: DerivedConstants | None = None,
                 couplings: CouplingSet | None = None) -> NoiseBudget:
    """Assemble the full budget at the operating point stored in ``config``.

    The occupation limit and recoil figures use the node coupling
    g_x(theta, lambda/4), independent of the configured x0; the phase-noise
    terms use the photon number at the configured x0 and detuning.
    """
    derived = derived or derive_constants(config)
    cs = couplings or couplings_for(config, derived)
    theta = config.tweezer.polarization_theta
    ed = drive(derived, theta)
    g_node = ed * derived.wavenumber * derived.zpf[0] * math.sin(theta)
    n_phot = photon_number(derived, ed, config.operating.position_x0, config.operating.detuning)
    n_phase = phase_noise_phonons(n_phot, derived.kappa, config.phase_noise)
    rec = recoil_heating(derived, g_node)
    nmin = minimum_phonons(derived, g_node, n_phase, gamma_recoil=rec.canonical)
    supp = node_phase_suppression(derived, config.g0, x0=config.operating.position_x0)
    quad = quadratic_cooling(derived, ed, config.operating.detuning, 0.0, theta=theta)
    notes = [PROJECTION_NOTE]
    if not cs.any_scattering:
        notes.append("no scattering: all couplings vanish")
    if quad.regime == "linear":
        notes.append("quadratic regime violated: gamma_gas >= Gamma_down n_th")
    budget = NoiseBudget(
        n_phase=n_phase, gamma_recoil=rec.canonical,
        cooperativity_CQ=cooperativity(derived.finesse, derived.wavenumber, derived.cavity_waist),
        n_min=nmin, phase_suppression_ratio=supp, T_quad_over_T0=quad.ratio,
        gamma_recoil_g_form=rec.g_form, gamma_recoil_intensity_form=rec.intensity_form,
        quadratic_regime=quad.regime, notes=notes,
    )
    if budget.phase_dominates:
        budget.notes.append("phase-noise addend dominates the occupation limit")
    return budget
