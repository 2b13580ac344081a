"""Coherent-scattering drive, optomechanical coupling rates and photon numbers.

All rates are angular (rad/s).  Positions ``x0`` are measured along the
cavity axis from an antinode, so ``x0 = lambda/4`` is a node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants as sc

from .params import DerivedConstants, ExperimentConfig, derive_constants


@dataclass(frozen=True)
class CouplingSet:
    """Coupling rates at one operating point (theta, x0, phi, delta).

    The public rate fields are magnitudes.  ``signed`` keeps
    (g_x, g_y, g_z, g_z_tilt, tilt_cross) with signs, where ``tilt_cross``
    is the amplitude-quadrature z term produced by the tweezer tilt.
    """

    drive_Ed: float
    g_x: float
    g_y: float
    g_z: float
    g_z_tilt: float
    g_quad: float
    n_phot: float
    coherent_amplitude: complex
    kappa_nano: float
    signed: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)

    def quadrature_couplings(self) -> dict:
        """Complex coupling A_j per axis for H/hbar = sum_j q_j/q_zpf (A_j a^+ + A_j^* a).

        x and y enter with the amplitude quadrature (a^+ + a) and z with the
        phase quadrature i(a^+ - a); the tilt term adds an amplitude-quadrature
        component to z.
        """
        gx, gy, gz, _, cross = self.signed
        return {"x": complex(-gx), "y": complex(-gy), "z": complex(-cross, gz)}

    @property
    def any_scattering(self) -> bool:
        return self.drive_Ed > 0


def drive(derived: DerivedConstants, theta: float) -> float:
    """Cavity drive E_d(theta) = alpha eps_tw eps_cav sin(theta) / (2 hbar)."""
    return (derived.polarizability * derived.field_tw * derived.field_cav
            * math.sin(theta) / (2.0 * sc.hbar))


def intracavity_photons(derived: DerivedConstants, drive_Ed: float, x0: float, delta: float):
    """Coherent amplitude alpha_0 = i E_d cos(kx0) / (kappa/2 + i delta) and |alpha_0|^2."""
    amp = 1j * drive_Ed * math.cos(derived.wavenumber * x0) / (derived.kappa / 2 + 1j * delta)
    return abs(amp) ** 2, complex(amp)


def photon_number(derived: DerivedConstants, drive_Ed: float, x0: float, delta: float) -> float:
    """Closed form n_phot = E_d^2 cos^2(kx0) / ((kappa/2)^2 + delta^2)."""
    c = math.cos(derived.wavenumber * x0)
    return drive_Ed**2 * c * c / ((derived.kappa / 2) ** 2 + delta**2)


def kappa_nano(derived: DerivedConstants, x0: float) -> float:
    """Cavity input rate from scattering, 4 |k alpha/(eps0 w0^2 pi)|^2 nu_FSR cos^2(kx0).

    nu_FSR is the free spectral range in ordinary Hz.
    """
    k = derived.wavenumber
    overlap = k * derived.polarizability / (sc.epsilon_0 * derived.cavity_waist**2 * math.pi)
    return 4.0 * overlap**2 * derived.fsr_hz * math.cos(k * x0) ** 2


def coupling_rates(derived: DerivedConstants, theta: float, x0: float, tilt_phi: float = 0.0,
                   delta: float = 0.0, ellipticity: float = 0.0) -> CouplingSet:
    ed = drive(derived, theta)
    k = derived.wavenumber
    xz, yz, zz = derived.zpf
    s, c = math.sin(k * x0), math.cos(k * x0)

    gx = ed * k * xz * math.sin(theta) * s
    # residual polarization ellipticity puts a floor under the y projection
    y_proj = math.copysign(math.hypot(math.cos(theta), ellipticity), math.cos(theta) or 1.0)
    gy = ed * k * yz * y_proj * s
    gz = ed * (k - 1.0 / derived.rayleigh_range) * zz * c
    cross = -ed * k * zz * math.sin(theta) * math.sin(tilt_phi) * s
    gz_tilt = gz + cross
    gquad = ed * k**2 * xz**2 * math.sin(theta) ** 2 * abs(c) / 2.0

    n_phot, amp = intracavity_photons(derived, ed, x0, delta)
    return CouplingSet(
        drive_Ed=ed, g_x=abs(gx), g_y=abs(gy), g_z=abs(gz), g_z_tilt=abs(gz_tilt),
        g_quad=gquad, n_phot=n_phot, coherent_amplitude=amp,
        kappa_nano=kappa_nano(derived, x0),
        signed=(gx, gy, gz, gz_tilt, cross),
    )


def couplings_for(config: ExperimentConfig, derived: DerivedConstants | None = None) -> CouplingSet:
    """Coupling set at the operating point stored in ``config``."""
    derived = derived or derive_constants(config)
    tw, op = config.tweezer, config.operating
    return coupling_rates(derived, tw.polarization_theta, op.position_x0, tw.tilt_phi,
                          op.detuning, tw.ellipticity)


def polarization_suppression(tilt_phi: float) -> float:
    """Residual scattering at theta = 0 relative to theta = pi/2: sin^2(phi)."""
    return math.sin(tilt_phi) ** 2


def tilt_from_suppression(factor: float) -> float:
    """Tilt angle implied by a measured scattering suppression factor (inverse of above)."""
    return math.asin(math.sqrt(factor))


def detection_periodicities(x0, wavelength: float):
    """Normalized (scattered power, g_x^2, g_lock^2) at position(s) x0.

    Scattered power follows cos^2(kx0), coherent-scattering coupling
    sin^2(kx0) and the dispersive locking-mode coupling sin^2(2kx0).
    """
    k = 2 * math.pi / wavelength
    x0 = np.asarray(x0, dtype=float)
    out = (np.cos(k * x0) ** 2, np.sin(k * x0) ** 2, np.sin(2 * k * x0) ** 2)
    if out[0].ndim == 0:
        return tuple(float(v) for v in out)
    return out


def dispersive_equivalent(g_target: float, derived: DerivedConstants, g0: float,
                          omega_x: float | None = None, drive_Ed: float | None = None):
    """Drive a conventional dispersive scheme needs for coupling ``g_target``.

    Returns ``(Ed_disp, photon_ratio)`` where photon_ratio = (Ed_disp/E_d)^2.
    By default E_d is the coherent-scattering drive that gives the same
    ``g_target`` at a node, E_d = g_target / (k x_zpf).
    """
    if g0 <= 0:
        raise ValueError("g0 must be positive")
    omega_x = derived.mech_freqs[0] if omega_x is None else omega_x
    ed_disp = g_target * math.hypot(derived.kappa / 2, omega_x) / g0
    if drive_Ed is None:
        drive_Ed = g_target / (derived.wavenumber * derived.zpf[0])
    return ed_disp, (ed_disp / drive_Ed) ** 2
