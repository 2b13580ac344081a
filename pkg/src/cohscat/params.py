"""Experiment parameters, config-file I/O and derived physical constants.

Units: everything held in the dataclasses below is SI with *angular*
frequencies (rad/s).  Config files use ordinary Hz, mbar and degrees; the
conversion happens only in :func:`config_from_mapping` / :func:`config_to_mapping`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

from scipy import constants as sc

from .errors import ConfigError

TWO_PI = 2.0 * math.pi
MBAR = 100.0  # Pa

#: Fused-silica density.  Not quoted with the experiment; this value reproduces
#: the expected drive of 2.8 GHz and z-coupling of 131 kHz.
SILICA_DENSITY = 1850.0
AIR_MOLECULAR_MASS_U = 28.97
AIR_VISCOSITY = 1.81e-5  # Pa s at ~295 K
ROOM_TEMPERATURE = 300.0


@dataclass(frozen=True)
class ParticleParams:
    radius: float
    permittivity: float
    density: float = SILICA_DENSITY

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * math.pi * self.radius**3

    @property
    def mass(self) -> float:
        return self.density * self.volume


@dataclass(frozen=True)
class TweezerParams:
    """Tweezer beam.  ``polarization_theta`` is the angle between the
    polarization and the cavity axis; ``tilt_phi`` the deviation of the
    tweezer axis from perpendicular to the cavity axis."""

    wavelength: float
    power: float
    waist_x: float
    waist_y: float
    polarization_theta: float = math.pi / 2
    tilt_phi: float = 0.0
    ellipticity: float = 0.0


@dataclass(frozen=True)
class CavityParams:
    length: float
    waist: float
    finesse: float
    resonance_wavelength: Optional[float] = None


@dataclass(frozen=True)
class Environment:
    pressure: float  # mbar
    gas_temperature: float = ROOM_TEMPERATURE
    gas_mass: float = AIR_MOLECULAR_MASS_U * sc.atomic_mass
    gas_viscosity: float = AIR_VISCOSITY
    damping_scale: float = 1.0


@dataclass(frozen=True)
class OperatingPoint:
    detuning: float  # rad/s, omega_cav - omega_tw
    position_x0: float  # m from an antinode


@dataclass(frozen=True)
class ExperimentConfig:
    particle: ParticleParams
    tweezer: TweezerParams
    cavity: CavityParams
    environment: Environment
    operating: OperatingPoint
    #: measured mechanical frequencies (rad/s); a non-None entry replaces the
    #: value derived from the tweezer potential
    mech_freq_override: tuple = (None, None, None)
    #: dispersive single-photon coupling of an equal-sized particle (rad/s)
    g0: float = TWO_PI * 0.3
    #: laser frequency-noise PSD S_phidot(Omega_x) in rad^2 Hz
    phase_noise: float = 0.0

    def evolve(self, *, theta=None, x0=None, delta=None, pressure=None,
               tilt_phi=None) -> "ExperimentConfig":
        """Copy with operating-point / environment values replaced."""
        cfg = self
        if theta is not None or tilt_phi is not None:
            tw = cfg.tweezer
            tw = dataclasses.replace(
                tw,
                polarization_theta=tw.polarization_theta if theta is None else theta,
                tilt_phi=tw.tilt_phi if tilt_phi is None else tilt_phi,
            )
            cfg = dataclasses.replace(cfg, tweezer=tw)
        if x0 is not None or delta is not None:
            op = cfg.operating
            op = OperatingPoint(
                detuning=op.detuning if delta is None else delta,
                position_x0=op.position_x0 if x0 is None else x0,
            )
            cfg = dataclasses.replace(cfg, operating=op)
        if pressure is not None:
            cfg = dataclasses.replace(
                cfg, environment=dataclasses.replace(cfg.environment, pressure=pressure))
        return cfg


@dataclass(frozen=True)
class DerivedConstants:
    polarizability: float
    mass: float
    field_tw: float
    field_cav: float
    rayleigh_range: float
    wavenumber: float
    mech_freqs: tuple
    zpf: tuple
    kappa: float
    fsr: float
    gas_damping: float
    omega_cav: float
    mode_volume: float
    potential_depth: float
    mech_freqs_from_potential: tuple
    cavity_waist: float
    finesse: float
    temperature: float

    @property
    def fsr_hz(self) -> float:
        return self.fsr / TWO_PI

    @property
    def wavelength(self) -> float:
        return TWO_PI / self.wavenumber


# ---------------------------------------------------------------------------
# validation


def wrap_position(x0: float, wavelength: float) -> float:
    """Map ``x0`` into [-lambda/2, lambda/2); all couplings are lambda-periodic."""
    return (x0 + wavelength / 2) % wavelength - wavelength / 2


def validate(config: ExperimentConfig) -> ExperimentConfig:
    """Check every parameter invariant; return the config with x0 wrapped.

    Raises :class:`ConfigError` naming the first offending field.
    """
    p, tw, cav, env, op = (config.particle, config.tweezer, config.cavity,
                           config.environment, config.operating)

    def require(cond, msg):
        if not cond:
            raise ConfigError(msg)

    require(p.radius > 0, "radius must be positive")
    require(p.permittivity > 1, "permittivity must exceed 1")
    require(p.density > 0, "density must be positive")
    for name in ("wavelength", "power", "waist_x", "waist_y"):
        require(getattr(tw, name) > 0, f"{name} must be positive")
    require(0.0 <= tw.polarization_theta <= math.pi / 2 + 1e-12,
            "polarization_theta must lie in [0, pi/2]")
    require(abs(tw.tilt_phi) < math.pi / 18, "tilt_phi must satisfy |phi| < 10 deg")
    require(0.0 <= tw.ellipticity <= 1.0, "ellipticity must lie in [0, 1]")
    require(cav.length > 0, "cavity length must be positive")
    require(cav.waist > 0, "cavity waist must be positive")
    require(cav.finesse > 1, "finesse must exceed 1")
    require(cav.resonance_wavelength is None or cav.resonance_wavelength > 0,
            "resonance_wavelength must be positive")
    require(env.pressure >= 0, "pressure must be non-negative")
    require(env.gas_temperature > 0, "gas_temperature must be positive")
    require(env.gas_mass > 0, "gas_mass must be positive")
    require(env.gas_viscosity > 0, "gas_viscosity must be positive")
    require(env.damping_scale >= 0, "damping_scale must be non-negative")
    require(math.isfinite(op.detuning), "detuning must be finite")
    require(math.isfinite(op.position_x0), "position_x0 must be finite")
    for axis, w in zip("xyz", config.mech_freq_override):
        require(w is None or w > 0, f"mech_freq_{axis} override must be positive")
    require(config.g0 >= 0, "g0 must be non-negative")
    require(config.phase_noise >= 0, "phase_noise must be non-negative")

    x0 = wrap_position(op.position_x0, tw.wavelength)
    return dataclasses.replace(
        config, operating=OperatingPoint(detuning=op.detuning, position_x0=x0))


# ---------------------------------------------------------------------------
# derived quantities


def polarizability(particle: ParticleParams) -> float:
    """Clausius-Mossotti polarizability alpha = 3 eps0 V (eps-1)/(eps+2), in C m^2/V."""
    e = particle.permittivity
    return 3.0 * sc.epsilon_0 * particle.volume * (e - 1.0) / (e + 2.0)


def gas_damping(env: Environment, particle: ParticleParams) -> float:
    """Free-molecular (Epstein) gas damping rate in rad/s.

    gamma = (1 + pi/8) * p / (rho r) * sqrt(8 m_gas / (pi k_B T))

    i.e. diffuse reflection with full thermal accommodation.  The result is
    exactly linear in pressure and multiplied by ``env.damping_scale``.
    """
    p = env.pressure * MBAR
    mean_speed_factor = math.sqrt(8.0 * env.gas_mass / (math.pi * sc.k * env.gas_temperature))
    gamma = (1.0 + math.pi / 8.0) * p * mean_speed_factor / (particle.density * particle.radius)
    return env.damping_scale * gamma


def knudsen_number(env: Environment, particle: ParticleParams) -> float:
    """Mean free path over particle radius; the Epstein model needs Kn >> 1."""
    p = env.pressure * MBAR
    if p == 0:
        return math.inf
    mfp = env.gas_viscosity / p * math.sqrt(math.pi * sc.k * env.gas_temperature / (2 * env.gas_mass))
    return mfp / particle.radius


def derive_constants(config: ExperimentConfig) -> DerivedConstants:
    config = validate(config)
    p, tw, cav = config.particle, config.tweezer, config.cavity

    alpha = polarizability(p)
    mass = p.mass
    k = TWO_PI / tw.wavelength
    lam_cav = cav.resonance_wavelength or tw.wavelength
    omega_cav = TWO_PI * sc.c / lam_cav

    field_tw = math.sqrt(4.0 * tw.power / (tw.waist_x * tw.waist_y * math.pi * sc.epsilon_0 * sc.c))
    mode_volume = cav.waist**2 * math.pi * cav.length / 4.0
    field_cav = math.sqrt(sc.hbar * omega_cav / (2.0 * sc.epsilon_0 * mode_volume))
    z_r = tw.waist_x * tw.waist_y * math.pi / tw.wavelength

    u0 = alpha * field_tw**2 / 4.0
    from_potential = (
        math.sqrt(4.0 * u0 / (mass * tw.waist_x**2)),
        math.sqrt(4.0 * u0 / (mass * tw.waist_y**2)),
        math.sqrt(2.0 * u0 / (mass * z_r**2)),
    )
    freqs = tuple(o if o is not None else d
                  for o, d in zip(config.mech_freq_override, from_potential))
    zpf = tuple(math.sqrt(sc.hbar / (2.0 * mass * w)) for w in freqs)

    fsr = math.pi * sc.c / cav.length
    return DerivedConstants(
        polarizability=alpha,
        mass=mass,
        field_tw=field_tw,
        field_cav=field_cav,
        rayleigh_range=z_r,
        wavenumber=k,
        mech_freqs=freqs,
        zpf=zpf,
        kappa=fsr / cav.finesse,
        fsr=fsr,
        gas_damping=gas_damping(config.environment, p),
        omega_cav=omega_cav,
        mode_volume=mode_volume,
        potential_depth=u0,
        mech_freqs_from_potential=from_potential,
        cavity_waist=cav.waist,
        finesse=cav.finesse,
        temperature=config.environment.gas_temperature,
    )


# ---------------------------------------------------------------------------
# config files

# key -> (unit conversion to internal SI, required)
_KEYS = {
    "radius_m": (1.0, True),
    "permittivity": (1.0, True),
    "density_kg_m3": (1.0, False),
    "wavelength_m": (1.0, True),
    "power_w": (1.0, True),
    "waist_x_m": (1.0, True),
    "waist_y_m": (1.0, True),
    "polarization_theta_deg": (math.pi / 180, True),
    "tilt_phi_deg": (math.pi / 180, False),
    "polarization_ellipticity": (1.0, False),
    "cavity_length_m": (1.0, True),
    "cavity_waist_m": (1.0, True),
    "finesse": (1.0, True),
    "resonance_wavelength_m": (1.0, False),
    "pressure_mbar": (1.0, True),
    "gas_temperature_k": (1.0, False),
    "gas_molecular_mass_u": (sc.atomic_mass, False),
    "gas_viscosity_pa_s": (1.0, False),
    "gas_damping_scale": (1.0, False),
    "detuning_hz": (TWO_PI, True),
    "position_x0_m": (1.0, True),
    "mech_freq_x_hz": (TWO_PI, False),
    "mech_freq_y_hz": (TWO_PI, False),
    "mech_freq_z_hz": (TWO_PI, False),
    "g0_hz": (TWO_PI, False),
    "phase_noise_rad2_hz": (1.0, False),
}
CONFIG_KEYS = tuple(_KEYS)
REQUIRED_KEYS = tuple(k for k, (_, req) in _KEYS.items() if req)


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` starts a comment) into a dict of floats."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        try:
            values[key] = float(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: value for {key!r} is not a number: {value!r}") from None
    return values


def config_from_mapping(values: Mapping[str, float]) -> ExperimentConfig:
    """Build a validated config from flat file-unit values."""
    unknown = sorted(set(values) - set(_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    missing = [k for k in REQUIRED_KEYS if k not in values]
    if missing:
        raise ConfigError(f"missing config key {missing[0]!r}")
    v = {k: float(x) * _KEYS[k][0] for k, x in values.items()}

    def opt(key, default):
        return v.get(key, default)

    cfg = ExperimentConfig(
        particle=ParticleParams(v["radius_m"], v["permittivity"], opt("density_kg_m3", SILICA_DENSITY)),
        tweezer=TweezerParams(
            wavelength=v["wavelength_m"], power=v["power_w"],
            waist_x=v["waist_x_m"], waist_y=v["waist_y_m"],
            polarization_theta=v["polarization_theta_deg"],
            tilt_phi=opt("tilt_phi_deg", 0.0),
            ellipticity=opt("polarization_ellipticity", 0.0),
        ),
        cavity=CavityParams(v["cavity_length_m"], v["cavity_waist_m"], v["finesse"],
                            opt("resonance_wavelength_m", None)),
        environment=Environment(
            pressure=v["pressure_mbar"],
            gas_temperature=opt("gas_temperature_k", ROOM_TEMPERATURE),
            gas_mass=opt("gas_molecular_mass_u", AIR_MOLECULAR_MASS_U * sc.atomic_mass),
            gas_viscosity=opt("gas_viscosity_pa_s", AIR_VISCOSITY),
            damping_scale=opt("gas_damping_scale", 1.0),
        ),
        operating=OperatingPoint(v["detuning_hz"], v["position_x0_m"]),
        mech_freq_override=tuple(v.get(f"mech_freq_{a}_hz") for a in "xyz"),
        g0=opt("g0_hz", TWO_PI * 0.3),
        phase_noise=opt("phase_noise_rad2_hz", 0.0),
    )
    return validate(cfg)


def config_to_mapping(config: ExperimentConfig) -> dict:
    """Inverse of :func:`config_from_mapping` (file units)."""
    p, tw, cav, env, op = (config.particle, config.tweezer, config.cavity,
                           config.environment, config.operating)
    internal = {
        "radius_m": p.radius, "permittivity": p.permittivity, "density_kg_m3": p.density,
        "wavelength_m": tw.wavelength, "power_w": tw.power,
        "waist_x_m": tw.waist_x, "waist_y_m": tw.waist_y,
        "polarization_theta_deg": tw.polarization_theta, "tilt_phi_deg": tw.tilt_phi,
        "polarization_ellipticity": tw.ellipticity,
        "cavity_length_m": cav.length, "cavity_waist_m": cav.waist, "finesse": cav.finesse,
        "resonance_wavelength_m": cav.resonance_wavelength,
        "pressure_mbar": env.pressure, "gas_temperature_k": env.gas_temperature,
        "gas_molecular_mass_u": env.gas_mass, "gas_viscosity_pa_s": env.gas_viscosity,
        "gas_damping_scale": env.damping_scale,
        "detuning_hz": op.detuning, "position_x0_m": op.position_x0,
        "g0_hz": config.g0, "phase_noise_rad2_hz": config.phase_noise,
    }
    for a, w in zip("xyz", config.mech_freq_override):
        internal[f"mech_freq_{a}_hz"] = w
    return {k: val / _KEYS[k][0] for k, val in internal.items() if val is not None}


def load_config(path=None, overrides: Optional[Mapping[str, float]] = None) -> ExperimentConfig:
    """Read a config file (the bundled reference parameters when ``path`` is None)."""
    if path is None:
        text = resources.files("cohscat.data").joinpath("paper_defaults.cfg").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    values = parse_config_text(text)
    values.update(overrides or {})
    return config_from_mapping(values)


def paper_defaults() -> ExperimentConfig:
    return load_config(None)


def dump_config(config: ExperimentConfig) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in config_to_mapping(config).items())
