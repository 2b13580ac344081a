"""Cavity cooling of a levitated nanoparticle by coherent scattering."""

__version__ = "0.1.0"
