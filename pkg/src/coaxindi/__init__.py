"""Coaxial-rotor UAV flight control: NDI / INDI cascades, delay analysis and simulation."""

__version__ = "0.1.0"
