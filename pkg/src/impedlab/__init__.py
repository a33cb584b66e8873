"""Impedance scattering lab: forward solvers, impedance reconstruction and stability probes."""

__version__ = "0.1.0"
