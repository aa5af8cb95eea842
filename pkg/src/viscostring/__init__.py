"""Viscoelastic string with time-varying traction: spectra, memory kernels,
boundary control by moments, forward simulation and source identification."""

__version__ = "0.1.0"
