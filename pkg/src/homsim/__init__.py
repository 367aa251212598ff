"""Simulation and analysis of HOM interference between a heralded single-photon
source and a weak coherent state."""

__version__ = "0.1.0"
