"""Lattice bosons with attractive on-site interactions: classical DNLSE
solitons, exact Bose-Hubbard number statistics, and world-line quantum
Monte Carlo sampling of number states on a ring."""

from .core import LatticeConfig, RngStream, coupling, validate

__version__ = "0.1.0"

__all__ = ["LatticeConfig", "RngStream", "coupling", "validate", "__version__"]
