"""Moment, sectional and Monte Carlo solvers for a coalescing evaporating spray
in a self-similar decelerating nozzle."""
from __future__ import annotations

__version__ = "0.1.0"
