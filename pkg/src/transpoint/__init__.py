"""Translated points of maps on unit tangent bundles via geodesic chords."""

from .errors import (ConfigError, ConvergenceError, CutLocusError, IntegratorError,
                     NotADiffeomorphismError, TranslatedPointError)
from .geometry import Ellipsoid, FlatTorus, RoundSphere, make_manifold
from .records import ShootingState, TranslatedPointRecord
from .smoothmap import make_homotopy, make_map
from .solver import newton_solve, window_scan

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConvergenceError", "CutLocusError", "IntegratorError", "NotADiffeomorphismError",
    "TranslatedPointError", "Ellipsoid", "FlatTorus", "RoundSphere", "make_manifold", "ShootingState",
    "TranslatedPointRecord", "make_homotopy", "make_map", "newton_solve", "window_scan",
]
