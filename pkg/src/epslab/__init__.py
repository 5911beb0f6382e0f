"""Numerical laboratory for epsilon-approximability of harmonic-type functions
above Lipschitz graphs: stopping-time approximants, Carleson measures, cone
operators and an exact good-lambda iteration."""

from .geometry import ConeSpec, CurvedCube, LipschitzGraph, RootCube
from .fields import ScalarField, builtin_field, classify
from .approximant import build_approximant, build_forest
from .config import ExperimentConfig, parse_config

__all__ = ["ConeSpec", "CurvedCube", "LipschitzGraph", "RootCube", "ScalarField",
           "builtin_field", "classify", "build_forest", "build_approximant",
           "ExperimentConfig", "parse_config"]
__version__ = "0.1.0"
