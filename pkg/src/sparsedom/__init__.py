"""Numerical checks for sparse domination of rough product-kernel operators
with matrix-twisted weights on dyadic grids."""

from .estimators import (
    FractionalMaximalTransformer,
    RoughOperatorTransformer,
    SparseDominationEstimator,
    WeightClassEstimator,
)
from .experiments import ConfigError, ExperimentConfig, ReportRow, emit_report, parse_config, read_report
from .geometry import Cube, DyadicLattice, LinearMap, triple_lattice_check, make_shifted_lattices
from .grid import Grid, GridFunction, Weight, pullback
from .operators import KernelSpec, OperatorSpec, apply_T, composed_maximal, fractional_maximal
from .scenarios import SCENARIOS, default_config, run_scenario
from .sparse import DominationCertificate, SparseBuildParams, build_sparse_domination
from .weights import ExponentSet, apq_constant, matrix_apq_constant

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Cube",
    "DominationCertificate",
    "DyadicLattice",
    "ExperimentConfig",
    "ExponentSet",
    "FractionalMaximalTransformer",
    "Grid",
    "GridFunction",
    "KernelSpec",
    "LinearMap",
    "OperatorSpec",
    "ReportRow",
    "RoughOperatorTransformer",
    "SCENARIOS",
    "SparseBuildParams",
    "SparseDominationEstimator",
    "Weight",
    "WeightClassEstimator",
    "apply_T",
    "apq_constant",
    "build_sparse_domination",
    "composed_maximal",
    "default_config",
    "emit_report",
    "fractional_maximal",
    "triple_lattice_check",
    "make_shifted_lattices",
    "matrix_apq_constant",
    "parse_config",
    "pullback",
    "read_report",
    "run_scenario",
]
