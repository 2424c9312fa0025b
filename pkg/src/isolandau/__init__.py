"""Structure-preserving simulator for the isotropic Landau equation."""

from .coulomb import CoulombOperator
from .diagnostics import AUDIT_NAMES, DiagnosticsEngine
from .errors import (
    ConfigError,
    CorruptSnapshot,
    CubeTooSmall,
    EntropyViolation,
    ExponentOverflow,
    GridMismatchError,
    GridTooLarge,
    IsolandauError,
    NonConvergence,
    ZeroMassError,
)
from .grid import Grid3, ScalarField, VectorField
from .regularity import MoserParams, PoincareParams, eps_poincare_test, moser_sequence, small_p_ratio
from .runner import oracle, resume, run, verify
from .scheme import SchemeParams, implicit_step, initial_state

__version__ = "0.1.0"

__all__ = [
    "AUDIT_NAMES",
    "ConfigError",
    "CorruptSnapshot",
    "CoulombOperator",
    "CubeTooSmall",
    "DiagnosticsEngine",
    "EntropyViolation",
    "ExponentOverflow",
    "Grid3",
    "GridMismatchError",
    "GridTooLarge",
    "IsolandauError",
    "MoserParams",
    "NonConvergence",
    "PoincareParams",
    "ScalarField",
    "SchemeParams",
    "VectorField",
    "ZeroMassError",
    "eps_poincare_test",
    "implicit_step",
    "initial_state",
    "moser_sequence",
    "oracle",
    "resume",
    "run",
    "small_p_ratio",
    "verify",
]
