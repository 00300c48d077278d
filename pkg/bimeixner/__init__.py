"""Randomized Levy-Meixner processes, their stitching into bi-Meixner
quadratic harnesses, and the numerical checks that verify it."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ArgumentError,
    BiMeixnerError,
    DomainError,
    GridError,
    IntegrationError,
    NumericalError,
    SingularDesignError,
    TabulationError,
)
from .nef_family import FamilyKind, FamilySpec  # noqa: E402
from .process_sim import PathBatch, StitchConfig, TimeGrid, simulate_y, simulate_z  # noqa: E402
from .qh_verify import QHParams, qh_params_from_theorem  # noqa: E402
from .randomization import RandomizationLaw  # noqa: E402

__all__ = [
    "ArgumentError",
    "BiMeixnerError",
    "DomainError",
    "FamilyKind",
    "FamilySpec",
    "GridError",
    "IntegrationError",
    "NumericalError",
    "PathBatch",
    "QHParams",
    "RandomizationLaw",
    "SingularDesignError",
    "StitchConfig",
    "TabulationError",
    "TimeGrid",
    "qh_params_from_theorem",
    "simulate_y",
    "simulate_z",
]
