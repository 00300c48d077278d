"""Shared test fixtures and configuration."""

import sys
from pathlib import Path

import numpy as np
import pytest


# Add project root to Python path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from bimeixner import nef_family, process_sim, randomization  # noqa: E402
from bimeixner.nef_family import FamilyKind, FamilySpec  # noqa: E402


# Times used by the default pairs, triples, continuity and posterior checks
Z_TIMES = (0.2, 0.25, 0.3, 0.5, 0.6, 0.7, 0.75, 0.9, 0.99, 1.0, 1.5, 2.0, 3.0, 4.0)
Z_PATHS = 200_000


@pytest.fixture
def wiener():
    return FamilySpec(FamilyKind.WIENER)


@pytest.fixture
def poisson():
    return FamilySpec(FamilyKind.POISSON)


@pytest.fixture
def gamma_family():
    return FamilySpec(FamilyKind.GAMMA)


@pytest.fixture
def negative_binomial():
    return FamilySpec(FamilyKind.NEGATIVE_BINOMIAL, q=0.5)


@pytest.fixture
def secant():
    return FamilySpec(FamilyKind.HYPERBOLIC_SECANT)


@pytest.fixture
def all_families():
    """One family each, negative binomial with q = 1/2."""
    return [
        FamilySpec(FamilyKind.WIENER),
        FamilySpec(FamilyKind.POISSON),
        FamilySpec(FamilyKind.GAMMA),
        FamilySpec(FamilyKind.NEGATIVE_BINOMIAL, q=0.5),
        FamilySpec(FamilyKind.HYPERBOLIC_SECANT),
    ]


@pytest.fixture
def safe_params():
    """(p, r) per family with at least eight moments of kappa'(Theta)."""
    return {
        FamilyKind.WIENER: (0.5, 1.0),
        FamilyKind.POISSON: (2.0, 1.0),
        FamilyKind.GAMMA: (3.0, 10.0),
        FamilyKind.NEGATIVE_BINOMIAL: (2.0, 10.0),
        FamilyKind.HYPERBOLIC_SECANT: (1.0, 5.0),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def z_grid():
    return process_sim.TimeGrid(Z_TIMES)


@pytest.fixture(scope="session")
def wiener_stitch():
    return process_sim.StitchConfig.create(FamilySpec(FamilyKind.WIENER), 0.5, 1.0)


@pytest.fixture(scope="session")
def gamma_stitch():
    return process_sim.StitchConfig.create(FamilySpec(FamilyKind.GAMMA), 3.0, 10.0)


@pytest.fixture(scope="session")
def wiener_z_batch(wiener_stitch, z_grid):
    """Stitched Wiener-family paths shared by the verification tests."""
    return process_sim.simulate_z(wiener_stitch, z_grid, Z_PATHS, seed=11)


@pytest.fixture(scope="session")
def gamma_z_batch(gamma_stitch, z_grid):
    """Stitched gamma-family paths shared by the verification tests."""
    return process_sim.simulate_z(gamma_stitch, z_grid, Z_PATHS, seed=12)


@pytest.fixture(scope="session")
def poisson_z_batch(z_grid):
    """Stitched Poisson-family paths, p = 2 and r = 1."""
    stitch = process_sim.StitchConfig.create(FamilySpec(FamilyKind.POISSON), 2.0, 1.0)
    return process_sim.simulate_z(stitch, z_grid, Z_PATHS, seed=15)


@pytest.fixture(scope="session")
def negative_binomial_z_batch(z_grid):
    """Stitched negative binomial paths, q = 1/2, p = 2 and r = 10."""
    family = FamilySpec(FamilyKind.NEGATIVE_BINOMIAL, q=0.5)
    stitch = process_sim.StitchConfig.create(family, 2.0, 10.0)
    return process_sim.simulate_z(stitch, z_grid, Z_PATHS, seed=16)


@pytest.fixture(scope="session")
def secant_z_batch(z_grid):
    """Stitched hyperbolic secant paths, p = 1 and r = 5."""
    stitch = process_sim.StitchConfig.create(FamilySpec(FamilyKind.HYPERBOLIC_SECANT), 1.0, 5.0)
    return process_sim.simulate_z(stitch, z_grid, Z_PATHS, seed=17)


@pytest.fixture(scope="session")
def poisson_y_batch():
    """Randomized Poisson-family paths, p = 2 and r = 1."""
    grid = process_sim.TimeGrid((0.5, 1.0, 2.0, 3.0))
    return process_sim.simulate_y(FamilySpec(FamilyKind.POISSON), 2.0, 1.0, grid, 100_000, seed=13)


@pytest.fixture(scope="session")
def wiener_y_batch():
    """Randomized Wiener-family paths, p = 0.5 and r = 1."""
    grid = process_sim.TimeGrid((0.5, 1.0, 2.0, 3.0))
    return process_sim.simulate_y(FamilySpec(FamilyKind.WIENER), 0.5, 1.0, grid, 100_000, seed=14)


@pytest.fixture
def clear_table_caches():
    """Empty the module-level inverse-CDF caches around a test."""
    nef_family._meixner_tables.clear()
    randomization._theta_tables.clear()
    yield
    nef_family._meixner_tables.clear()
    randomization._theta_tables.clear()
