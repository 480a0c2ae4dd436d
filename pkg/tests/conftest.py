"""Shared fixtures: desk-scale configurations and reusable systems."""

from dataclasses import replace

import numpy as np
import pytest

from klcoupling import ProblemConfig, ReactorSystem


@pytest.fixture(scope="session")
def desk_cfg() -> ProblemConfig:
    """Benchmark physics at a small stochastic dimension (fast runs)."""
    return replace(ProblemConfig(), field_terms=3, degree=2, quadrature_level=3)


@pytest.fixture(scope="session")
def desk_system(desk_cfg) -> ReactorSystem:
    return ReactorSystem(desk_cfg)


@pytest.fixture(scope="session")
def benchmark_system() -> ReactorSystem:
    """Full benchmark configuration; building it is cheap, runs are not."""
    return ReactorSystem(ProblemConfig())


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20260810)
