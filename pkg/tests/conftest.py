"""Test fixtures for sturmflow package."""

import math
import os
import shutil
import tempfile

import numpy as np
import pytest

from sturmflow.connections import ConnectSettings, assemble_connection, shoot_unstable
from sturmflow.critical import find_equilibrium
from sturmflow.grid import Field, Grid, chafee_infante
from sturmflow.semiflow import FlowConfig


@pytest.fixture
def temp_dir():
    """Create a temporary directory for testing."""
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    shutil.rmtree(temp_dir)


@pytest.fixture
def output_dir(temp_dir):
    """Create an output directory for test exports."""
    output_dir = os.path.join(temp_dir, "output")
    os.makedirs(output_dir, exist_ok=True)
    return output_dir


@pytest.fixture
def grid():
    """The 32-point grid used by the standard scenarios."""
    return Grid(32)


@pytest.fixture(scope="session")
def ci_half():
    """f = 0.5u - u^3."""
    return chafee_infante(0.5)


@pytest.fixture(scope="session")
def ci_half_equilibria(ci_half):
    """Origin (index 1) and the two constants +-sqrt(0.5) (index 0) on n = 32."""
    g = Grid(32)
    return [
        find_equilibrium(Field.constant(g, value), ci_half, label=label)
        for value, label in ((0.0, "e0"), (math.sqrt(0.5), "e1"), (-math.sqrt(0.5), "e2"))
    ]


@pytest.fixture(scope="session")
def ci_half_connection(ci_half, ci_half_equilibria):
    """The homogeneous heteroclinic 0 -> sqrt(0.5)."""
    origin = ci_half_equilibria[0]
    basis = origin.spectrum.unstable_basis()
    direction = basis[:, 0] * np.sign(np.sum(basis[:, 0]))
    settings = ConnectSettings()
    cfg = FlowConfig(dt=1e-3, save_every=10)
    traj = shoot_unstable(
        origin,
        direction,
        settings.eps,
        ci_half,
        settings.t_max,
        cfg,
        ci_half_equilibria,
    )
    return assemble_connection(origin, traj, ci_half_equilibria, settings)
