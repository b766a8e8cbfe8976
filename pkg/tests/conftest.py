"""Test fixtures for contractlab tests."""

import math
import shutil
import tempfile
from pathlib import Path

import pytest
import yaml

from contractlab.models import CurvatureProfile, build_model


@pytest.fixture
def temp_dir():
    """Create a temporary directory for testing."""
    tmpdir = tempfile.mkdtemp()
    yield Path(tmpdir)
    shutil.rmtree(tmpdir, ignore_errors=True)


@pytest.fixture
def ou_profile():
    """Profile of the 1D OU process with a = 1."""
    return CurvatureProfile.constant(0.0, 1.0, 0.0, 0.5, 1.0)


@pytest.fixture
def unit_profile():
    """Constant k1 = 1 with k2 = 2."""
    return CurvatureProfile.constant(1.0, 2.0, 0.0, 1.0, 1.0)


@pytest.fixture
def double_well_profile():
    """Cubic profile dominating the double-well index."""
    return CurvatureProfile.linear(1.0, 0.25, 2.0, 2.0 * math.sqrt(2.0), 0.125)


@pytest.fixture
def ou_model():
    return build_model("ou", a=1.0)


@pytest.fixture
def double_well_model():
    return build_model("double-well")


@pytest.fixture
def forced_ou_model():
    return build_model("forced-ou", a=1.0, amplitude=1.0)


@pytest.fixture
def write_config(temp_dir):
    """Write a YAML experiment file into temp_dir and return its path."""

    def _write(data: dict, name: str = "experiment.yaml") -> Path:
        data = dict(data)
        data.setdefault("output", {"directory": str(temp_dir / "out")})
        path = temp_dir / name
        path.write_text(yaml.safe_dump(data, sort_keys=False))
        return path

    return _write


@pytest.fixture
def psi_config():
    """Small psi-table experiment for the unit profile."""
    return {
        "kind": "psi-table",
        "profile": {"k1": {"family": "constant", "value": 1}, "k2": 2, "theta": 0, "r0": 1, "k3": 1},
        "run": {"seed": 0, "p": [2]},
    }


@pytest.fixture
def ou_contract_config():
    """OU contraction experiment at reduced scale."""
    return {
        "kind": "contract-check",
        "model": {"family": "ou", "a": 1},
        "profile": {"k1": {"family": "constant", "value": 0}, "k2": 1, "theta": 0, "r0": 0.5, "k3": 1},
        "run": {"seed": 1, "p": [2], "times": [0.5, 1], "paths": 400, "dt": 0.01, "bootstrap": 0},
    }
