"""Shared fixtures: fields, clouds, and the committed reference weight file."""

from pathlib import Path

import numpy as np
import pytest

from pcrestore.fields import load_mlp_field
from pcrestore.fixtures import fixture_field, reference_cloud

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def sphere_field():
    return fixture_field("sphere")


@pytest.fixture(scope="session")
def torus_field():
    return fixture_field("torus")


@pytest.fixture(scope="session")
def tiny_mlp_path():
    return DATA_DIR / "tiny_mlp.bin"


@pytest.fixture(scope="session")
def tiny_mlp(tiny_mlp_path):
    return load_mlp_field(tiny_mlp_path)


@pytest.fixture
def sphere_cloud():
    """1024 reference samples of the sphere fixture iso-surface, fixed seed."""
    return reference_cloud("sphere", 1024, rng=np.random.default_rng(0))


@pytest.fixture
def small_sphere_cloud():
    return reference_cloud("sphere", 128, rng=np.random.default_rng(5))
