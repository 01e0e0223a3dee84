"""
Pytest configuration for krf-lab tests
"""

import os
import sys

import numpy as np
import pytest

# Run against the source checkout
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from krf_lab.toric_models import build_model  # noqa: E402


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow", action="store_true", default=False, help="run long acceptance tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def cp1_fs():
    """CP^1 with its Kähler-Einstein (Fubini-Study) reference on a small grid."""
    return build_model("cp1", L=8.0, grid=129, reference="fubini_study")


@pytest.fixture(scope="session")
def cp1_bergman():
    return build_model("cp1", L=8.0, grid=129, reference="bergman")


@pytest.fixture(scope="session")
def cp2_fs():
    return build_model("cp2", L=8.0, grid=65, reference="fubini_study")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
