import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import shellsde as s  # noqa: E402

settings.register_profile("suite", max_examples=25, deadline=None)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def novikov():
    return s.build_novikov(2.0, 1.0)


@pytest.fixture(scope="session")
def goy():
    return s.build_goy(1.0, -1.5, 0.5, 2.0, 1.0)


@pytest.fixture(scope="session")
def sabra():
    return s.build_sabra(1.0, -1.25, 0.25, 2.0, 1.0, 0.125)
