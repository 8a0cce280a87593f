import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from roundsim.geometry import default_layout
from roundsim.kinematics import SimParams


@pytest.fixture(scope="session")
def layout():
    return default_layout()


@pytest.fixture(scope="session")
def params():
    return SimParams()
