import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gradeseg.dataset import PhantomConfig, generate_cohort  # noqa: E402


@pytest.fixture(scope="session")
def tiny_phantom():
    return PhantomConfig(image_size=16, edema_radius_range=(3.5, 6.0), core_radius_range=(1.5, 3.0), seed=11)


@pytest.fixture(scope="session")
def tiny_cohort(tiny_phantom):
    return generate_cohort(tiny_phantom, n_hgg=10, n_lgg=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
