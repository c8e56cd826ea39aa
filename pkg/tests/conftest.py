import numpy as np
import pytest

from trajsim.synth import example_dataset

EXAMPLE_CSV = (
    "traj_id,seq,lon,lat\n"
    "0,0,0.0,0.0\n0,1,0.0,1.0\n0,2,0.0,3.0\n"
    "1,0,2.0,0.0\n1,1,0.0,1.0\n1,2,2.0,3.0\n"
    "2,0,3.0,0.0\n2,1,3.0,1.0\n2,2,4.0,3.0\n2,3,5.0,3.0\n"
)


@pytest.fixture
def example_ds():
    return example_dataset()


@pytest.fixture
def example_csv(tmp_path):
    path = tmp_path / "example.csv"
    path.write_text(EXAMPLE_CSV)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
