import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_snapshots():
    """Every coupling iteration of a short FOM-FOM tube run (t in [0, 4])."""
    from romfsi.harness.config import ExperimentConfig
    from romfsi.harness.experiment import generate_training_data

    return generate_training_data(ExperimentConfig(t_end=4.0))


@pytest.fixture(scope="session")
def tiny_roms(tiny_snapshots):
    from romfsi import rom

    F, Ft, U, meta, f0 = tiny_snapshots
    return rom.offline_train(F, Ft, U, meta, rom.RomConfig(p=100, Z=20), initial_force=f0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
