import os
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# seconds spent building the shared model fixtures, charged to acceptance runtimes
FIXTURE_SECONDS = {}


@pytest.fixture(scope="session")
def trained_model():
    """The train-toy model with default settings (about 35 s, built once)."""
    from cleavetrack.config import PipelineConfig
    from cleavetrack.pipeline import train_model

    t0 = time.perf_counter()
    model, curve = train_model(PipelineConfig())
    FIXTURE_SECONDS["train"] = time.perf_counter() - t0
    return model, curve


@pytest.fixture(scope="session")
def calibrated(trained_model):
    from cleavetrack.cleave import calibrate_split_thresh

    model, _ = trained_model
    t0 = time.perf_counter()
    th = calibrate_split_thresh(model, seed=1000)
    FIXTURE_SECONDS["calibrate"] = time.perf_counter() - t0
    return th


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
