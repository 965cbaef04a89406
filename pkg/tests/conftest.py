import os

# several numba workers even on a single-core host, for thread-count determinism checks
os.environ.setdefault("NUMBA_NUM_THREADS", "4")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def zscore(est, ref, se):
    """Standardized difference of an estimate from a reference value."""
    return abs(est - ref) / se


@pytest.fixture(scope="session")
def backend():
    from probitpanel import BACKEND
    return BACKEND


def pytest_report_header(config):
    from probitpanel import BACKEND
    return f"probitpanel backend: {BACKEND} (PROBITPANEL_BACKEND={os.environ.get('PROBITPANEL_BACKEND', '')})"
