import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ecmid", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ecmid"))

TS = 0.008


@pytest.fixture(scope="session")
def pulse_40s():
    from ecmid.signals import pulse_train

    return pulse_train(0.75, 10.0, 10.0, 40.0, TS)


@pytest.fixture(scope="session")
def pulse_400s():
    from ecmid.signals import pulse_train

    return pulse_train(0.75, 10.0, 10.0, 400.0, TS)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
