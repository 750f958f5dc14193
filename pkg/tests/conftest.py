import numpy as np
import pytest

from tractor_ems.cycles import CycleSpec, DutyCycle, generate_duty_cycle
from tractor_ems.powertrain import PowertrainConfig


@pytest.fixture
def cfg():
    return PowertrainConfig()


@pytest.fixture(scope="session")
def desk_cycle():
    return generate_duty_cycle(CycleSpec(), np.random.default_rng(0))


@pytest.fixture
def flat_cycle():
    return DutyCycle(dt=1.0, demand=(2.16e5,) * 5)
