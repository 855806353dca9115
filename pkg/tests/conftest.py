import numpy as np
import pytest

from reachguard.adjust import ReachContext
from reachguard.reachability import estimate_lipschitz
from reachguard.setops import interval_hull
from reachguard.simworld import collect_data, domain_probes, make_world


@pytest.fixture(scope="session")
def open_world():
    return make_world("open")


@pytest.fixture(scope="session")
def data(open_world):
    return collect_data(open_world, 600, seed=0)


@pytest.fixture(scope="session")
def bounds(data, open_world):
    return estimate_lipschitz(
        data,
        invariant_dims=(0, 1),
        probes=domain_probes(),
        noise_half_widths=interval_hull(open_world.noise).radius,
    )


@pytest.fixture(scope="session")
def ctx(data, open_world, bounds):
    return ReachContext(data, open_world.noise, bounds)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
