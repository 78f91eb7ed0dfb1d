import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dynap2p.instances import random_instance, two_prosumer
from dynap2p.oracle import solve_reference
from dynap2p.scenario import load_instance, scenario_path

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def six():
    return load_instance(scenario_path("six_prosumer"))


@pytest.fixture(scope="session")
def six_oracle(six):
    return solve_reference(six)


@pytest.fixture(scope="session")
def two():
    return two_prosumer()


@pytest.fixture(scope="session")
def small_instances():
    rng = np.random.default_rng(20240601)
    return [random_instance(rng, m=int(rng.integers(2, 5)), T=int(rng.integers(1, 3)),
                            extra_edges=int(rng.integers(0, 2)))
            for _ in range(50)]
