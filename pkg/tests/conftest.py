import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from handover_sim.synth import build_scene, demo_specs, fixture_specs

settings.register_profile(
    "repo",
    derandomize=True,
    deadline=None,
    max_examples=100,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def demo_scenes():
    return {spec.scenario_id: build_scene(spec) for spec in demo_specs()}


@pytest.fixture(scope="session")
def fixture_scenes():
    return {spec.scenario_id: build_scene(spec) for spec in fixture_specs()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
