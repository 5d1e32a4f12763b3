import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kinseg.config import ExperimentConfig
from kinseg.synth import generate

settings.register_profile("kinseg", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("kinseg")


@pytest.fixture(scope="session")
def exp():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def short_dataset(exp):
    """Six frames of the standard scene, seed 1."""
    cfg = exp.with_overrides(["synth.length=6"])
    return generate(cfg.trajectory(1), cfg.noise(1), cfg.domain(), cfg.camera(), cfg.arms(),
                    cfg.bases_true(), **cfg.generator_kwargs())


@pytest.fixture(scope="session")
def scene(exp, short_dataset):
    return exp.scene(short_dataset.background)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
