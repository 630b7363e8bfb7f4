import numpy as np
import pytest
from hypothesis import settings

from csrsos.powersys import build_study, fixture_path, load_model, transform_to_polynomial

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def study():
    return build_study(load_model(fixture_path("three_machine.txt")))


@pytest.fixture(scope="session")
def psys(study):
    return transform_to_polynomial(study)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
