import hypothesis
import numpy as np
import pytest

from bladepde.grid import ImageGrid

hypothesis.settings.register_profile(
    "default", max_examples=25, deadline=None,
    suppress_health_check=[hypothesis.HealthCheck.too_slow])
hypothesis.settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def random_image(rng):
    return ImageGrid(rng.uniform(0.0, 255.0, (16, 16)))
