import numpy as np
import pytest

from uvbody import synth_model


@pytest.fixture(scope="session")
def model1():
    """Small synthetic body, fast enough for most unit tests."""
    return synth_model(0, 1)


@pytest.fixture(scope="session")
def model2():
    """The acceptance-resolution synthetic body."""
    return synth_model(0, 2)


def random_pose(rng: np.random.Generator, k: int, max_angle: float = 0.4) -> np.ndarray:
    axes = rng.standard_normal((k, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    return axes * rng.uniform(0.0, max_angle, size=(k, 1))
