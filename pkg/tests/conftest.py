import numpy as np
import pytest

from cfqa import FeatureTensor, Task


def make_tensor(values, task=Task.SYNTHETIC, feature_id="t"):
    return FeatureTensor(id=feature_id, task=task, values=np.asarray(values, dtype=np.float32))


def random_tensor(rng, shape=(12, 16), scale=1.0, feature_id="t"):
    values = (rng.standard_normal(shape) * scale).astype(np.float32)
    return FeatureTensor(id=feature_id, task=Task.SYNTHETIC, values=values)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
