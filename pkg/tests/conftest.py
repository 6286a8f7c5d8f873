import numpy as np
import pytest

from sgcvq import EngineConfig, validate_config


@pytest.fixture
def small_config():
    return validate_config(EngineConfig(
        codebook_size=8, code_dim=8, num_levels=4, num_classes=4, seed=7))


@pytest.fixture
def default_config():
    return validate_config(EngineConfig())


def oracle_multi_level_distance(e, c, beta, split):
    """Reference distance: per-slice norms computed on 1-D slices."""
    diff = np.asarray(e, dtype=np.float64) - np.asarray(c, dtype=np.float64)
    low = np.sqrt((diff[split:] ** 2).sum())
    high = np.sqrt((diff[:split] ** 2).sum())
    return low + beta * high
