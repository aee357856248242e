import numpy as np
import pytest

from pading.data import SyntheticSpec, make_synthetic_dataset, toy_semantic_space


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_space():
    return toy_semantic_space(n_seen=3, n_unseen=1, dim=4, n_groups=2, seed=5)


@pytest.fixture(scope="session")
def toy_space():
    return toy_semantic_space(seed=0)


@pytest.fixture(scope="session")
def toy_data(toy_space):
    return make_synthetic_dataset(toy_space, SyntheticSpec(seed=0, samples_per_class=40))
