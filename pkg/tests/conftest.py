import numpy as np
import pytest

from splift import SyntheticSpec, make_two_cluster_scene
from splift.synthetic import make_oracle_scene


@pytest.fixture(scope="session")
def oracle3g():
    """Tiny 3-Gaussian, 2-camera, 4x4 scene used across oracle tests."""
    return make_oracle_scene(seed=33, n_gaussians=3, n_views=2, width=4, height=4)


@pytest.fixture(scope="session")
def two_cluster_small():
    """Desk-scale two-cluster scene shared by segmentation-level tests."""
    spec = SyntheticSpec(
        n_gaussians=300, n_views=6, width=64, height=48,
        noise=0.05, seed=11,
    )
    return make_two_cluster_scene(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
