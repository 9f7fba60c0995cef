"""Shared fixtures: small deterministic shapes and matching problems."""

import numpy as np
import pytest

from sigma import synthetic
from sigma.meshes import PointCloud, Shape

# constraint: hypothesis deadlines interact badly with scipy's first-call
# caching, so property tests get a seeded module-level profile instead
from hypothesis import HealthCheck, settings

settings.register_profile(
    "sigma",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("sigma")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ico1():
    return synthetic.icosphere(1)


@pytest.fixture(scope="session")
def ico2():
    return synthetic.icosphere(2)


@pytest.fixture(scope="session")
def grid():
    return synthetic.grid_mesh(6, 6)


def make_identity_pair(n_keypoints=5, subdivisions=1):
    """Two Shape views of the same icosphere with shared FPS keypoints."""
    mesh = synthetic.icosphere(subdivisions)
    keypoints = synthetic.fps_keypoints(mesh, n_keypoints)
    return Shape(mesh, keypoints, label="x"), Shape(mesh, keypoints, label="y")


def make_warped_pair(seed=0, n_keypoints=5, subdivisions=1, warp_rate=0.1,
                     scale=1.0, reflect=False):
    """Near-isometric pair: twist warp plus a random rigid motion and scale."""
    rng = np.random.default_rng(seed)
    mesh_x = synthetic.icosphere(subdivisions)
    keypoints = synthetic.fps_keypoints(mesh_x, n_keypoints)
    mesh_y = synthetic.twist_warp(mesh_x, rate=warp_rate)
    mesh_y = synthetic.rigid_motion(
        mesh_y, synthetic.random_rotation(rng, reflect=reflect),
        rng.normal(size=3))
    if scale != 1.0:
        mesh_y = synthetic.scaled(mesh_y, scale)
    return Shape(mesh_x, keypoints, label="x"), Shape(mesh_y, keypoints, label="y")


def make_cloud(n=40, seed=0, knn=6):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    return PointCloud(pts, knn=knn)


def random_spd_quadratic(rng, n, rank=None):
    """Random PSD matrix of the given rank, for oracle comparisons."""
    rank = n if rank is None else rank
    basis = rng.normal(size=(n, rank))
    return basis @ basis.T
