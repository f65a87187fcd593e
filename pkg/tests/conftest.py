import numpy as np
import pytest

from msifield.geometry import SphereSchedule
from msifield.msi import init_learnable, sphere_sweep
from msifield.scene import default_rig, default_room_scene, generate_bundle


@pytest.fixture(scope="session")
def room_scene():
    return default_room_scene(seed=3)


@pytest.fixture(scope="session")
def rig():
    return default_rig(image_size=160)


@pytest.fixture(scope="session")
def bundle(room_scene, rig):
    return generate_bundle(room_scene, rig, pano_width=128, pano_height=64)


@pytest.fixture(scope="session")
def schedule():
    return SphereSchedule(n_layers=16, d_inv_max=2.0)


@pytest.fixture(scope="session")
def swept_grid(bundle, schedule):
    grid = sphere_sweep(bundle.images, bundle.cameras, schedule, 64, 128)
    init_learnable(grid)
    return grid


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
