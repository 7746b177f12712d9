import numpy as np
import pytest

from phantomkit import kitti_io, synthetic

IDENTITY_CALIB_TEXT = """\
P2: 1 0 0 0 0 1 0 0 0 0 1 0
R0_rect: 1 0 0 0 1 0 0 0 1
Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0
"""

# principal point (600, 180), focal 700 px; used by the hand-computed cases
PINHOLE_CALIB_TEXT = """\
P2: 700 0 600 0 0 700 180 0 0 0 1 0
R0_rect: 1 0 0 0 1 0 0 0 1
Tr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0
"""


@pytest.fixture(scope="session")
def kitti_calib():
    return synthetic.default_calibration()


@pytest.fixture(scope="session")
def identity_calib():
    return kitti_io.parse_calibration(IDENTITY_CALIB_TEXT)


@pytest.fixture(scope="session")
def pinhole_calib():
    return kitti_io.parse_calibration(PINHOLE_CALIB_TEXT)


@pytest.fixture(scope="session")
def car_scene():
    """One scene with a dense car at a known pose."""
    return synthetic.make_scene(
        "000007", seed=7,
        objects=[synthetic.ObjectSpec("Car", x=14.0, y=1.5, yaw=0.4, n_points=3000)])


@pytest.fixture(scope="session")
def ped_scene():
    return synthetic.make_scene(
        "000011", seed=11,
        objects=[synthetic.ObjectSpec("Pedestrian", x=12.0, y=-2.0, yaw=1.1, n_points=1400)])


@pytest.fixture(scope="session")
def empty_scene():
    """Flat ground only."""
    return synthetic.make_scene("000003", seed=3, objects=[])


def random_cloud(rng, n, x=(-50, 70), y=(-40, 40), z=(-3, 6)):
    pts = np.empty((n, 4), dtype=np.float32)
    pts[:, 0] = rng.uniform(*x, n)
    pts[:, 1] = rng.uniform(*y, n)
    pts[:, 2] = rng.uniform(*z, n)
    pts[:, 3] = rng.uniform(0, 1, n)
    return kitti_io.PointCloud(pts)
