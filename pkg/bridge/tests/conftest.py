import numpy as np
import pytest

from pillarbridge.kitti import Calib

# same representative KITTI chain the attack toolkit ships for procedural scenes
CALIB_TEXT = """\
P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
R0_rect: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
Tr_velo_to_cam: 7.533745e-03 -9.999714e-01 -6.166020e-04 -4.069766e-03 1.480249e-02 7.280733e-04 -9.998902e-01 -7.631618e-02 9.998621e-01 7.523790e-03 1.480755e-02 -2.717806e-01
"""


@pytest.fixture(scope="session")
def calib(tmp_path_factory):
    path = tmp_path_factory.mktemp("calib") / "c.txt"
    path.write_text(CALIB_TEXT)
    return Calib.read(path)


def random_native_detection(rng):
    cls = ["Car", "Pedestrian", "Cyclist"][int(rng.integers(3))]
    dims = {
        "Car": (1.55, 1.7, 4.1), "Pedestrian": (1.75, 0.7, 0.8),
        "Cyclist": (1.7, 0.6, 1.8),
    }[cls]
    jitter = rng.uniform(0.85, 1.15, 3)
    return {
        "class_name": cls,
        "location": (float(rng.uniform(8, 50)), float(rng.uniform(-8, 8)),
                     float(rng.uniform(-2.2, -1.4))),
        "dims": tuple(float(d * j) for d, j in zip(dims, jitter)),
        "yaw": float(rng.uniform(-np.pi, np.pi)),
        "score": float(rng.uniform(0.05, 1.0)),
    }
