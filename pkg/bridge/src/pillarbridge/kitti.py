"""Just enough KITTI plumbing for the bridge: velodyne/calib readers, the
LiDAR-to-camera chain, and the 16-field result line writer. Deliberately
self-contained so the bridge talks to the attack toolkit only through files.
"""

import math
import os
import struct

import numpy as np


class BridgeFormatError(ValueError):
    pass


def read_velodyne(path):
    """(N, 4) float32 x, y, z, intensity."""
    data = open(path, "rb").read()
    if len(data) % 16 != 0:
        raise BridgeFormatError(f"{path}: length {len(data)} not a multiple of 16")
    return np.frombuffer(data, dtype="<f4").reshape(-1, 4).copy()


class Calib:
    """P2, R0_rect, Tr_velo_to_cam and the derived transforms."""

    def __init__(self, p2, r0, tr):
        self.p2 = np.asarray(p2, dtype=np.float64).reshape(3, 4)
        self.r0 = np.asarray(r0, dtype=np.float64).reshape(3, 3)
        self.tr = np.asarray(tr, dtype=np.float64).reshape(3, 4)
        self._rot = self.r0 @ self.tr[:, :3]

    @classmethod
    def read(cls, path):
        needed = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}
        found = {}
        with open(path) as f:
            for line in f:
                if ":" not in line:
                    continue
                key, rest = line.split(":", 1)
                key = key.strip()
                if key in needed:
                    vals = [float(t) for t in rest.split()]
                    if len(vals) != needed[key]:
                        raise BridgeFormatError(f"{path}: {key} has {len(vals)} values")
                    found[key] = np.array(vals)
        missing = set(needed) - set(found)
        if missing:
            raise BridgeFormatError(f"{path}: missing {sorted(missing)}")
        return cls(found["P2"], found["R0_rect"], found["Tr_velo_to_cam"])

    def lidar_to_rect(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        cam = pts @ self.tr[:, :3].T + self.tr[:, 3]
        return cam @ self.r0.T

    def rect_to_image(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        y = pts @ self.p2[:, :3].T + self.p2[:, 3]
        with np.errstate(divide="ignore", invalid="ignore"):
            return y[:, 0] / y[:, 2], y[:, 1] / y[:, 2], y[:, 2]

    def yaw_to_rotation_y(self, yaw):
        d = self._rot @ np.array([math.cos(yaw), math.sin(yaw), 0.0])
        return math.atan2(-d[2], d[0])


def rotation_y_corners(location_rect, dims, ry):
    """8 corners of a KITTI box (bottom-center location, dims h/w/l)."""
    h, w, l = dims
    x = np.array([0.5, 0.5, -0.5, -0.5, 0.5, 0.5, -0.5, -0.5]) * l
    y = np.array([0, 0, 0, 0, -1, -1, -1, -1]) * h
    z = np.array([0.5, -0.5, -0.5, 0.5, 0.5, -0.5, -0.5, 0.5]) * w
    c, s = math.cos(ry), math.sin(ry)
    rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return np.stack([x, y, z], axis=1) @ rot.T + np.asarray(location_rect)


def png_size(path):
    """(width, height) from the PNG IHDR chunk."""
    with open(path, "rb") as f:
        header = f.read(24)
    if len(header) < 24 or header[:8] != b"\x89PNG\r\n\x1a\n":
        raise BridgeFormatError(f"{path}: not a PNG file")
    width, height = struct.unpack(">II", header[16:24])
    return width, height


def scene_ids(input_root):
    velo = os.path.join(input_root, "velodyne")
    return sorted(n[:-4] for n in os.listdir(velo) if n.endswith(".bin"))


def scene_paths(input_root, scene_id):
    return {
        "velodyne": os.path.join(input_root, "velodyne", scene_id + ".bin"),
        "calib": os.path.join(input_root, "calib", scene_id + ".txt"),
        "image": os.path.join(input_root, "image_2", scene_id + ".png"),
    }


def format_result_line(class_name, alpha, bbox, dims, location, ry, score):
    h, w, l = dims
    x, y, z = location
    left, top, right, bottom = bbox
    return (f"{class_name} 0.00 0 {alpha:.2f} "
            f"{left:.2f} {top:.2f} {right:.2f} {bottom:.2f} "
            f"{h:.2f} {w:.2f} {l:.2f} {x:.2f} {y:.2f} {z:.2f} {ry:.2f} {score:.2f}")
