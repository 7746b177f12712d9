"""Deterministic, ML-free 3D detector used to close the attack loop at desk
scale: ground strip -> BEV grid clustering -> PCA box fit -> size gates ->
density score. It is an explicit surrogate for a learned detector, not an
imitation of one; a real model is reached through the bridge package.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import Box3D
from .kitti_io import Calibration, ObjectLabel, PointCloud


@dataclass(frozen=True)
class SizeGate:
    h: tuple
    w: tuple
    l: tuple

    def admits(self, dims):
        h, w, l = dims
        return (self.h[0] <= h <= self.h[1] and self.w[0] <= w <= self.w[1]
                and self.l[0] <= l <= self.l[1])


@dataclass(frozen=True)
class DetectorConfig:
    ground_tile: float = 2.0            # BEV tile edge for the ground minimum
    ground_height_offset: float = 0.25  # strip points this close to the tile floor
    cell_size: float = 0.4              # clustering occupancy cell edge
    min_cluster_points: int = 15
    size_gates: dict = field(default_factory=lambda: {
        "Car": SizeGate((1.2, 2.3), (1.3, 2.2), (3.0, 5.5)),
        "Pedestrian": SizeGate((1.2, 2.1), (0.3, 1.2), (0.3, 1.2)),
    })
    score_saturation: dict = field(default_factory=lambda: {
        "Car": 400, "Pedestrian": 120,
    })

    def __post_init__(self):
        if self.cell_size <= 0 or self.ground_tile <= 0:
            raise ValueError("cell_size and ground_tile must be positive")
        if self.min_cluster_points < 1:
            raise ValueError("min_cluster_points must be >= 1")

    def to_text(self):
        lines = [
            f"ground_tile = {self.ground_tile}",
            f"ground_height_offset = {self.ground_height_offset}",
            f"cell_size = {self.cell_size}",
            f"min_cluster_points = {self.min_cluster_points}",
        ]
        for cls, gate in sorted(self.size_gates.items()):
            key = cls.lower()
            lines.append(f"{key}_h = {gate.h[0]}:{gate.h[1]}")
            lines.append(f"{key}_w = {gate.w[0]}:{gate.w[1]}")
            lines.append(f"{key}_l = {gate.l[0]}:{gate.l[1]}")
            lines.append(f"{key}_score_saturation = {self.score_saturation[cls]}")
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_text(cls, text):
        kv = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()

        def band(key, default):
            if key not in kv:
                return default
            lo, hi = kv[key].split(":")
            return (float(lo), float(hi))

        defaults = DetectorConfig()
        gates = {}
        saturation = {}
        for class_name in ("Car", "Pedestrian"):
            key = class_name.lower()
            default_gate = defaults.size_gates[class_name]
            gates[class_name] = SizeGate(band(f"{key}_h", default_gate.h),
                                         band(f"{key}_w", default_gate.w),
                                         band(f"{key}_l", default_gate.l))
            saturation[class_name] = int(float(kv.get(
                f"{key}_score_saturation", defaults.score_saturation[class_name])))
        return cls(
            ground_tile=float(kv.get("ground_tile", 2.0)),
            ground_height_offset=float(kv.get("ground_height_offset", 0.25)),
            cell_size=float(kv.get("cell_size", 0.4)),
            min_cluster_points=int(float(kv.get("min_cluster_points", 15))),
            size_gates=gates,
            score_saturation=saturation,
        )


@dataclass(frozen=True)
class Detection:
    box: Box3D
    score: float
    point_count: int

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


def _tile_ids(coords, size):
    return np.floor(coords / size).astype(np.int64)


def remove_ground(pc: PointCloud, cfg: DetectorConfig):
    """Indices of points more than ground_height_offset above their 2 m BEV
    tile's minimum height."""
    if len(pc) == 0:
        return np.zeros(0, dtype=np.int64)
    xyz = pc.xyz.astype(np.float64)
    ti = _tile_ids(xyz[:, 0], cfg.ground_tile)
    tj = _tile_ids(xyz[:, 1], cfg.ground_tile)
    keys = np.stack([ti, tj], axis=1)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    floor = np.full(inverse.max() + 1, np.inf)
    np.minimum.at(floor, inverse, xyz[:, 2])
    keep = xyz[:, 2] > floor[inverse] + cfg.ground_height_offset
    return np.flatnonzero(keep)


class _DisjointSets:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def cluster_points(pc: PointCloud, indices, cfg: DetectorConfig):
    """Connected components over a BEV occupancy grid (8-neighborhood).
    Clusters below min_cluster_points are dropped; output is ordered by each
    cluster's minimum contained point index."""
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        return []
    xyz = pc.xyz[indices].astype(np.float64)
    ci = _tile_ids(xyz[:, 0], cfg.cell_size)
    cj = _tile_ids(xyz[:, 1], cfg.cell_size)
    cells = np.stack([ci, cj], axis=1)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    cell_of = {(int(a), int(b)): k for k, (a, b) in enumerate(uniq)}
    dsu = _DisjointSets(len(uniq))
    for k, (a, b) in enumerate(uniq):
        for da in (-1, 0, 1):
            for db in (-1, 0, 1):
                if da == 0 and db == 0:
                    continue
                nb = cell_of.get((int(a) + da, int(b) + db))
                if nb is not None:
                    dsu.union(k, nb)
    roots = np.array([dsu.find(k) for k in range(len(uniq))])
    point_root = roots[inverse]
    clusters = {}
    for local, root in enumerate(point_root):
        clusters.setdefault(root, []).append(indices[local])
    out = [np.array(sorted(members), dtype=np.int64) for members in clusters.values()]
    out = [c for c in out if len(c) >= cfg.min_cluster_points]
    out.sort(key=lambda c: int(c[0]))
    return out


def fit_box(pc: PointCloud, cluster, calib: Calibration) -> Box3D:
    """Yaw from the BEV principal axis, extents from the rotated bounds, bottom
    at the cluster's minimum height; returned in the rect camera frame."""
    cluster = np.asarray(cluster, dtype=np.int64)
    xyz = pc.xyz[cluster].astype(np.float64)
    bev = xyz[:, :2]
    centered = bev - bev.mean(axis=0)
    cov = centered.T @ centered / max(1, len(bev))
    eigvals, eigvecs = np.linalg.eigh(cov)
    # eigh sorts ascending; [:, 1] is the principal axis
    if not np.isfinite(eigvals).all() or eigvals[0] < 1e-12:
        yaw = 0.0  # degenerate (collinear or single-cell) spread
    else:
        major = eigvecs[:, 1]
        yaw = math.atan2(major[1], major[0])
    c, s = math.cos(yaw), math.sin(yaw)
    along = bev[:, 0] * c + bev[:, 1] * s
    across = -bev[:, 0] * s + bev[:, 1] * c
    l = max(1e-2, float(along.max() - along.min()))
    w = max(1e-2, float(across.max() - across.min()))
    h = max(1e-2, float(xyz[:, 2].max() - xyz[:, 2].min()))
    mid_along = (along.max() + along.min()) / 2.0
    mid_across = (across.max() + across.min()) / 2.0
    cx = mid_along * c - mid_across * s
    cy = mid_along * s + mid_across * c
    bottom = float(xyz[:, 2].min())
    center_rect = geometry.lidar_to_rect(np.array([cx, cy, bottom]), calib)
    ry = geometry.lidar_yaw_to_rotation_y(yaw, calib)
    return Box3D(tuple(center_rect), (h, w, l), ry)


def detect(pc: PointCloud, calib: Calibration, cfg: DetectorConfig = None):
    """Full surrogate pipeline; detections sorted by descending score.
    Reads nothing but the cloud, the calibration and the config."""
    cfg = cfg or DetectorConfig()
    non_ground = remove_ground(pc, cfg)
    clusters = cluster_points(pc, non_ground, cfg)
    detections = []
    for cluster in clusters:
        box = fit_box(pc, cluster, calib)
        for cls, gate in cfg.size_gates.items():
            if gate.admits(box.dims):
                score = min(1.0, len(cluster) / cfg.score_saturation[cls])
                detections.append(Detection(
                    box=Box3D(box.center_bottom, box.dims, box.rotation_y, cls),
                    score=score, point_count=int(len(cluster))))
                break
    detections.sort(key=lambda d: -d.score)
    return detections


def detection_to_label(det: Detection, calib: Calibration, image_size) -> ObjectLabel:
    """16-field result row for a detection (bbox from the projected box,
    clamped to a 1 px stub when the box misses the image)."""
    bbox = geometry.box_to_image_bbox(det.box, calib, image_size)
    bbox2d = (bbox.left, bbox.top, bbox.right, bbox.bottom) if bbox else (0.0, 0.0, 1.0, 1.0)
    x, _, z = det.box.center_bottom
    alpha = geometry.wrap_angle(det.box.rotation_y - math.atan2(x, z))
    return ObjectLabel(
        class_name=det.box.class_name, truncation=0.0, occlusion=0, alpha=alpha,
        bbox2d=bbox2d, dims=det.box.dims, location=det.box.center_bottom,
        rotation_y=det.box.rotation_y, score=max(0.0, min(1.0, det.score)))


def label_to_detection(label: ObjectLabel) -> Detection:
    """Inverse mapping for scoring externally produced result files."""
    box = Box3D(label.location, label.dims, label.rotation_y, label.class_name)
    return Detection(box=box, score=label.score if label.score is not None else 0.0,
                     point_count=0)
