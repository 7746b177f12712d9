"""Procedural KITTI-format scenes for desk-scale runs and tests.

Generates flat-ground point clouds with box-shell objects, a simple camera
raster with blobs drawn at the objects' projected boxes, and labels/calibration
wired through the real projection chain, so every downstream stage sees
KITTI-consistent data without the real dataset.
"""

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from . import geometry, kitti_io
from .geometry import Box3D
from .kitti_io import ObjectLabel, PointCloud, Scene

# Representative KITTI left-color-camera chain (rounded file values).
DEFAULT_CALIB_TEXT = """\
P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
R0_rect: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
Tr_velo_to_cam: 7.533745e-03 -9.999714e-01 -6.166020e-04 -4.069766e-03 1.480249e-02 7.280733e-04 -9.998902e-01 -7.631618e-02 9.998621e-01 7.523790e-03 1.480755e-02 -2.717806e-01
"""

IMAGE_SIZE = (1242, 375)
GROUND_Z = -1.73  # sensor mounting height above road

CLASS_DIMS = {
    "Car": (1.52, 1.70, 4.20),
    "Pedestrian": (1.75, 0.70, 0.80),
}


def default_calibration():
    return kitti_io.parse_calibration(DEFAULT_CALIB_TEXT)


@dataclass
class ObjectSpec:
    """A planted object: LiDAR-frame footprint center, heading and point count."""

    class_name: str
    x: float
    y: float
    yaw: float = 0.0
    n_points: int = 2500
    dims: tuple = None


def _ground_points(rng, x_range=(2.0, 70.0), y_range=(-25.0, 25.0), spacing=0.45):
    xs = np.arange(x_range[0], x_range[1], spacing)
    ys = np.arange(y_range[0], y_range[1], spacing)
    gx, gy = np.meshgrid(xs, ys)
    n = gx.size
    pts = np.empty((n, 4))
    pts[:, 0] = gx.ravel() + rng.uniform(-0.1, 0.1, n)
    pts[:, 1] = gy.ravel() + rng.uniform(-0.1, 0.1, n)
    pts[:, 2] = GROUND_Z + rng.uniform(-0.015, 0.015, n)
    pts[:, 3] = rng.uniform(0.1, 0.5, n)
    return pts


def box_shell_points(dims, n_points, rng, z_floor=0.30):
    """Sample points on the visible shell of an upright box (LiDAR object frame:
    x along length, y along width, z up from the footprint). Points start
    z_floor above the ground so a ground-strip filter keeps the cluster whole."""
    h, w, l = dims
    z_lo = min(z_floor, 0.8 * h)
    areas = np.array([l * (h - z_lo), l * (h - z_lo), w * (h - z_lo), w * (h - z_lo), l * w])
    face = rng.choice(5, size=n_points, p=areas / areas.sum())
    u = rng.uniform(-0.5, 0.5, n_points)
    v = rng.uniform(0.0, 1.0, n_points)
    pts = np.empty((n_points, 4))
    z = z_lo + v * (h - z_lo)
    pts[:, 2] = np.where(face == 4, h, z)
    # faces 0/1 run along the length at y = +-w/2; 2/3 along the width at
    # x = +-l/2; face 4 is the top
    x = np.where(face < 2, u * l, np.where(face == 2, l / 2.0, -l / 2.0))
    y = np.where(face < 2, np.where(face == 0, w / 2.0, -w / 2.0), u * w)
    x = np.where(face == 4, u * l, x)
    y = np.where(face == 4, rng.uniform(-0.5, 0.5, n_points) * w, y)
    pts[:, 0] = x
    pts[:, 1] = y
    pts[:, 3] = rng.uniform(0.2, 0.9, n_points)
    jitter = rng.normal(0.0, 0.008, (n_points, 3))
    pts[:, :3] += jitter
    return pts


def _place_object(spec: ObjectSpec, rng):
    dims = spec.dims or CLASS_DIMS[spec.class_name]
    local = box_shell_points(dims, spec.n_points, rng)
    c, s = math.cos(spec.yaw), math.sin(spec.yaw)
    rot = np.array([[c, -s], [s, c]])
    pts = local.copy()
    pts[:, :2] = local[:, :2] @ rot.T
    pts[:, 0] += spec.x
    pts[:, 1] += spec.y
    pts[:, 2] += GROUND_Z
    return pts, dims


def _label_for(spec: ObjectSpec, dims, calib, image_size):
    center_rect = geometry.lidar_to_rect(np.array([spec.x, spec.y, GROUND_Z]), calib)
    ry = geometry.lidar_yaw_to_rotation_y(spec.yaw, calib)
    box = Box3D(tuple(center_rect), dims, ry, spec.class_name)
    bbox = geometry.box_to_image_bbox(box, calib, image_size)
    if bbox is None:
        return None
    alpha = geometry.wrap_angle(ry - math.atan2(center_rect[0], center_rect[2]))
    return ObjectLabel(
        class_name=spec.class_name, truncation=0.0, occlusion=0, alpha=alpha,
        bbox2d=(bbox.left, bbox.top, bbox.right, bbox.bottom),
        dims=dims, location=tuple(center_rect), rotation_y=ry,
    )


def _render_image(labels, image_size, rng):
    width, height = image_size
    img = Image.new("RGB", (width, height))
    draw = ImageDraw.Draw(img)
    horizon = int(height * 0.45)
    for row in range(height):
        if row < horizon:
            shade = 150 + int(60 * row / max(1, horizon))
            draw.line([(0, row), (width, row)], fill=(shade, shade + 20, 255))
        else:
            shade = 110 - int(50 * (row - horizon) / max(1, height - horizon))
            draw.line([(0, row), (width, row)], fill=(shade, shade, shade))
    palette = {"Car": (170, 40, 40), "Pedestrian": (40, 90, 170)}
    for lab in labels:
        left, top, right, bottom = (int(round(v)) for v in lab.bbox2d)
        color = palette.get(lab.class_name, (90, 140, 90))
        jitter = tuple(int(v) for v in rng.integers(-25, 26, 3))
        color = tuple(int(np.clip(c + j, 0, 255)) for c, j in zip(color, jitter))
        draw.rectangle([left, top, right, bottom], fill=color)
        inset = max(1, (bottom - top) // 6)
        hi = tuple(min(255, c + 60) for c in color)
        draw.rectangle([left + inset, top + inset, max(left + inset + 1, right - inset),
                        top + 2 * inset], fill=hi)
    return np.asarray(img, dtype=np.uint8)


def make_scene(scene_id, seed=0, objects=(), image_size=IMAGE_SIZE,
               calib_text=DEFAULT_CALIB_TEXT) -> Scene:
    """Build one procedural scene. Objects out of camera view get no label but
    their points still enter the cloud."""
    rng = np.random.default_rng(seed)
    calib = kitti_io.parse_calibration(calib_text)
    chunks = [_ground_points(rng)]
    labels = []
    for spec in objects:
        pts, dims = _place_object(spec, rng)
        chunks.append(pts)
        lab = _label_for(spec, dims, calib, image_size)
        if lab is not None:
            labels.append(lab)
    cloud = PointCloud(np.vstack(chunks).astype(np.float32))
    image = _render_image(labels, image_size, rng)
    return Scene(scene_id=scene_id, image=image, cloud=cloud, calib=calib,
                 labels=tuple(labels), calib_text=calib_text)


def make_dataset(root, count, seed=0, objects_per_scene=1, classes=("Car", "Pedestrian")):
    """Write `count` procedural scenes under a KITTI-layout root; returns ids.

    Source objects sit near (14-18 m) and dense enough that templates harvested
    from them keep a confident cluster after range decimation at 20-40 m.
    """
    rng = np.random.default_rng(seed)
    scene_ids = []
    for i in range(count):
        objects = []
        for j in range(objects_per_scene):
            cls = classes[int(rng.integers(len(classes)))]
            n = int(rng.integers(3200, 4200)) if cls == "Car" else int(rng.integers(950, 1400))
            objects.append(ObjectSpec(
                class_name=cls,
                x=float(rng.uniform(14.0, 18.0)),
                y=float(rng.uniform(-4.0, 4.0)),
                yaw=float(rng.uniform(-math.pi, math.pi)),
                n_points=n,
            ))
        scene_id = f"{i:06d}"
        scene = make_scene(scene_id, seed=int(rng.integers(2**31)), objects=objects)
        kitti_io.save_scene(scene, root)
        scene_ids.append(scene_id)
    return scene_ids
