"""Harvest reusable object templates from annotated scenes.

A template is a real object's LiDAR cluster moved into a canonical frame
(footprint center at the origin, yaw removed, camera-style axes: x along the
length, y down with the footprint at y = 0, z along the width) plus the image
crop at its projected box with a per-pixel opacity mask. Re-posing a template
somewhere else is then a rotation + translation for the points and a
perspective rescale for the patch.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw, ImageFilter
from scipy.spatial import ConvexHull, QhullError

from . import geometry, kitti_io
from .geometry import Box3D, ImageBBox
from .kitti_io import PointCloud

DIMS_SLACK = 1.05  # canonical points may poke 5% past the box (sensor noise)
MASK_FEATHER_PX = 2.0


class EmptyLibraryError(RuntimeError):
    pass


class MissingTemplateError(KeyError):
    pass


@dataclass(frozen=True)
class ObjectTemplate:
    template_id: str
    class_name: str
    points: np.ndarray       # (N, 4) canonical-frame xyz + intensity
    patch: np.ndarray        # (H, W, 3) uint8 crop from the source image
    mask: np.ndarray         # (H, W) uint8 opacity
    source_depth: float      # rect-camera z of the source object
    source_dims: tuple       # (h, w, l)
    source_bbox: ImageBBox

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4 or len(pts) == 0:
            raise ValueError("template needs a nonempty (N, 4) point set")
        h, w, l = self.source_dims
        half_l, half_w = l / 2.0 * DIMS_SLACK, w / 2.0 * DIMS_SLACK
        if (np.abs(pts[:, 0]) > half_l).any() or (np.abs(pts[:, 2]) > half_w).any():
            raise ValueError("canonical points fall outside the inflated source box")
        if self.patch.shape[:2] != self.mask.shape:
            raise ValueError("patch and mask shapes differ")
        bw = int(round(self.source_bbox.width))
        bh = int(round(self.source_bbox.height))
        if abs(self.patch.shape[1] - bw) > 1 or abs(self.patch.shape[0] - bh) > 1:
            raise ValueError("patch dimensions do not match source bbox")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "source_depth", float(self.source_depth))
        object.__setattr__(self, "source_dims", tuple(float(v) for v in self.source_dims))


class TemplateLibrary:
    """Immutable-after-build set of templates, addressable by id and class."""

    def __init__(self, templates=()):
        self._templates = {t.template_id: t for t in templates}

    def __len__(self):
        return len(self._templates)

    def __contains__(self, template_id):
        return template_id in self._templates

    def ids(self):
        return sorted(self._templates)

    def get(self, template_id) -> ObjectTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise MissingTemplateError(template_id) from None

    def by_class(self, class_name):
        return [self._templates[i] for i in self.ids()
                if self._templates[i].class_name == class_name]

    def classes(self):
        return sorted({t.class_name for t in self._templates.values()})

    def median_dims(self, class_name):
        matches = self.by_class(class_name)
        if not matches:
            raise EmptyLibraryError(f"no templates for class {class_name}")
        dims = np.array([t.source_dims for t in matches])
        return tuple(np.median(dims, axis=0).tolist())

    def save(self, root):
        os.makedirs(root, exist_ok=True)
        for tid in self.ids():
            t = self._templates[tid]
            meta = {
                "template_id": t.template_id,
                "class_name": t.class_name,
                "source_depth": t.source_depth,
                "source_dims": list(t.source_dims),
                "source_bbox": [t.source_bbox.left, t.source_bbox.top,
                                t.source_bbox.right, t.source_bbox.bottom],
                "point_count": int(len(t.points)),
            }
            with open(os.path.join(root, tid + ".meta.json"), "w") as f:
                json.dump(meta, f, indent=1)
            with open(os.path.join(root, tid + ".points.bin"), "wb") as f:
                f.write(kitti_io.write_point_cloud(PointCloud(t.points.astype(np.float32))))
            rgba = np.dstack([t.patch, t.mask])
            Image.fromarray(rgba, mode="RGBA").save(
                os.path.join(root, tid + ".patch.png"), format="PNG")

    @classmethod
    def load(cls, root):
        templates = []
        for name in sorted(os.listdir(root)):
            if not name.endswith(".meta.json"):
                continue
            with open(os.path.join(root, name)) as f:
                meta = json.load(f)
            tid = meta["template_id"]
            with open(os.path.join(root, tid + ".points.bin"), "rb") as f:
                pts = kitti_io.parse_point_cloud(f.read()).points.astype(np.float64)
            with Image.open(os.path.join(root, tid + ".patch.png")) as img:
                rgba = np.asarray(img.convert("RGBA"), dtype=np.uint8)
            templates.append(ObjectTemplate(
                template_id=tid,
                class_name=meta["class_name"],
                points=pts,
                patch=rgba[:, :, :3],
                mask=rgba[:, :, 3],
                source_depth=meta["source_depth"],
                source_dims=tuple(meta["source_dims"]),
                source_bbox=ImageBBox(*meta["source_bbox"]),
            ))
        return cls(templates)


def _crop_bounds(bbox: ImageBBox, image_size):
    width, height = image_size
    x0 = max(0, int(math.floor(bbox.left)))
    y0 = max(0, int(math.floor(bbox.top)))
    x1 = min(width, max(x0 + 1, int(math.ceil(bbox.right))))
    y1 = min(height, max(y0 + 1, int(math.ceil(bbox.bottom))))
    return x0, y0, x1, y1


def _hull_mask(shape, uv):
    """Opaque convex hull of the projected object points, feathered 2 px.
    Falls back to a fully opaque patch when the hull is degenerate."""
    h, w = shape
    mask = Image.new("L", (w, h), 0)
    draw = ImageDraw.Draw(mask)
    try:
        hull = ConvexHull(uv)
        poly = [tuple(uv[i]) for i in hull.vertices]
        draw.polygon(poly, fill=255)
    except (QhullError, ValueError):
        draw.rectangle([0, 0, w, h], fill=255)
    mask = mask.filter(ImageFilter.GaussianBlur(MASK_FEATHER_PX))
    return np.asarray(mask, dtype=np.uint8)


def extract_object(scene, label_index) -> ObjectTemplate:
    """Cut one labeled object out of a scene, or return None when it has no
    usable points or projected box."""
    label = scene.labels[label_index]
    box = Box3D(label.location, label.dims, label.rotation_y, label.class_name)
    idx = geometry.points_in_box(scene.cloud, box, scene.calib)
    if len(idx) == 0:
        return None
    bbox = geometry.box_to_image_bbox(box, scene.calib, scene.image_size)
    if bbox is None or bbox.width < 2 or bbox.height < 2:
        return None
    rect = geometry.lidar_to_rect(scene.cloud.xyz[idx].astype(np.float64), scene.calib)
    canon = (rect - np.asarray(box.center_bottom)) @ geometry.rotation_y_matrix(box.rotation_y)
    points = np.hstack([canon, scene.cloud.intensity[idx, None].astype(np.float64)])

    x0, y0, x1, y1 = _crop_bounds(bbox, scene.image_size)
    patch = np.ascontiguousarray(scene.image[y0:y1, x0:x1])
    u, v, _ = geometry.rect_to_image(rect, scene.calib)
    uv = np.stack([u - x0, v - y0], axis=1)
    mask = _hull_mask(patch.shape[:2], uv)

    return ObjectTemplate(
        template_id=f"{scene.scene_id}-{label_index:02d}",
        class_name=label.class_name,
        points=points,
        patch=patch,
        mask=mask,
        source_depth=label.location[2],
        source_dims=label.dims,
        source_bbox=ImageBBox(x0, y0, x1, y1),
    )


def extract_templates(scenes, classes, min_points=100) -> TemplateLibrary:
    """Build a template library from every requested-class object with at least
    min_points in-box points. Raises EmptyLibraryError when a requested class
    yields nothing."""
    classes = tuple(classes)
    templates = []
    for scene in scenes:
        for i, label in enumerate(scene.labels):
            if label.class_name == "DontCare" or label.class_name not in classes:
                continue
            tpl = extract_object(scene, i)
            if tpl is None or len(tpl.points) < min_points:
                continue
            templates.append(tpl)
    lib = TemplateLibrary(templates)
    for cls in classes:
        if not lib.by_class(cls):
            raise EmptyLibraryError(f"no templates extracted for class {cls}")
    return lib
