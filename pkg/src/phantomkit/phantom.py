"""The coordinated injection: place a phantom, spoof its LiDAR cluster and its
image patch through the same calibration chain, and verify that the two
modalities land on each other.

Pose convention: a phantom is requested in the LiDAR frame (target_location =
footprint center, yaw = heading). The pose is carried into the rectified
camera frame once, and the cluster, the 3D box and the patch box all derive
from that single transform, so their alignment is exact by construction.
"""

import json
import math
import os
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np
from PIL import Image

from . import geometry, kitti_io
from .geometry import Box3D, ImageBBox
from .kitti_io import PointCloud, Scene
from .templates import MissingTemplateError, ObjectTemplate, TemplateLibrary

ATTACK_CLASSES = ("Car", "Pedestrian")
RNG_NAME = "numpy-pcg64"

# below this cluster size the injection cannot register as an object
MIN_INJECTED_POINTS = 20

# nominal KITTI object sizes, used for placement when no library median is given
NOMINAL_DIMS = {
    "Car": (1.53, 1.63, 3.88),
    "Pedestrian": (1.76, 0.66, 0.84),
}

GROUND_FALLBACK_Z = -1.73  # KITTI sensor mounting height


class AttackAbortedError(RuntimeError):
    """An attempt that failed before producing an augmented scene."""


class TooSparseError(AttackAbortedError):
    pass


class CannotProjectError(AttackAbortedError):
    pass


class UndefinedConsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    """The attacker's intent: what to fake, where, and with which template."""

    class_name: str
    target_location: tuple   # (x, y, z) LiDAR frame, footprint center
    yaw: float               # heading in the LiDAR frame
    template_id: str
    seed: int = 0

    def __post_init__(self):
        if self.class_name not in ATTACK_CLASSES:
            raise ValueError(f"class {self.class_name!r} not in {ATTACK_CLASSES}")
        object.__setattr__(self, "target_location",
                           tuple(float(v) for v in self.target_location))
        object.__setattr__(self, "yaw", float(self.yaw))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class AttackManifest:
    """Binds one augmented scene to the intent that produced it."""

    scene_id: str
    spec: PhantomSpec
    phantom_box: Box3D
    original_point_count: int
    injected_point_count: int
    patch_bbox: ImageBBox
    consistency_fraction: float
    created_at: str = ""
    source_scene_id: str = ""

    def to_dict(self):
        return {
            "scene_id": self.scene_id,
            "source_scene_id": self.source_scene_id or self.scene_id,
            "created_at": self.created_at,
            "rng": RNG_NAME,
            "spec": {
                "class_name": self.spec.class_name,
                "target_location": list(self.spec.target_location),
                "yaw": self.spec.yaw,
                "template_id": self.spec.template_id,
                "seed": self.spec.seed,
            },
            "phantom_box": {
                "center_bottom": list(self.phantom_box.center_bottom),
                "dims": list(self.phantom_box.dims),
                "rotation_y": self.phantom_box.rotation_y,
                "class_name": self.phantom_box.class_name,
            },
            "original_point_count": int(self.original_point_count),
            "injected_point_count": int(self.injected_point_count),
            "patch_bbox": [self.patch_bbox.left, self.patch_bbox.top,
                           self.patch_bbox.right, self.patch_bbox.bottom],
            "consistency_fraction": float(self.consistency_fraction),
        }

    @classmethod
    def from_dict(cls, d):
        spec = PhantomSpec(
            class_name=d["spec"]["class_name"],
            target_location=tuple(d["spec"]["target_location"]),
            yaw=d["spec"]["yaw"],
            template_id=d["spec"]["template_id"],
            seed=d["spec"]["seed"],
        )
        pb = d["phantom_box"]
        return cls(
            scene_id=d["scene_id"],
            spec=spec,
            phantom_box=Box3D(tuple(pb["center_bottom"]), tuple(pb["dims"]),
                              pb["rotation_y"], pb["class_name"]),
            original_point_count=d["original_point_count"],
            injected_point_count=d["injected_point_count"],
            patch_bbox=ImageBBox(*d["patch_bbox"]),
            consistency_fraction=d["consistency_fraction"],
            created_at=d.get("created_at", ""),
            source_scene_id=d.get("source_scene_id", ""),
        )


def manifest_path(out_root, scene_id):
    return os.path.join(out_root, "manifests", scene_id + ".json")


def write_manifest(manifest: AttackManifest, out_root):
    path = manifest_path(out_root, manifest.scene_id)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as f:
        json.dump(manifest.to_dict(), f, indent=1)
        f.write("\n")


def read_manifest(out_root, scene_id) -> AttackManifest:
    with open(manifest_path(out_root, scene_id)) as f:
        return AttackManifest.from_dict(json.load(f))


def created_at_stamp():
    """Reproducible timestamp: SOURCE_DATE_EPOCH when set, else the epoch, so
    seeded runs write bit-identical trees."""
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return datetime.fromtimestamp(epoch, tz=timezone.utc).isoformat()


def estimate_ground_height(cloud: PointCloud, x, y, radius=5.0, min_points=20,
                           fallback=GROUND_FALLBACK_Z):
    """5th-percentile z of the points within a lateral radius of (x, y)."""
    d2 = (cloud.xyz[:, 0] - x) ** 2 + (cloud.xyz[:, 1] - y) ** 2
    near = cloud.xyz[d2 <= radius * radius, 2]
    if len(near) < min_points:
        return float(fallback)
    return float(np.percentile(near.astype(np.float64), 5))


def _gt_boxes(scene: Scene):
    boxes = []
    for lab in scene.labels:
        if lab.class_name == "DontCare":
            continue
        boxes.append(Box3D(lab.location, lab.dims, lab.rotation_y, lab.class_name))
    return boxes


def _pose_to_rect(target_location, yaw, calib):
    center_rect = geometry.lidar_to_rect(np.asarray(target_location, dtype=np.float64), calib)
    ry = geometry.lidar_yaw_to_rotation_y(yaw, calib)
    return center_rect, ry


def sample_placement(scene: Scene, class_name, rng, dims=None,
                     forward_band=(20.0, 40.0), lateral_band=(-6.0, 6.0),
                     max_attempts=100, min_bbox_area=400.0):
    """Rejection-sample a plausible phantom pose: forward distance uniform in
    the band, lateral offset uniform, yaw uniform, footprint on the estimated
    ground, fully visible in the image, and clear of every ground-truth box.
    Returns (target_location, yaw) or None after max_attempts failures."""
    dims = tuple(dims) if dims is not None else NOMINAL_DIMS[class_name]
    gt = _gt_boxes(scene)
    for _ in range(max_attempts):
        forward = float(rng.uniform(*forward_band))
        lateral = float(rng.uniform(*lateral_band))
        yaw = geometry.wrap_angle(float(rng.uniform(-math.pi, math.pi)))
        z = estimate_ground_height(scene.cloud, forward, lateral)
        location = (forward, lateral, z)
        center_rect, ry = _pose_to_rect(location, yaw, scene.calib)
        box = Box3D(tuple(center_rect), dims, ry, class_name)
        u, v, depth = geometry.rect_to_image(geometry.box_corners(box), scene.calib)
        width, height = scene.image_size
        with np.errstate(invalid="ignore"):
            visible = ((depth > 0) & (u >= 0) & (u < width)
                       & (v >= 0) & (v < height)).all()
        if not visible:
            continue
        bbox = geometry.box_to_image_bbox(box, scene.calib, scene.image_size)
        if bbox is None or bbox.area < min_bbox_area:
            continue
        if any(geometry.bev_iou(box, g) > 0.0 for g in gt):
            continue
        return location, yaw
    return None


def inject_lidar(scene: Scene, spec: PhantomSpec, template: ObjectTemplate,
                 min_injected=MIN_INJECTED_POINTS):
    """Re-pose the template cluster at the spec's location and append it to the
    scene cloud. Density falls off with the square of the range ratio (never
    upsampled); intensities are carried over unchanged.

    Returns (pc_adv, phantom_box, injected_indices)."""
    if template.class_name != spec.class_name:
        raise ValueError(
            f"template class {template.class_name} != spec class {spec.class_name}")
    rng = np.random.default_rng(spec.seed)
    center_rect, ry = _pose_to_rect(spec.target_location, spec.yaw, scene.calib)
    target_depth = float(center_rect[2])
    if target_depth <= 0.0:
        raise CannotProjectError("phantom placed behind the camera")

    keep_p = min(1.0, (template.source_depth / target_depth) ** 2)
    keep = rng.random(len(template.points)) < keep_p
    kept = template.points[keep]
    if len(kept) < min_injected:
        raise TooSparseError(
            f"decimation left {len(kept)} points (< {min_injected})")

    rot = geometry.rotation_y_matrix(ry)
    rect = kept[:, :3] @ rot.T + center_rect
    lidar = geometry.rect_to_lidar(rect, scene.calib)
    spoof = np.hstack([lidar, kept[:, 3:4]]).astype(np.float32)
    pc_adv = PointCloud(np.concatenate([scene.cloud.points, spoof], axis=0))

    phantom_box = Box3D(tuple(center_rect), template.source_dims, ry, spec.class_name)
    injected = np.arange(len(scene.cloud), len(pc_adv), dtype=np.int64)
    return pc_adv, phantom_box, injected


def inject_image(scene: Scene, spec: PhantomSpec, template: ObjectTemplate,
                 phantom_box: Box3D):
    """Composite the template patch over the projected phantom box. Returns
    (image_adv, patch_bbox) with patch_bbox in integer raster coordinates;
    pixels outside it are untouched."""
    bbox = geometry.box_to_image_bbox(phantom_box, scene.calib, scene.image_size)
    if bbox is None:
        raise CannotProjectError("phantom box projects outside the image")
    width, height = scene.image_size
    x0 = max(0, int(math.floor(bbox.left)))
    y0 = max(0, int(math.floor(bbox.top)))
    x1 = min(width, max(x0 + 1, int(math.ceil(bbox.right))))
    y1 = min(height, max(y0 + 1, int(math.ceil(bbox.bottom))))
    if x1 - x0 < 1 or y1 - y0 < 1:
        raise CannotProjectError("projected phantom box has no pixels")

    target = (x1 - x0, y1 - y0)
    patch = Image.fromarray(template.patch, mode="RGB").resize(target, Image.BILINEAR)
    mask = Image.fromarray(template.mask, mode="L").resize(target, Image.BILINEAR)
    canvas = Image.fromarray(np.asarray(scene.image), mode="RGB")
    canvas.paste(patch, (x0, y0), mask)
    return np.asarray(canvas, dtype=np.uint8), ImageBBox(x0, y0, x1, y1)


def verify_consistency(pc_adv: PointCloud, injected_indices, patch_bbox: ImageBBox,
                       calib, image_size, dilation=2.0):
    """Run the fusion pipeline's association step on the injected points only:
    the fraction that are in-frustum and project inside the patch box (dilated
    to absorb rasterization rounding)."""
    injected_indices = np.asarray(injected_indices, dtype=np.int64)
    if len(injected_indices) == 0:
        raise UndefinedConsistencyError("no injected points to verify")
    sub = PointCloud(pc_adv.points[injected_indices])
    proj = geometry.project_cloud(sub, calib, image_size)
    box = patch_bbox.dilated(dilation)
    with np.errstate(invalid="ignore"):
        hit = proj.in_frustum & box.contains(proj.u, proj.v)
    return float(np.count_nonzero(hit)) / float(len(injected_indices))


def augment_scene(scene: Scene, spec: PhantomSpec, library: TemplateLibrary,
                  out_root, output_scene_id=None) -> AttackManifest:
    """Run both injections synchronously, verify the cross-modal alignment, and
    persist the augmented scene (KITTI layout) plus its manifest."""
    template = library.get(spec.template_id)
    pc_adv, phantom_box, injected = inject_lidar(scene, spec, template)
    image_adv, patch_bbox = inject_image(scene, spec, template, phantom_box)
    fraction = verify_consistency(pc_adv, injected, patch_bbox,
                                  scene.calib, scene.image_size)

    out_id = output_scene_id or scene.scene_id
    adv = Scene(scene_id=out_id, image=image_adv, cloud=pc_adv, calib=scene.calib,
                labels=scene.labels, calib_text=scene.calib_text)
    kitti_io.save_scene(adv, out_root)

    manifest = AttackManifest(
        scene_id=out_id,
        spec=spec,
        phantom_box=phantom_box,
        original_point_count=len(scene.cloud),
        injected_point_count=len(injected),
        patch_bbox=patch_bbox,
        consistency_fraction=fraction,
        created_at=created_at_stamp(),
        source_scene_id=scene.scene_id,
    )
    write_manifest(manifest, out_root)
    return manifest


def replay_consistency(out_root, scene_id):
    """Recompute the consistency fraction from the persisted artifacts alone.
    Returns (manifest, recomputed_fraction)."""
    manifest = read_manifest(out_root, scene_id)
    scene = kitti_io.load_scene(out_root, scene_id)
    n0 = manifest.original_point_count
    injected = np.arange(n0, n0 + manifest.injected_point_count, dtype=np.int64)
    fraction = verify_consistency(scene.cloud, injected, manifest.patch_bbox,
                                  scene.calib, scene.image_size)
    return manifest, fraction
