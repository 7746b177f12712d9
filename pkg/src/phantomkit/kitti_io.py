"""Readers and writers for the KITTI 3D-detection file formats.

Covers the four per-frame artifacts:
  velodyne/<id>.bin   packed little-endian float32 (x, y, z, intensity), no header
  calib/<id>.txt      `KEY: v1 v2 ...` lines, matrices row-major
  label_2/<id>.txt    15 whitespace fields per object (16 with a trailing score)
  image_2/<id>.png    8-bit RGB, lossless

Frames: the point cloud lives in the LiDAR frame (x forward, y left, z up);
label locations live in the rectified camera frame (x right, y down, z forward)
and give the bottom-center of the 3D box.
"""

import os
import shutil
from dataclasses import dataclass

import numpy as np
from PIL import Image


def _frozen(arr, dtype):
    """Own a read-only copy unless the input is already immutable."""
    out = np.asarray(arr, dtype=dtype)
    if out.flags.writeable:
        if out is arr or (isinstance(arr, np.ndarray) and out.base is arr):
            out = out.copy()
        out.flags.writeable = False
    return out


class MalformedPointCloudError(ValueError):
    pass


class MalformedCalibrationError(ValueError):
    pass


class MalformedLabelError(ValueError):
    pass


class SceneNotFoundError(FileNotFoundError):
    def __init__(self, scene_id, component, path):
        super().__init__(f"scene {scene_id}: missing {component} file at {path}")
        self.scene_id = scene_id
        self.component = component


KITTI_CLASSES = (
    "Car", "Van", "Truck", "Pedestrian", "Person_sitting",
    "Cyclist", "Tram", "Misc", "DontCare",
)

POINT_RECORD_BYTES = 16  # four float32 per point


@dataclass(frozen=True)
class PointCloud:
    """N x 4 float32 array of (x, y, z, intensity) in the LiDAR frame."""

    points: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points, np.float32)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise MalformedPointCloudError(f"expected (N, 4) points, got {pts.shape}")
        bad = np.flatnonzero(~np.isfinite(pts).all(axis=1))
        if bad.size:
            raise MalformedPointCloudError(f"non-finite point at index {bad[0]}")
        bad = np.flatnonzero((pts[:, 3] < 0.0) | (pts[:, 3] > 1.0))
        if bad.size:
            raise MalformedPointCloudError(
                f"intensity outside [0, 1] at index {bad[0]}: {pts[bad[0], 3]}")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def xyz(self):
        return self.points[:, :3]

    @property
    def intensity(self):
        return self.points[:, 3]


@dataclass(frozen=True)
class Calibration:
    """The LiDAR-to-image projection chain: u = P2 . R0_rect . Tr_velo_to_cam . x."""

    p2: np.ndarray            # (3, 4) camera intrinsics + baseline offset, pixels
    r0_rect: np.ndarray       # (3, 3) rectifying rotation
    tr_velo_to_cam: np.ndarray  # (3, 4) rigid LiDAR -> reference camera, meters

    # KITTI files carry rounded values; rotation blocks are orthonormal to ~1e-4
    ORTHO_TOL = 1e-3

    def __post_init__(self):
        p2 = _frozen(np.asarray(self.p2, dtype=np.float64).reshape(3, 4), np.float64)
        r0 = _frozen(np.asarray(self.r0_rect, dtype=np.float64).reshape(3, 3), np.float64)
        tr = _frozen(np.asarray(self.tr_velo_to_cam, dtype=np.float64).reshape(3, 4), np.float64)
        for name, rot in (("r0_rect", r0), ("tr_velo_to_cam", tr[:, :3])):
            err = np.abs(rot @ rot.T - np.eye(3)).max()
            if err > self.ORTHO_TOL:
                raise MalformedCalibrationError(
                    f"{name} rotation block not orthonormal (max deviation {err:.2e})")
        object.__setattr__(self, "p2", p2)
        object.__setattr__(self, "r0_rect", r0)
        object.__setattr__(self, "tr_velo_to_cam", tr)


@dataclass(frozen=True)
class ObjectLabel:
    """One KITTI annotation row (ground truth, or a detection when score is set)."""

    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple            # (left, top, right, bottom) pixels
    dims: tuple              # (h, w, l) meters
    location: tuple          # (x, y, z) rectified camera frame, bottom-center
    rotation_y: float
    score: float = None

    def __post_init__(self):
        object.__setattr__(self, "bbox2d", tuple(float(v) for v in self.bbox2d))
        object.__setattr__(self, "dims", tuple(float(v) for v in self.dims))
        object.__setattr__(self, "location", tuple(float(v) for v in self.location))
        # DontCare rows in distributed KITTI ground truth carry -1 sentinels
        if self.class_name == "DontCare":
            return
        h, w, l = self.dims
        if not (h > 0 and w > 0 and l > 0):
            raise MalformedLabelError(f"non-positive dims {self.dims} for {self.class_name}")
        left, top, right, bottom = self.bbox2d
        if not (left < right and top < bottom):
            raise MalformedLabelError(f"degenerate bbox2d {self.bbox2d}")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise MalformedLabelError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class Scene:
    """One KITTI frame: image, cloud, calibration and labels, loaded together.

    calib_text keeps the raw calibration file contents so augmented outputs can
    copy it verbatim.
    """

    scene_id: str
    image: np.ndarray        # (H, W, 3) uint8
    cloud: PointCloud
    calib: Calibration
    labels: tuple = ()
    calib_text: str = ""

    def __post_init__(self):
        img = _frozen(self.image, np.uint8)
        if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
            raise ValueError(f"expected (H, W, 3) uint8 image, got {img.shape}")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "labels", tuple(self.labels))
        for lab in self.labels:
            if lab.class_name not in KITTI_CLASSES:
                raise MalformedLabelError(f"unknown class {lab.class_name!r}")

    @property
    def image_size(self):
        """(width, height) in pixels."""
        return (self.image.shape[1], self.image.shape[0])


def parse_point_cloud(data: bytes) -> PointCloud:
    """Decode a velodyne .bin payload. Length must be a multiple of 16 bytes."""
    if len(data) % POINT_RECORD_BYTES != 0:
        raise MalformedPointCloudError(
            f"byte length {len(data)} not divisible by {POINT_RECORD_BYTES}")
    pts = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    return PointCloud(pts)


def write_point_cloud(pc: PointCloud) -> bytes:
    return np.ascontiguousarray(pc.points, dtype="<f4").tobytes()


_CALIB_KEYS = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}


def parse_calibration(text: str) -> Calibration:
    """Parse a KITTI calib file. Line order is free; unknown keys are ignored."""
    values = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, rest = line.split(":", 1)
        key = key.strip()
        if key not in _CALIB_KEYS:
            continue
        try:
            nums = [float(tok) for tok in rest.split()]
        except ValueError as exc:
            raise MalformedCalibrationError(f"{key}: unparsable number ({exc})") from None
        if len(nums) != _CALIB_KEYS[key]:
            raise MalformedCalibrationError(
                f"{key}: expected {_CALIB_KEYS[key]} numbers, got {len(nums)}")
        values[key] = np.array(nums, dtype=np.float64)
    for key in _CALIB_KEYS:
        if key not in values:
            raise MalformedCalibrationError(f"missing key {key}")
    return Calibration(
        p2=values["P2"].reshape(3, 4),
        r0_rect=values["R0_rect"].reshape(3, 3),
        tr_velo_to_cam=values["Tr_velo_to_cam"].reshape(3, 4),
    )


def format_calibration(calib: Calibration) -> str:
    """Emit a calib file that parse_calibration reads back exactly (repr precision)."""
    def row(m):
        return " ".join(repr(float(v)) for v in np.asarray(m).ravel())
    return (
        f"P2: {row(calib.p2)}\n"
        f"R0_rect: {row(calib.r0_rect)}\n"
        f"Tr_velo_to_cam: {row(calib.tr_velo_to_cam)}\n"
    )


def parse_labels(text: str):
    """Parse a label/result file into a list of ObjectLabel (one per nonempty line)."""
    labels = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (15, 16):
            raise MalformedLabelError(
                f"line {lineno}: expected 15 or 16 fields, got {len(fields)}")
        try:
            vals = [float(tok) for tok in fields[1:]]
        except ValueError as exc:
            raise MalformedLabelError(f"line {lineno}: unparsable number ({exc})") from None
        labels.append(ObjectLabel(
            class_name=fields[0],
            truncation=vals[0],
            occlusion=int(vals[1]),
            alpha=vals[2],
            bbox2d=tuple(vals[3:7]),
            dims=tuple(vals[7:10]),
            location=tuple(vals[10:13]),
            rotation_y=vals[13],
            score=vals[14] if len(fields) == 16 else None,
        ))
    return labels


def write_labels(labels) -> str:
    """Format labels with the KITTI 2-decimal convention, one per line."""
    lines = []
    for lab in labels:
        fields = [
            lab.class_name,
            f"{lab.truncation:.2f}",
            f"{lab.occlusion:d}",
            f"{lab.alpha:.2f}",
            *(f"{v:.2f}" for v in lab.bbox2d),
            *(f"{v:.2f}" for v in lab.dims),
            *(f"{v:.2f}" for v in lab.location),
            f"{lab.rotation_y:.2f}",
        ]
        if lab.score is not None:
            fields.append(f"{lab.score:.2f}")
        lines.append(" ".join(fields))
    return "".join(line + "\n" for line in lines)


def _scene_paths(root, scene_id):
    return {
        "image_2": os.path.join(root, "image_2", scene_id + ".png"),
        "velodyne": os.path.join(root, "velodyne", scene_id + ".bin"),
        "calib": os.path.join(root, "calib", scene_id + ".txt"),
        "label_2": os.path.join(root, "label_2", scene_id + ".txt"),
    }


def load_image(path) -> np.ndarray:
    """Load a lossless 8-bit RGB raster. Lossy formats are rejected."""
    with Image.open(path) as img:
        if img.format not in ("PNG", "BMP", "PPM"):
            raise ValueError(f"refusing lossy/unsupported image format {img.format} at {path}")
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_image(arr: np.ndarray, path):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def load_scene(root, scene_id) -> Scene:
    """Load one frame from a KITTI-layout directory tree."""
    paths = _scene_paths(root, scene_id)
    for component, path in paths.items():
        if not os.path.isfile(path):
            raise SceneNotFoundError(scene_id, component, path)
    image = load_image(paths["image_2"])
    with open(paths["velodyne"], "rb") as f:
        cloud = parse_point_cloud(f.read())
    if len(cloud) == 0:
        raise MalformedPointCloudError(f"scene {scene_id}: empty point cloud")
    with open(paths["calib"]) as f:
        calib_text = f.read()
    calib = parse_calibration(calib_text)
    with open(paths["label_2"]) as f:
        labels = parse_labels(f.read())
    return Scene(scene_id=scene_id, image=image, cloud=cloud, calib=calib,
                 labels=tuple(labels), calib_text=calib_text)


def save_scene(scene: Scene, root):
    """Write a Scene back out in KITTI layout (calib text copied verbatim)."""
    paths = _scene_paths(root, scene.scene_id)
    for path in paths.values():
        os.makedirs(os.path.dirname(path), exist_ok=True)
    save_image(scene.image, paths["image_2"])
    with open(paths["velodyne"], "wb") as f:
        f.write(write_point_cloud(scene.cloud))
    calib_text = scene.calib_text or format_calibration(scene.calib)
    with open(paths["calib"], "w") as f:
        f.write(calib_text)
    with open(paths["label_2"], "w") as f:
        f.write(write_labels(scene.labels))


def copy_calib_file(src_root, dst_root, scene_id):
    """Byte-exact calib copy between two KITTI trees."""
    src = _scene_paths(src_root, scene_id)["calib"]
    dst = _scene_paths(dst_root, scene_id)["calib"]
    os.makedirs(os.path.dirname(dst), exist_ok=True)
    shutil.copyfile(src, dst)
