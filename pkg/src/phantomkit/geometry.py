"""Projection chain and 3D-box math shared by the injector and the checker.

Conventions (KITTI):
  LiDAR frame:      x forward, y left, z up
  rect camera:      x right, y down, z forward
  image:            u right, v down, origin top-left
  Box3D:            bottom-center location in the rect frame, dims (h, w, l),
                    rotation_y about the camera y-axis; at rotation_y = 0 the
                    length l runs along camera x and the width w along camera z.

Projection of a LiDAR point:  y = P2 . R0_rect . Tr_velo_to_cam . [x 1]^T,
then (u, v) = (y0/y2, y1/y2) with depth y2. Sub-pixel coordinates are kept;
rounding happens only at rasterization.
"""

import math
from dataclasses import dataclass

import numpy as np

from .kitti_io import Calibration, PointCloud


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box in the rectified camera frame (KITTI parameterization)."""

    center_bottom: tuple     # (x, y, z) bottom-center, meters
    dims: tuple              # (h, w, l) meters
    rotation_y: float        # radians, normalized to (-pi, pi]
    class_name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "center_bottom", tuple(float(v) for v in self.center_bottom))
        object.__setattr__(self, "dims", tuple(float(v) for v in self.dims))
        object.__setattr__(self, "rotation_y", wrap_angle(float(self.rotation_y)))
        h, w, l = self.dims
        if not (h > 0 and w > 0 and l > 0):
            raise ValueError(f"non-positive box dims {self.dims}")


@dataclass(frozen=True)
class ImageBBox:
    """Axis-aligned image-plane box, real-valued pixel coordinates."""

    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        for name in ("left", "top", "right", "bottom"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.left < self.right and self.top < self.bottom):
            raise ValueError(f"degenerate bbox {(self.left, self.top, self.right, self.bottom)}")

    @property
    def width(self):
        return self.right - self.left

    @property
    def height(self):
        return self.bottom - self.top

    @property
    def area(self):
        return self.width * self.height

    def dilated(self, margin):
        return ImageBBox(self.left - margin, self.top - margin,
                         self.right + margin, self.bottom + margin)

    def contains(self, u, v):
        """Vectorized point-in-box test (boundary inclusive)."""
        return (u >= self.left) & (u <= self.right) & (v >= self.top) & (v <= self.bottom)


def wrap_angle(a):
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def _as_points(p):
    arr = np.asarray(p, dtype=np.float64)
    single = arr.ndim == 1
    return np.atleast_2d(arr), single


def _affine(pts, m):
    """Row-wise m[:3,:4] . [p 1] as explicit linear combinations, so the result
    is bit-identical whether points are passed one at a time or in a batch."""
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    cols = [m[j, 0] * x + m[j, 1] * y + m[j, 2] * z + m[j, 3] for j in range(3)]
    return np.stack(cols, axis=1)


def lidar_to_rect(p, calib: Calibration):
    """LiDAR frame -> rectified camera frame: r0_rect . (tr_velo_to_cam . [p 1])."""
    pts, single = _as_points(p)
    r0 = np.hstack([calib.r0_rect, np.zeros((3, 1))])
    rect = _affine(_affine(pts, calib.tr_velo_to_cam), r0)
    return rect[0] if single else rect


def rect_to_lidar(p, calib: Calibration):
    """Inverse of lidar_to_rect (exact inverse of the 4x4 homogeneous chain)."""
    pts, single = _as_points(p)
    tr = np.eye(4)
    tr[:3, :] = calib.tr_velo_to_cam
    r0 = np.eye(4)
    r0[:3, :3] = calib.r0_rect
    inv = np.linalg.inv(r0 @ tr)
    out = _affine(pts, inv[:3, :])
    return out[0] if single else out


def rect_to_image(p, calib: Calibration):
    """Rect camera point(s) -> (u, v, depth). Depth <= 0 flags a behind-camera
    point; |depth| below 1e-9 is singular and yields NaN pixel coordinates."""
    pts, single = _as_points(p)
    y = _affine(pts, calib.p2)
    w = y[:, 2]
    safe = np.abs(w) >= 1e-9
    u = np.full(len(pts), np.nan)
    v = np.full(len(pts), np.nan)
    np.divide(y[:, 0], w, out=u, where=safe)
    np.divide(y[:, 1], w, out=v, where=safe)
    if single:
        return float(u[0]), float(v[0]), float(w[0])
    return u, v, w


@dataclass(frozen=True)
class ProjectedCloud:
    """Per-point projection record, order preserved from the input cloud."""

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    in_frustum: np.ndarray   # bool: depth > 0 and 0 <= u < w, 0 <= v < h

    def __len__(self):
        return len(self.u)


def project_cloud(pc: PointCloud, calib: Calibration, image_size) -> ProjectedCloud:
    """Project every LiDAR point onto the image plane."""
    width, height = image_size
    if len(pc) == 0:
        empty = np.zeros(0)
        return ProjectedCloud(empty, empty, empty, np.zeros(0, dtype=bool))
    rect = lidar_to_rect(pc.xyz, calib)
    u, v, depth = rect_to_image(rect, calib)
    with np.errstate(invalid="ignore"):
        ok = (depth > 0) & (u >= 0) & (u < width) & (v >= 0) & (v < height)
    return ProjectedCloud(u, v, depth, ok)


_CORNER_X = np.array([0.5, 0.5, -0.5, -0.5, 0.5, 0.5, -0.5, -0.5])
_CORNER_Y = np.array([0.0, 0.0, 0.0, 0.0, -1.0, -1.0, -1.0, -1.0])
_CORNER_Z = np.array([0.5, -0.5, -0.5, 0.5, 0.5, -0.5, -0.5, 0.5])


def rotation_y_matrix(ry):
    c, s = math.cos(ry), math.sin(ry)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def box_corners(b: Box3D):
    """The 8 cuboid corners, rect camera frame: bottom face (indices 0-3) at
    y = center_bottom.y, top face (4-7) at y - h."""
    h, w, l = b.dims
    local = np.stack([_CORNER_X * l, _CORNER_Y * h, _CORNER_Z * w], axis=1)
    return local @ rotation_y_matrix(b.rotation_y).T + np.asarray(b.center_bottom)


def box_to_image_bbox(b: Box3D, calib: Calibration, image_size):
    """Axis-aligned hull of the projected box corners, clipped to the image.
    Returns None when the box is out of view (no corner in front of the camera,
    or the clipped hull is empty)."""
    width, height = image_size
    u, v, depth = rect_to_image(box_corners(b), calib)
    front = depth > 0
    if not front.any():
        return None
    left = max(0.0, float(u[front].min()))
    right = min(float(width), float(u[front].max()))
    top = max(0.0, float(v[front].min()))
    bottom = min(float(height), float(v[front].max()))
    if not (left < right and top < bottom):
        return None
    return ImageBBox(left, top, right, bottom)


def _footprint(b: Box3D):
    """Bottom-face corners in the BEV (x, z) plane, counter-clockwise."""
    corners = box_corners(b)[:4]
    return corners[:, [0, 2]]


def _clip_polygon(subject, clipper):
    """Sutherland-Hodgman clip of a convex subject polygon against a convex clipper."""
    def inside(p, a, b):
        # tolerance keeps vertices sitting exactly on a clip edge, so clipping
        # a polygon against itself returns it unchanged
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        edge = math.hypot(b[0] - a[0], b[1] - a[1])
        return cross >= -1e-9 * edge

    def intersect(p1, p2, a, b):
        d1 = np.asarray(p2) - np.asarray(p1)
        d2 = np.asarray(b) - np.asarray(a)
        denom = d1[0] * d2[1] - d1[1] * d2[0]
        t = ((a[0] - p1[0]) * d2[1] - (a[1] - p1[1]) * d2[0]) / denom
        return p1 + t * d1

    # ensure counter-clockwise clipper so the inside test sign is fixed
    if _signed_area(clipper) < 0:
        clipper = clipper[::-1]
    output = [np.asarray(p, dtype=np.float64) for p in subject]
    for i in range(len(clipper)):
        a, b = clipper[i], clipper[(i + 1) % len(clipper)]
        if not output:
            break
        inputs, output = output, []
        prev = inputs[-1]
        for cur in inputs:
            if inside(cur, a, b):
                if not inside(prev, a, b):
                    output.append(intersect(prev, cur, a, b))
                output.append(cur)
            elif inside(prev, a, b):
                output.append(intersect(prev, cur, a, b))
            prev = cur
    return output


def _signed_area(poly):
    # plain shoelace loop: layout-independent, so identical vertex sets give
    # bit-identical areas (np.dot varies with memory stride)
    poly = np.asarray(poly, dtype=np.float64)
    n = len(poly)
    total = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        total += x1 * y2 - y1 * x2
    return 0.5 * total


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Intersection-over-union of the two rotated l x w footprints in the
    bird's-eye (x, z) plane. Symmetric; 0 for disjoint footprints."""
    pa, pb = _footprint(a), _footprint(b)
    area_a, area_b = abs(_signed_area(pa)), abs(_signed_area(pb))
    inter_poly = _clip_polygon(pa, pb)
    inter = abs(_signed_area(inter_poly)) if len(inter_poly) >= 3 else 0.0
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def points_in_box(pc: PointCloud, b: Box3D, calib: Calibration):
    """Indices of cloud points inside the box cuboid (boundary inclusive)."""
    if len(pc) == 0:
        return np.zeros(0, dtype=np.int64)
    rect = lidar_to_rect(pc.xyz, calib)
    local = (rect - np.asarray(b.center_bottom)) @ rotation_y_matrix(b.rotation_y)
    h, w, l = b.dims
    ok = (
        (np.abs(local[:, 0]) <= l / 2.0)
        & (local[:, 1] >= -h) & (local[:, 1] <= 0.0)
        & (np.abs(local[:, 2]) <= w / 2.0)
    )
    return np.flatnonzero(ok)


def lidar_yaw_to_rotation_y(yaw, calib: Calibration) -> float:
    """Map a LiDAR-frame heading to the equivalent camera rotation_y through the
    calibration chain (not the quarter-turn approximation): the heading vector
    (cos yaw, sin yaw, 0) is carried into the camera frame and its bearing in
    the x-z plane is read off as rotation_y."""
    rot = calib.r0_rect @ calib.tr_velo_to_cam[:, :3]
    d = rot @ np.array([math.cos(yaw), math.sin(yaw), 0.0])
    return wrap_angle(math.atan2(-d[2], d[0]))


def rotation_y_to_lidar_yaw(ry, calib: Calibration) -> float:
    """Exact inverse of lidar_yaw_to_rotation_y: solves for the LiDAR heading
    whose camera-frame x-z bearing equals rotation_y."""
    rot = calib.r0_rect @ calib.tr_velo_to_cam[:, :3]
    r1, r2 = rot[:, 0], rot[:, 1]
    sy, cy = math.sin(ry), math.cos(ry)
    # parallel condition of the mapped heading with (cos ry, -sin ry) in (x, z)
    yaw = math.atan2(-(r1[0] * sy + r1[2] * cy), r2[0] * sy + r2[2] * cy)
    d = rot @ np.array([math.cos(yaw), math.sin(yaw), 0.0])
    if d[0] * cy - d[2] * sy < 0.0:  # wrong branch: heading points backwards
        yaw += math.pi
    return wrap_angle(yaw)
