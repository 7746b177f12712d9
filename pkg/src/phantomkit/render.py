"""Batch figure renderers: BEV point-cloud rasters and camera overlays with
box wireframes and score labels. Nearest-pixel plotting and non-antialiased
lines keep output bit-reproducible."""

from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from . import geometry
from .geometry import Box3D
from .kitti_io import Calibration, PointCloud

ROLE_REAL = "real"
ROLE_PHANTOM = "phantom"
ROLE_DETECTION = "detection"

# wireframe edges over the box_corners ordering (bottom ring, top ring, pillars)
_BOX_EDGES = [(0, 1), (1, 2), (2, 3), (3, 0),
              (4, 5), (5, 6), (6, 7), (7, 4),
              (0, 4), (1, 5), (2, 6), (3, 7)]

_HEIGHT_RAMP = {  # z band -> color lerp for BEV points
    "low": (45, 80, 165),
    "high": (250, 235, 90),
    "z_min": -2.5,
    "z_max": 1.5,
}


@dataclass(frozen=True)
class RenderStyle:
    bev_forward_extent: float = 70.0   # meters ahead of the sensor
    bev_lateral_extent: float = 40.0   # meters to each side
    pixels_per_meter: float = 10.0
    label_font_size: int = 12
    palette: dict = field(default_factory=lambda: {
        ROLE_REAL: (80, 220, 80),
        ROLE_PHANTOM: (210, 70, 220),
        ROLE_DETECTION: (245, 200, 60),
    })

    def __post_init__(self):
        if self.pixels_per_meter <= 0:
            raise ValueError("pixels_per_meter must be positive")
        if self.bev_forward_extent <= 0 or self.bev_lateral_extent <= 0:
            raise ValueError("BEV extents must be positive")

    @classmethod
    def from_config(cls, cfg):
        return cls(
            bev_forward_extent=cfg.get_float("bev_forward_extent"),
            bev_lateral_extent=cfg.get_float("bev_lateral_extent"),
            pixels_per_meter=cfg.get_float("bev_pixels_per_meter"),
            label_font_size=cfg.get_int("label_font_size"),
            palette={
                ROLE_REAL: cfg.get_rgb("real_box_color"),
                ROLE_PHANTOM: cfg.get_rgb("phantom_box_color"),
                ROLE_DETECTION: cfg.get_rgb("detection_box_color"),
            },
        )


def _font(style):
    try:
        return ImageFont.load_default(size=style.label_font_size)
    except TypeError:  # older Pillow: fixed-size bitmap font
        return ImageFont.load_default()


def bev_canvas_size(style: RenderStyle):
    width = int(round(2 * style.bev_lateral_extent * style.pixels_per_meter))
    height = int(round(style.bev_forward_extent * style.pixels_per_meter))
    return width, height


def bev_to_pixel(x, y, style: RenderStyle):
    """LiDAR BEV (x forward, y left) -> raster (col, row): forward is up,
    left is image-left."""
    col = (style.bev_lateral_extent - np.asarray(y)) * style.pixels_per_meter
    row = (style.bev_forward_extent - np.asarray(x)) * style.pixels_per_meter
    return col, row


def _height_colors(z):
    lo = np.array(_HEIGHT_RAMP["low"], dtype=np.float64)
    hi = np.array(_HEIGHT_RAMP["high"], dtype=np.float64)
    t = np.clip((z - _HEIGHT_RAMP["z_min"])
                / (_HEIGHT_RAMP["z_max"] - _HEIGHT_RAMP["z_min"]), 0.0, 1.0)
    return (lo + t[:, None] * (hi - lo)).astype(np.uint8)


def render_bev(pc: PointCloud, boxes, calib: Calibration,
               style: RenderStyle = None) -> np.ndarray:
    """Top-down raster: points colored by height, boxes drawn as rotated
    footprints with role colors and optional score labels.

    boxes: iterable of (Box3D, role, score-or-None), boxes in the rect frame.
    """
    style = style or RenderStyle()
    width, height = bev_canvas_size(style)
    raster = np.zeros((height, width, 3), dtype=np.uint8)

    if len(pc):
        col, row = bev_to_pixel(pc.xyz[:, 0].astype(np.float64),
                                pc.xyz[:, 1].astype(np.float64), style)
        ci = np.floor(col).astype(np.int64)
        ri = np.floor(row).astype(np.int64)
        ok = (ci >= 0) & (ci < width) & (ri >= 0) & (ri < height)
        raster[ri[ok], ci[ok]] = _height_colors(pc.xyz[ok, 2].astype(np.float64))

    img = Image.fromarray(raster, mode="RGB")
    draw = ImageDraw.Draw(img)
    font = _font(style)
    for box, role, score in boxes:
        color = style.palette.get(role, (255, 255, 255))
        corners = geometry.box_corners(box)[:4]
        lidar = geometry.rect_to_lidar(corners, calib)
        col, row = bev_to_pixel(lidar[:, 0], lidar[:, 1], style)
        pts = [(int(round(c)), int(round(r))) for c, r in zip(col, row)]
        for i in range(4):
            draw.line([pts[i], pts[(i + 1) % 4]], fill=color, width=1)
        if score is not None:
            anchor = (min(p[0] for p in pts), min(p[1] for p in pts) - style.label_font_size - 2)
            draw.text(anchor, f"{score:.2f}", fill=color, font=font)
    return np.asarray(img, dtype=np.uint8)


def render_overlay(image: np.ndarray, boxes, calib: Calibration,
                   style: RenderStyle = None) -> np.ndarray:
    """Camera image with projected 3D wireframes and score text; boxes with no
    corner in front of the camera are skipped. Input is never mutated."""
    style = style or RenderStyle()
    img = Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB")
    draw = ImageDraw.Draw(img)
    font = _font(style)
    for box, role, score in boxes:
        color = style.palette.get(role, (255, 255, 255))
        u, v, depth = geometry.rect_to_image(geometry.box_corners(box), calib)
        if not (depth > 0).any():
            continue
        for i, j in _BOX_EDGES:
            if depth[i] > 0 and depth[j] > 0:
                draw.line([(int(round(u[i])), int(round(v[i]))),
                           (int(round(u[j])), int(round(v[j])))],
                          fill=color, width=1)
        if score is not None:
            front = depth > 0
            anchor = (int(round(u[front].min())),
                      int(round(v[front].min())) - style.label_font_size - 2)
            draw.text(anchor, f"{score:.2f}", fill=color, font=font)
    return np.asarray(img, dtype=np.uint8)


def scene_boxes(scene, manifest=None, detections=None):
    """Standard box list for figures: ground truth, the phantom from a
    manifest, and detector output."""
    boxes = []
    for lab in scene.labels:
        if lab.class_name == "DontCare":
            continue
        boxes.append((Box3D(lab.location, lab.dims, lab.rotation_y, lab.class_name),
                      ROLE_REAL, None))
    if manifest is not None:
        boxes.append((manifest.phantom_box, ROLE_PHANTOM, None))
    for det in detections or ():
        boxes.append((det.box, ROLE_DETECTION, det.score))
    return boxes
