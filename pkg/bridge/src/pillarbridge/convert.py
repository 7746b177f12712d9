"""Map framework-native detections into 16-field KITTI result lines.

Native detections are dicts in the LiDAR frame:
    class_name, location (x, y, z bottom-center), dims (h, w, l),
    yaw (heading), score in [0, 1]
Unknown classes are dropped and counted; missing box fields abort with the
detection index.
"""

import math

import numpy as np

from .kitti import Calib, format_result_line, rotation_y_corners

EMITTED_CLASSES = ("Car", "Pedestrian", "Cyclist")
_REQUIRED = ("class_name", "location", "dims", "yaw", "score")


class ConversionError(ValueError):
    pass


def convert_detections(detections, calib: Calib, image_size):
    """Returns (lines, dropped_count)."""
    width, height = image_size
    lines = []
    dropped = 0
    for index, det in enumerate(detections):
        missing = [key for key in _REQUIRED if key not in det]
        if missing:
            raise ConversionError(f"detection {index}: missing fields {missing}")
        if det["class_name"] not in EMITTED_CLASSES:
            dropped += 1
            continue
        location = np.asarray(det["location"], dtype=np.float64)
        dims = tuple(float(v) for v in det["dims"])
        if len(location) != 3 or len(dims) != 3:
            raise ConversionError(f"detection {index}: malformed box fields")
        rect = calib.lidar_to_rect(location)[0]
        ry = calib.yaw_to_rotation_y(float(det["yaw"]))
        u, v, depth = calib.rect_to_image(rotation_y_corners(rect, dims, ry))
        front = depth > 0
        if front.any():
            bbox = (max(0.0, float(u[front].min())), max(0.0, float(v[front].min())),
                    min(float(width), float(u[front].max())),
                    min(float(height), float(v[front].max())))
            if bbox[0] >= bbox[2] or bbox[1] >= bbox[3]:
                bbox = (0.0, 0.0, 1.0, 1.0)
        else:
            bbox = (0.0, 0.0, 1.0, 1.0)
        alpha = ry - math.atan2(rect[0], rect[2])
        alpha = math.atan2(math.sin(alpha), math.cos(alpha))
        score = min(1.0, max(0.0, float(det["score"])))
        lines.append(format_result_line(det["class_name"], alpha, bbox, dims,
                                        tuple(rect), ry, score))
    return lines, dropped
