"""Checkpoint-free geometric backend: height-strip the ground, cluster the
rest on a BEV grid, fit oriented boxes and score by point density. Lets the
bridge produce result files without any model weights; the learned path lives
in model.py.
"""

import math

import numpy as np

_SIZE_WINDOWS = {
    "Car": ((1.1, 2.4), (1.2, 2.3), (2.8, 5.8)),          # (h, w, l) min/max
    "Pedestrian": ((1.1, 2.2), (0.25, 1.3), (0.25, 1.3)),
}
_SCORE_SATURATION = {"Car": 350, "Pedestrian": 100}

_TILE = 2.0
_STRIP = 0.28
_CELL = 0.5
_MIN_POINTS = 12


def _strip_ground(points):
    ti = np.floor(points[:, 0] / _TILE).astype(np.int64)
    tj = np.floor(points[:, 1] / _TILE).astype(np.int64)
    _, inverse = np.unique(np.stack([ti, tj], axis=1), axis=0, return_inverse=True)
    floor = np.full(inverse.max() + 1, np.inf)
    np.minimum.at(floor, inverse, points[:, 2])
    return np.flatnonzero(points[:, 2] > floor[inverse] + _STRIP)


def _grid_components(xy):
    cells = np.stack([np.floor(xy[:, 0] / _CELL), np.floor(xy[:, 1] / _CELL)],
                     axis=1).astype(np.int64)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    index_of = {(int(a), int(b)): k for k, (a, b) in enumerate(uniq)}
    component = -np.ones(len(uniq), dtype=np.int64)
    next_component = 0
    for start in range(len(uniq)):
        if component[start] >= 0:
            continue
        stack = [start]
        component[start] = next_component
        while stack:
            k = stack.pop()
            a, b = int(uniq[k][0]), int(uniq[k][1])
            for da in (-1, 0, 1):
                for db in (-1, 0, 1):
                    nb = index_of.get((a + da, b + db))
                    if nb is not None and component[nb] < 0:
                        component[nb] = next_component
                        stack.append(nb)
        next_component += 1
    return component[inverse]


def detect_clusters(points):
    """Native detection dicts for one cloud (see convert.py for the schema)."""
    if len(points) == 0:
        return []
    kept = _strip_ground(points)
    if len(kept) == 0:
        return []
    sub = points[kept].astype(np.float64)
    labels = _grid_components(sub[:, :2])
    detections = []
    for comp in np.unique(labels):
        members = sub[labels == comp]
        if len(members) < _MIN_POINTS:
            continue
        xy = members[:, :2]
        centered = xy - xy.mean(axis=0)
        cov = centered.T @ centered / len(xy)
        eigvals, eigvecs = np.linalg.eigh(cov)
        if not np.isfinite(eigvals).all() or eigvals[1] < 1e-12:
            yaw = 0.0
        else:
            yaw = math.atan2(eigvecs[1, 1], eigvecs[0, 1])
        c, s = math.cos(yaw), math.sin(yaw)
        along = xy[:, 0] * c + xy[:, 1] * s
        across = -xy[:, 0] * s + xy[:, 1] * c
        l = max(1e-2, float(along.max() - along.min()))
        w = max(1e-2, float(across.max() - across.min()))
        h = max(1e-2, float(members[:, 2].max() - members[:, 2].min()))
        for class_name, ((h0, h1), (w0, w1), (l0, l1)) in _SIZE_WINDOWS.items():
            if h0 <= h <= h1 and w0 <= w <= w1 and l0 <= l <= l1:
                mid_along = (along.max() + along.min()) / 2.0
                mid_across = (across.max() + across.min()) / 2.0
                detections.append({
                    "class_name": class_name,
                    "location": (mid_along * c - mid_across * s,
                                 mid_along * s + mid_across * c,
                                 float(members[:, 2].min())),
                    "dims": (h, w, l),
                    "yaw": yaw,
                    "score": min(1.0, len(members) / _SCORE_SATURATION[class_name]),
                })
                break
    detections.sort(key=lambda d: -d["score"])
    return detections
