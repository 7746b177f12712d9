"""Compact PointPillars-class detector: pillar feature encoder, BEV scatter,
a small convolutional backbone and a single-shot anchor head. Weights come
from a checkpoint in this module's own state_dict layout; the model identifier
pins the architecture hyperparameters and is recorded in the run metadata.
"""

import math

import numpy as np
import torch
from torch import nn

ARCHITECTURES = {
    "pointpillars-compact": {
        "x_range": (0.0, 69.12),
        "y_range": (-39.68, 39.68),
        "z_range": (-3.0, 1.0),
        "pillar_size": 0.32,
        "max_pillars": 12000,
        "max_points": 32,
        "pillar_channels": 64,
        "head_stride": 2,
        "anchors": [
            # class, (w, l, h), center z, two yaw hypotheses handled in the head
            ("Car", (1.6, 3.9, 1.56), -1.0),
            ("Pedestrian", (0.6, 0.8, 1.73), -0.6),
        ],
        "nms_iou": 0.5,
        "max_detections": 100,
    },
}


class UnknownModelError(ValueError):
    pass


def architecture(model_id):
    try:
        return ARCHITECTURES[model_id]
    except KeyError:
        raise UnknownModelError(
            f"unknown model {model_id!r}; known: {sorted(ARCHITECTURES)}") from None


def voxelize(points, arch):
    """Group points into pillars. Returns (features (P, N, 9), mask (P, N),
    pillar grid coordinates (P, 2)) with deterministic pillar order."""
    x0, x1 = arch["x_range"]
    y0, y1 = arch["y_range"]
    z0, z1 = arch["z_range"]
    size = arch["pillar_size"]
    in_range = ((points[:, 0] >= x0) & (points[:, 0] < x1)
                & (points[:, 1] >= y0) & (points[:, 1] < y1)
                & (points[:, 2] >= z0) & (points[:, 2] < z1))
    pts = points[in_range].astype(np.float64)
    if len(pts) == 0:
        return (np.zeros((0, arch["max_points"], 9), np.float32),
                np.zeros((0, arch["max_points"]), bool), np.zeros((0, 2), np.int64))
    px = np.floor((pts[:, 0] - x0) / size).astype(np.int64)
    py = np.floor((pts[:, 1] - y0) / size).astype(np.int64)
    keys = np.stack([px, py], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    if len(uniq) > arch["max_pillars"]:
        # deterministic cap: keep the lowest pillar ids
        keep = np.zeros(len(uniq), dtype=bool)
        keep[:arch["max_pillars"]] = True
        point_keep = keep[inverse]
        pts, inverse = pts[point_keep], inverse[point_keep]
        uniq = uniq[: arch["max_pillars"]]
    n_pillars = len(uniq)
    n_max = arch["max_points"]
    feats = np.zeros((n_pillars, n_max, 9), dtype=np.float64)
    mask = np.zeros((n_pillars, n_max), dtype=bool)
    order = np.argsort(inverse, kind="stable")
    sorted_pts = pts[order]
    sorted_inv = inverse[order]
    starts = np.searchsorted(sorted_inv, np.arange(n_pillars))
    ends = np.append(starts[1:], len(sorted_inv))
    centers_x = x0 + (uniq[:, 0] + 0.5) * size
    centers_y = y0 + (uniq[:, 1] + 0.5) * size
    for p in range(n_pillars):
        group = sorted_pts[starts[p]:ends[p]][:n_max]
        k = len(group)
        mean = group[:, :3].mean(axis=0)
        feats[p, :k, 0:4] = group[:, :4]
        feats[p, :k, 4:7] = group[:, :3] - mean
        feats[p, :k, 7] = group[:, 0] - centers_x[p]
        feats[p, :k, 8] = group[:, 1] - centers_y[p]
        mask[p, :k] = True
    return feats.astype(np.float32), mask, uniq


class PillarEncoder(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.linear = nn.Linear(9, channels, bias=False)
        self.norm = nn.BatchNorm1d(channels)

    def forward(self, feats, mask):
        x = self.linear(feats)                      # (P, N, C)
        x = self.norm(x.transpose(1, 2)).transpose(1, 2)
        x = torch.relu(x)
        x = x.masked_fill(~mask.unsqueeze(-1), float("-inf"))
        return x.max(dim=1).values                  # (P, C)


def _conv(cin, cout, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
                         nn.BatchNorm2d(cout), nn.ReLU())


class PointPillarsCompact(nn.Module):
    """Single-scale SSD head over a 2x-downsampled BEV feature map."""

    def __init__(self, model_id="pointpillars-compact"):
        super().__init__()
        self.model_id = model_id
        arch = architecture(model_id)
        self.arch = arch
        c = arch["pillar_channels"]
        self.encoder = PillarEncoder(c)
        self.block1 = nn.Sequential(_conv(c, c, stride=2), _conv(c, c))
        self.block2 = nn.Sequential(_conv(c, 2 * c, stride=2), _conv(2 * c, 2 * c))
        self.up2 = nn.Sequential(
            nn.ConvTranspose2d(2 * c, c, 2, stride=2, bias=False),
            nn.BatchNorm2d(c), nn.ReLU())
        # two yaw hypotheses (0, pi/2) per class anchor
        self.n_anchors = 2 * len(arch["anchors"])
        head_in = 2 * c
        self.cls_head = nn.Conv2d(head_in, self.n_anchors, 1)
        self.box_head = nn.Conv2d(head_in, self.n_anchors * 7, 1)
        self.dir_head = nn.Conv2d(head_in, self.n_anchors * 2, 1)

    def grid_shape(self):
        arch = self.arch
        nx = int(round((arch["x_range"][1] - arch["x_range"][0]) / arch["pillar_size"]))
        ny = int(round((arch["y_range"][1] - arch["y_range"][0]) / arch["pillar_size"]))
        return nx, ny

    def forward(self, feats, mask, coords):
        nx, ny = self.grid_shape()
        pillar_features = self.encoder(feats, mask)      # (P, C)
        canvas = torch.zeros(self.encoder.linear.out_features, nx * ny,
                             dtype=pillar_features.dtype)
        flat = coords[:, 0] * ny + coords[:, 1]
        canvas[:, flat] = pillar_features.t()
        canvas = canvas.view(1, -1, nx, ny)
        d1 = self.block1(canvas)
        d2 = self.block2(d1)
        features = torch.cat([d1, self.up2(d2)], dim=1)  # stride-2 map
        return (self.cls_head(features), self.box_head(features),
                self.dir_head(features))


def _anchor_grid(model):
    """(A, H, W, 7) anchors: x, y, z-center, w, l, h, yaw."""
    arch = model.arch
    nx, ny = model.grid_shape()
    stride = arch["head_stride"]
    hx, hy = nx // stride, ny // stride
    step = arch["pillar_size"] * stride
    xs = arch["x_range"][0] + (np.arange(hx) + 0.5) * step
    ys = arch["y_range"][0] + (np.arange(hy) + 0.5) * step
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    anchors = []
    for class_name, (w, l, h), zc in arch["anchors"]:
        for yaw in (0.0, math.pi / 2):
            a = np.zeros((hx, hy, 7))
            a[..., 0], a[..., 1], a[..., 2] = gx, gy, zc
            a[..., 3], a[..., 4], a[..., 5], a[..., 6] = w, l, h, yaw
            anchors.append(a)
    return np.stack(anchors)


def _anchor_classes(arch):
    out = []
    for class_name, _, _ in arch["anchors"]:
        out += [class_name, class_name]
    return out


def _decode(anchors, deltas):
    diag = np.sqrt(anchors[:, 3] ** 2 + anchors[:, 4] ** 2)
    out = np.empty_like(anchors)
    out[:, 0] = deltas[:, 0] * diag + anchors[:, 0]
    out[:, 1] = deltas[:, 1] * diag + anchors[:, 1]
    out[:, 2] = deltas[:, 2] * anchors[:, 5] + anchors[:, 2]
    out[:, 3] = anchors[:, 3] * np.exp(np.clip(deltas[:, 3], -4, 4))
    out[:, 4] = anchors[:, 4] * np.exp(np.clip(deltas[:, 4], -4, 4))
    out[:, 5] = anchors[:, 5] * np.exp(np.clip(deltas[:, 5], -4, 4))
    out[:, 6] = anchors[:, 6] + deltas[:, 6]
    return out


def _bev_nms(boxes, scores, iou_threshold, max_out):
    """Greedy NMS over axis-aligned BEV extents (documented approximation)."""
    if len(boxes) == 0:
        return []
    half_w = np.maximum(boxes[:, 3], boxes[:, 4]) / 2.0
    x0, x1 = boxes[:, 0] - half_w, boxes[:, 0] + half_w
    y0, y1 = boxes[:, 1] - half_w, boxes[:, 1] + half_w
    order = np.argsort(-scores, kind="stable")
    keep = []
    while len(order) and len(keep) < max_out:
        i = order[0]
        keep.append(int(i))
        if len(order) == 1:
            break
        rest = order[1:]
        iw = np.maximum(0, np.minimum(x1[i], x1[rest]) - np.maximum(x0[i], x0[rest]))
        ih = np.maximum(0, np.minimum(y1[i], y1[rest]) - np.maximum(y0[i], y0[rest]))
        inter = iw * ih
        area_i = (x1[i] - x0[i]) * (y1[i] - y0[i])
        area_r = (x1[rest] - x0[rest]) * (y1[rest] - y0[rest])
        iou = inter / np.maximum(1e-9, area_i + area_r - inter)
        order = rest[iou < iou_threshold]
    return keep


def load_model(model_id, checkpoint_path):
    model = PointPillarsCompact(model_id)
    state = torch.load(checkpoint_path, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    model.load_state_dict(state)
    model.eval()
    return model


@torch.no_grad()
def detect_pointpillars(model, points, score_floor):
    """Native detection dicts (LiDAR frame, bottom-center locations)."""
    arch = model.arch
    feats, mask, coords = voxelize(points, arch)
    if len(feats) == 0:
        return []
    cls_map, box_map, dir_map = model(
        torch.from_numpy(feats), torch.from_numpy(mask), torch.from_numpy(coords))
    n_anchors = model.n_anchors
    scores = torch.sigmoid(cls_map)[0].numpy()                 # (A, H, W)
    boxes = box_map[0].numpy().reshape(n_anchors, 7, *scores.shape[1:])
    dirs = dir_map[0].numpy().reshape(n_anchors, 2, *scores.shape[1:])
    anchors = _anchor_grid(model)                              # (A, H, W, 7)
    classes = _anchor_classes(arch)

    flat_scores = scores.reshape(n_anchors, -1)
    flat_boxes = boxes.reshape(n_anchors, 7, -1)
    flat_dirs = dirs.reshape(n_anchors, 2, -1)
    flat_anchors = anchors.reshape(n_anchors, -1, 7)

    out_boxes, out_scores, out_classes = [], [], []
    for a in range(n_anchors):
        sel = np.flatnonzero(flat_scores[a] >= score_floor)
        if not len(sel):
            continue
        decoded = _decode(flat_anchors[a][sel], flat_boxes[a][:, sel].T)
        flip = flat_dirs[a][1, sel] > flat_dirs[a][0, sel]
        decoded[flip, 6] += math.pi
        out_boxes.append(decoded)
        out_scores.append(flat_scores[a][sel])
        out_classes += [classes[a]] * len(sel)
    if not out_boxes:
        return []
    all_boxes = np.concatenate(out_boxes)
    all_scores = np.concatenate(out_scores)
    keep = _bev_nms(all_boxes, all_scores, arch["nms_iou"], arch["max_detections"])
    detections = []
    for i in keep:
        b = all_boxes[i]
        yaw = math.atan2(math.sin(b[6]), math.cos(b[6]))
        detections.append({
            "class_name": out_classes[i],
            "location": (float(b[0]), float(b[1]), float(b[2] - b[5] / 2.0)),
            "dims": (float(b[5]), float(b[3]), float(b[4])),
            "yaw": yaw,
            "score": float(all_scores[i]),
        })
    return detections
