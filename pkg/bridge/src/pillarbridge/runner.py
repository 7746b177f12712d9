"""Batch inference over a KITTI-layout tree: one 16-field result file per
scene plus a run-metadata record. The bridge only writes into output_dir; the
input tree is never touched."""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import cluster, kitti
from .config import BridgeConfig, BridgeConfigError
from .convert import convert_detections

DEFAULT_IMAGE_SIZE = (1242, 375)


class StartupError(RuntimeError):
    pass


@dataclass
class RunResult:
    written: list = field(default_factory=list)
    skipped: list = field(default_factory=list)   # (scene_id, reason)
    dropped_classes: int = 0

    @property
    def ok(self):
        return not self.skipped


def _sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _make_backend(cfg: BridgeConfig):
    """Returns (detect_fn(points) -> native dicts, metadata dict)."""
    if cfg.model == "cluster":
        def run(points):
            return [d for d in cluster.detect_clusters(points)
                    if d["score"] >= cfg.score_floor]
        return run, {"model": cfg.model, "checkpoint_sha256": None,
                     "framework": "numpy"}
    if cfg.model.startswith("pointpillars"):
        import torch
        from . import model as pp
        if not os.path.isfile(cfg.checkpoint):
            raise StartupError(f"checkpoint not found: {cfg.checkpoint}")
        try:
            net = pp.load_model(cfg.model, cfg.checkpoint)
        except Exception as exc:
            raise StartupError(f"cannot load checkpoint {cfg.checkpoint}: {exc}")
        torch.manual_seed(0)

        def run(points):
            return pp.detect_pointpillars(net, points, cfg.score_floor)
        return run, {"model": cfg.model,
                     "checkpoint_sha256": _sha256_file(cfg.checkpoint),
                     "framework": f"torch-{torch.__version__}"}
    raise StartupError(f"unknown model {cfg.model!r}")


def run_inference(cfg: BridgeConfig, scene_ids=None) -> RunResult:
    if not os.path.isdir(os.path.join(cfg.input_root, "velodyne")):
        raise StartupError(f"no velodyne/ under {cfg.input_root}")
    available = kitti.scene_ids(cfg.input_root)
    ids = scene_ids if scene_ids is not None else cfg.scene_list(available)
    if not ids:
        raise StartupError("no scenes to process")
    for sid in ids:
        paths = kitti.scene_paths(cfg.input_root, sid)
        for component in ("velodyne", "calib"):
            if not os.path.isfile(paths[component]):
                raise StartupError(f"scene {sid}: missing {component} file")

    detect, backend_meta = _make_backend(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    result = RunResult()
    for sid in ids:
        paths = kitti.scene_paths(cfg.input_root, sid)
        try:
            points = kitti.read_velodyne(paths["velodyne"])
            calib = kitti.Calib.read(paths["calib"])
            if os.path.isfile(paths["image"]):
                image_size = kitti.png_size(paths["image"])
            else:
                image_size = DEFAULT_IMAGE_SIZE
            if len(points) == 0 and cfg.on_empty == "skip":
                result.skipped.append((sid, "empty point cloud"))
                continue
            detections = detect(points) if len(points) else []
            lines, dropped = convert_detections(detections, calib, image_size)
            result.dropped_classes += dropped
            with open(os.path.join(cfg.output_dir, sid + ".txt"), "w") as f:
                f.write("".join(line + "\n" for line in lines))
            result.written.append(sid)
        except Exception as exc:
            result.skipped.append((sid, str(exc)))

    metadata = {
        **backend_meta,
        "config_sha256": hashlib.sha256(cfg.canonical_text().encode()).hexdigest(),
        "device": cfg.device,
        "score_floor": cfg.score_floor,
        "scenes_written": result.written,
        "scenes_skipped": [{"scene_id": s, "reason": r} for s, r in result.skipped],
        "dropped_foreign_class_detections": result.dropped_classes,
    }
    with open(os.path.join(cfg.output_dir, "run_metadata.json"), "w") as f:
        json.dump(metadata, f, indent=1)
        f.write("\n")
    return result
