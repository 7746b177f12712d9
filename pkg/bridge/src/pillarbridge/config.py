"""Bridge run configuration: flat `key = value` file plus CLI overrides."""

import os
from dataclasses import dataclass, field

KNOWN_KEYS = ("model", "checkpoint", "input_root", "output_dir", "score_floor",
              "device", "scenes", "on_empty")

CONFIG_TEMPLATE = """\
# detector backend: cluster (no weights needed) or pointpillars-compact
model = cluster
# checkpoint path, required for pointpillars backends
checkpoint =
# KITTI-layout tree to read (velodyne/ and calib/ required per scene)
input_root =
# where <scene_id>.txt result files and run_metadata.json go
output_dir =
# detections below this score are not emitted
score_floor = 0.05
device = cpu
# comma-separated scene ids, or all
scenes = all
# empty point cloud handling: emit-empty or skip
on_empty = emit-empty
"""


class BridgeConfigError(ValueError):
    pass


@dataclass
class BridgeConfig:
    input_root: str
    output_dir: str
    model: str = "cluster"
    checkpoint: str = ""
    score_floor: float = 0.05
    device: str = "cpu"
    scenes: str = "all"
    on_empty: str = "emit-empty"

    def __post_init__(self):
        if not (0.0 <= self.score_floor <= 1.0):
            raise BridgeConfigError(f"score_floor {self.score_floor} outside [0, 1]")
        if self.on_empty not in ("emit-empty", "skip"):
            raise BridgeConfigError(f"on_empty must be emit-empty or skip")
        if self.model.startswith("pointpillars") and not self.checkpoint:
            raise BridgeConfigError(f"model {self.model} needs a checkpoint path")

    def scene_list(self, available):
        if self.scenes.strip() in ("", "all"):
            return list(available)
        return [s.strip() for s in self.scenes.split(",") if s.strip()]

    def canonical_text(self):
        """Stable representation hashed into the run metadata."""
        pairs = [
            ("model", self.model), ("checkpoint", self.checkpoint),
            ("input_root", os.path.abspath(self.input_root)),
            ("score_floor", repr(self.score_floor)), ("device", self.device),
            ("scenes", self.scenes), ("on_empty", self.on_empty),
        ]
        return "".join(f"{k}={v}\n" for k, v in pairs)


def parse_config_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BridgeConfigError(f"line {lineno}: expected key = value")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise BridgeConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = val
    return values


def load_config(path, overrides=None):
    with open(path) as f:
        values = parse_config_text(f.read())
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_values(values)


def config_from_values(values):
    required = [k for k in ("input_root", "output_dir") if not values.get(k)]
    if required:
        raise BridgeConfigError(f"missing required config: {required}")
    return BridgeConfig(
        input_root=values["input_root"],
        output_dir=values["output_dir"],
        model=values.get("model", "cluster") or "cluster",
        checkpoint=values.get("checkpoint", ""),
        score_floor=float(values.get("score_floor", 0.05)),
        device=values.get("device", "cpu") or "cpu",
        scenes=values.get("scenes", "all") or "all",
        on_empty=values.get("on_empty", "emit-empty") or "emit-empty",
    )
