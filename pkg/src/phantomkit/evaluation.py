"""Per-attempt success scoring and campaign aggregation.

An attempt succeeds when a detection of the injected class, with confidence
strictly above the threshold, overlaps the intended phantom box in BEV.
Campaigns run N seeded attempts per class and aggregate per-class and total
rows (attempts, successes, success rate, mean/median confidence of successes).
"""

import json
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import detector as surrogate
from . import geometry, kitti_io, phantom
from .geometry import Box3D
from .kitti_io import Scene
from .phantom import AttackAbortedError, AttackManifest, PhantomSpec
from .templates import TemplateLibrary

NO_DETECTION = "no-detection"
WRONG_CLASS = "wrong-class"
LOW_CONFIDENCE = "low-confidence"
NO_OVERLAP = "no-overlap"
ATTEMPT_ABORTED = "attempt-aborted"

FAILURE_REASONS = (NO_DETECTION, WRONG_CLASS, LOW_CONFIDENCE, NO_OVERLAP, ATTEMPT_ABORTED)

# Table-style reports name the car class "Vehicle"; both spellings are one class
CLASS_ALIASES = {"Vehicle": "Car"}

DEFAULT_CONFIDENCE_THRESHOLD = 0.5
DEFAULT_OVERLAP_THRESHOLD = 0.1


def normalize_class(name):
    return CLASS_ALIASES.get(name, name)


class CampaignConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttackOutcome:
    scene_id: str
    class_name: str
    success: bool
    matched_score: float = None
    matched_iou: float = None
    failure_reason: str = None

    def __post_init__(self):
        if self.success:
            if self.matched_score is None or self.matched_iou is None:
                raise ValueError("successful outcome needs matched score and IoU")
        elif self.failure_reason not in FAILURE_REASONS:
            raise ValueError(f"failed outcome needs a reason, got {self.failure_reason!r}")

    def to_dict(self):
        return {
            "scene_id": self.scene_id,
            "class_name": self.class_name,
            "success": self.success,
            "matched_score": self.matched_score,
            "matched_iou": self.matched_iou,
            "failure_reason": self.failure_reason,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(scene_id=d["scene_id"], class_name=d["class_name"],
                   success=d["success"], matched_score=d.get("matched_score"),
                   matched_iou=d.get("matched_iou"),
                   failure_reason=d.get("failure_reason"))


def match_detection(manifest: AttackManifest, detections,
                    confidence_threshold=DEFAULT_CONFIDENCE_THRESHOLD,
                    overlap_threshold=DEFAULT_OVERLAP_THRESHOLD) -> AttackOutcome:
    """Score one attempt. Among correct-class detections overlapping the
    intended box, the highest score wins (ties: higher IoU, then earlier
    index); success needs that score strictly above the threshold."""
    target = normalize_class(manifest.spec.class_name)
    if not detections:
        return AttackOutcome(manifest.scene_id, manifest.spec.class_name, False,
                             failure_reason=NO_DETECTION)
    same_class = [(i, det) for i, det in enumerate(detections)
                  if normalize_class(det.box.class_name) == target]
    if not same_class:
        return AttackOutcome(manifest.scene_id, manifest.spec.class_name, False,
                             failure_reason=WRONG_CLASS)
    overlapping = []
    for i, det in same_class:
        iou = geometry.bev_iou(det.box, manifest.phantom_box)
        if iou >= overlap_threshold:
            overlapping.append((i, det, iou))
    if not overlapping:
        return AttackOutcome(manifest.scene_id, manifest.spec.class_name, False,
                             failure_reason=NO_OVERLAP)
    best_i, best, best_iou = max(overlapping, key=lambda t: (t[1].score, t[2], -t[0]))
    if best.score > confidence_threshold:
        return AttackOutcome(manifest.scene_id, manifest.spec.class_name, True,
                             matched_score=best.score, matched_iou=best_iou)
    return AttackOutcome(manifest.scene_id, manifest.spec.class_name, False,
                         matched_score=best.score, matched_iou=best_iou,
                         failure_reason=LOW_CONFIDENCE)


class SurrogateDetector:
    """In-process detector adapter for campaigns."""

    def __init__(self, cfg=None):
        self.cfg = cfg or surrogate.DetectorConfig()

    def __call__(self, scene: Scene):
        return surrogate.detect(scene.cloud, scene.calib, self.cfg)


class ResultFileDetector:
    """Reads 16-field result files named <scene_id>.txt from a directory."""

    def __init__(self, results_dir):
        self.results_dir = results_dir

    def __call__(self, scene: Scene):
        path = os.path.join(self.results_dir, scene.scene_id + ".txt")
        with open(path) as f:
            labels = kitti_io.parse_labels(f.read())
        return [surrogate.label_to_detection(lab) for lab in labels]


def _attempt_seeds(seed, class_index, attempt_index):
    ss = np.random.SeedSequence((int(seed), int(class_index), int(attempt_index)))
    placement_seed, inject_seed = (int(v) for v in ss.generate_state(2, np.uint32))
    return placement_seed, inject_seed


def _run_attempt(scene, class_name, out_id, placement_seed, inject_seed, library,
                 detector_fn, out_root, inject, confidence_threshold,
                 overlap_threshold, forward_band, lateral_band, min_bbox_area):
    rng = np.random.default_rng(placement_seed)
    pool = library.by_class(class_name)
    template = pool[int(rng.integers(len(pool)))]
    placement = phantom.sample_placement(
        scene, class_name, rng, dims=library.median_dims(class_name),
        forward_band=forward_band, lateral_band=lateral_band,
        min_bbox_area=min_bbox_area)
    if placement is None:
        return AttackOutcome(out_id, class_name, False, failure_reason=ATTEMPT_ABORTED)
    location, yaw = placement
    spec = PhantomSpec(class_name, location, yaw, template.template_id, seed=inject_seed)
    if inject:
        try:
            manifest = phantom.augment_scene(scene, spec, library, out_root,
                                             output_scene_id=out_id)
        except AttackAbortedError:
            return AttackOutcome(out_id, class_name, False, failure_reason=ATTEMPT_ABORTED)
        observed = kitti_io.load_scene(out_root, out_id)
        detections = detector_fn(observed)
    else:
        # no-attack control: score the original scene against the intended box
        center_rect, ry = phantom._pose_to_rect(location, yaw, scene.calib)
        manifest = AttackManifest(
            scene_id=out_id, spec=spec,
            phantom_box=Box3D(tuple(center_rect), template.source_dims, ry, class_name),
            original_point_count=len(scene.cloud), injected_point_count=0,
            patch_bbox=geometry.ImageBBox(0, 0, 1, 1),
            consistency_fraction=0.0, source_scene_id=scene.scene_id)
        detections = detector_fn(scene)
    return match_detection(manifest, detections, confidence_threshold, overlap_threshold)


def run_campaign(scenes, classes, attempts_per_class, library: TemplateLibrary,
                 detector_fn, seed, out_root, inject=True,
                 confidence_threshold=DEFAULT_CONFIDENCE_THRESHOLD,
                 overlap_threshold=DEFAULT_OVERLAP_THRESHOLD,
                 forward_band=(20.0, 40.0), lateral_band=(-6.0, 6.0),
                 min_bbox_area=400.0, workers=1):
    """Run attempts_per_class seeded attacks per class, cycling through the
    given scenes (reuse is permitted and recorded). Augmented scenes land in
    out_root under sequential ids; outcomes go to out_root/outcomes.jsonl."""
    scenes = list(scenes)
    if not scenes:
        raise CampaignConfigError("campaign needs at least one scene")
    classes = list(classes)
    for cls in classes:
        if not library.by_class(cls):
            raise CampaignConfigError(f"library has no templates for {cls}")

    tasks = []
    counter = 0
    for ci, cls in enumerate(classes):
        for ai in range(attempts_per_class):
            scene = scenes[(ci * attempts_per_class + ai) % len(scenes)]
            out_id = f"{counter:06d}"
            counter += 1
            placement_seed, inject_seed = _attempt_seeds(seed, ci, ai)
            tasks.append((scene, cls, out_id, placement_seed, inject_seed))

    def runner(task):
        scene, cls, out_id, pseed, iseed = task
        return _run_attempt(scene, cls, out_id, pseed, iseed, library, detector_fn,
                            out_root, inject, confidence_threshold, overlap_threshold,
                            forward_band, lateral_band, min_bbox_area)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(runner, tasks))
    else:
        outcomes = [runner(t) for t in tasks]

    os.makedirs(out_root, exist_ok=True)
    write_outcomes(outcomes, os.path.join(out_root, "outcomes.jsonl"))
    return outcomes


def write_outcomes(outcomes, path):
    with open(path, "w") as f:
        for outcome in outcomes:
            f.write(json.dumps(outcome.to_dict()) + "\n")


def read_outcomes(path):
    outcomes = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                outcomes.append(AttackOutcome.from_dict(json.loads(line)))
    return outcomes


@dataclass(frozen=True)
class ClassRow:
    class_name: str
    attempts: int
    successes: int
    asr: float               # percent, exact successes/attempts*100
    mean_score: float = None
    median_score: float = None


@dataclass(frozen=True)
class CampaignSummary:
    rows: tuple
    total_attempts: int
    total_successes: int
    total_asr: float
    weighted_mean_score: float = None
    metadata: dict = field(default_factory=dict)


def _class_order(name):
    base = {"Car": 0, "Vehicle": 0, "Pedestrian": 1}
    return (base.get(name, 2), name)


def summarize(outcomes, include_aborted=True) -> CampaignSummary:
    """Aggregate outcomes into Table-style rows. Aborted attempts count in the
    denominator by default; medians of an even success count average the two
    middle scores."""
    aborted = sum(1 for o in outcomes if o.failure_reason == ATTEMPT_ABORTED)
    if not include_aborted:
        outcomes = [o for o in outcomes if o.failure_reason != ATTEMPT_ABORTED]
    by_class = {}
    for o in outcomes:
        by_class.setdefault(o.class_name, []).append(o)

    rows = []
    for cls in sorted(by_class, key=_class_order):
        group = by_class[cls]
        successes = [o for o in group if o.success]
        scores = [o.matched_score for o in successes]
        rows.append(ClassRow(
            class_name=cls,
            attempts=len(group),
            successes=len(successes),
            asr=100.0 * len(successes) / len(group) if group else 0.0,
            mean_score=statistics.fmean(scores) if scores else None,
            median_score=statistics.median(scores) if scores else None,
        ))

    total_attempts = sum(r.attempts for r in rows)
    total_successes = sum(r.successes for r in rows)
    weighted = None
    if total_successes:
        weighted = sum(r.successes * r.mean_score for r in rows if r.successes)
        weighted /= total_successes
    return CampaignSummary(
        rows=tuple(rows),
        total_attempts=total_attempts,
        total_successes=total_successes,
        total_asr=100.0 * total_successes / total_attempts if total_attempts else 0.0,
        weighted_mean_score=weighted,
        metadata={"aborted": aborted, "include_aborted": include_aborted},
    )


_TABLE_COLUMNS = ("Class", "Attempts", "Successes", "ASR (%)", "Mean", "Median")


def render_summary_table(summary: CampaignSummary) -> str:
    """Fixed-width text table; Car/Vehicle rows first, Total last."""
    def fmt(value, pattern):
        return "N/A" if value is None else pattern.format(value)

    rows = [[r.class_name, str(r.attempts), str(r.successes),
             f"{r.asr:.1f}%", fmt(r.mean_score, "{:.2f}"),
             fmt(r.median_score, "{:.2f}")] for r in summary.rows]
    if summary.rows:
        rows.append(["Total", str(summary.total_attempts), str(summary.total_successes),
                     f"{summary.total_asr:.1f}%",
                     fmt(summary.weighted_mean_score, "{:.2f}"), "N/A"])
    widths = [max(len(_TABLE_COLUMNS[i]), *(len(r[i]) for r in rows)) if rows
              else len(_TABLE_COLUMNS[i]) for i in range(len(_TABLE_COLUMNS))]
    lines = []
    header = "  ".join(_TABLE_COLUMNS[i].ljust(widths[i]) for i in range(len(widths)))
    lines.append(header.rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        cells = [row[0].ljust(widths[0])]
        cells += [row[i].rjust(widths[i]) for i in range(1, len(widths))]
        lines.append("  ".join(cells).rstrip())
    return "".join(line + "\n" for line in lines)


def summary_to_dict(summary: CampaignSummary):
    return {
        "rows": [{"class_name": r.class_name, "attempts": r.attempts,
                  "successes": r.successes, "asr": r.asr,
                  "mean_score": r.mean_score, "median_score": r.median_score}
                 for r in summary.rows],
        "total": {"attempts": summary.total_attempts,
                  "successes": summary.total_successes,
                  "asr": summary.total_asr,
                  "weighted_mean_score": summary.weighted_mean_score},
        "metadata": summary.metadata,
    }


def evaluate_results(manifest_root, results_dir,
                     confidence_threshold=DEFAULT_CONFIDENCE_THRESHOLD,
                     overlap_threshold=DEFAULT_OVERLAP_THRESHOLD):
    """Score persisted result files against the manifests of an augmented tree."""
    manifest_dir = os.path.join(manifest_root, "manifests")
    outcomes = []
    for name in sorted(os.listdir(manifest_dir)):
        if not name.endswith(".json"):
            continue
        scene_id = name[:-len(".json")]
        manifest = phantom.read_manifest(manifest_root, scene_id)
        path = os.path.join(results_dir, scene_id + ".txt")
        with open(path) as f:
            labels = kitti_io.parse_labels(f.read())
        detections = [surrogate.label_to_detection(lab) for lab in labels]
        outcomes.append(match_detection(manifest, detections,
                                        confidence_threshold, overlap_threshold))
    return outcomes
