"""Command-line entry point.

Subcommands: make-scenes, extract-templates, inject, campaign, detect,
evaluate, render, replay. Exit codes: 0 success, 1 operational error (single
diagnostic line on stderr), 2 usage error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import evaluation, kitti_io, phantom, render, synthetic, templates
from .config import Config
from .detector import detect as surrogate_detect
from .detector import detection_to_label
from .evaluation import ResultFileDetector, SurrogateDetector
from .phantom import PhantomSpec
from .templates import TemplateLibrary


def _scene_ids(data_root, spec):
    if spec and spec != "all":
        return [s.strip() for s in spec.split(",") if s.strip()]
    velo = os.path.join(data_root, "velodyne")
    ids = sorted(name[:-4] for name in os.listdir(velo) if name.endswith(".bin"))
    if not ids:
        raise RuntimeError(f"no scenes found under {velo}")
    return ids


def _load_config(args):
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    return cfg


def _parse_range(text):
    lo, _, hi = text.partition(":")
    return (float(lo), float(hi))


def cmd_make_scenes(args):
    ids = synthetic.make_dataset(args.out, args.count, seed=args.seed,
                                 objects_per_scene=args.objects_per_scene)
    print(f"wrote {len(ids)} scenes under {args.out} ({ids[0]}..{ids[-1]})")
    return 0


def cmd_extract_templates(args):
    cfg = _load_config(args)
    min_points = args.min_points if args.min_points is not None \
        else cfg.get_int("template_min_points")
    ids = _scene_ids(args.data_root, args.scenes)
    scenes = [kitti_io.load_scene(args.data_root, sid) for sid in ids]
    classes = [c.strip() for c in args.classes.split(",")]
    library = templates.extract_templates(scenes, classes, min_points=min_points)
    library.save(args.out)
    counts = {cls: len(library.by_class(cls)) for cls in classes}
    print(f"extracted {len(library)} templates into {args.out} {counts}")
    return 0


def cmd_inject(args):
    cfg = _load_config(args)
    scene = kitti_io.load_scene(args.data_root, args.scene)
    library = TemplateLibrary.load(args.templates)
    class_name = args.class_name
    rng = np.random.default_rng(args.seed)
    if args.location:
        x, y = (float(v) for v in args.location.split(","))
        z = phantom.estimate_ground_height(scene.cloud, x, y)
        location = (x, y, z)
        yaw = float(args.yaw) if args.yaw is not None else 0.0
    else:
        placement = phantom.sample_placement(
            scene, class_name, rng, dims=library.median_dims(class_name),
            forward_band=_parse_range(args.range) if args.range else cfg.forward_band(),
            lateral_band=cfg.lateral_band(),
            min_bbox_area=cfg.get_float("min_bbox_area"))
        if placement is None:
            raise RuntimeError("no valid placement found for this scene")
        location, yaw = placement
    template_id = args.template
    if template_id is None:
        pool = library.by_class(class_name)
        if not pool:
            raise RuntimeError(f"library has no {class_name} templates")
        template_id = pool[int(rng.integers(len(pool)))].template_id
    spec = PhantomSpec(class_name, location, yaw, template_id, seed=args.seed)
    manifest = phantom.augment_scene(scene, spec, library, args.out,
                                     output_scene_id=args.output_id)
    print(f"scene {manifest.scene_id}: injected {manifest.injected_point_count} points, "
          f"patch {manifest.patch_bbox.width:.0f}x{manifest.patch_bbox.height:.0f} px, "
          f"consistency {manifest.consistency_fraction:.3f}")
    return 0


def _detector_from_flag(flag, cfg):
    if flag == "surrogate":
        return SurrogateDetector(cfg.detector_config())
    if flag.startswith("results:"):
        return ResultFileDetector(flag.split(":", 1)[1])
    raise RuntimeError(f"unknown detector {flag!r} (use surrogate or results:DIR)")


def cmd_campaign(args):
    cfg = _load_config(args)
    ids = _scene_ids(args.data_root, args.scenes)
    scenes = [kitti_io.load_scene(args.data_root, sid) for sid in ids]
    library = TemplateLibrary.load(args.templates)
    classes = [c.strip() for c in args.classes.split(",")]
    detector_fn = _detector_from_flag(args.detector, cfg)
    forward = _parse_range(args.range) if args.range else cfg.forward_band()
    conf = args.confidence_threshold if args.confidence_threshold is not None \
        else cfg.get_float("confidence_threshold")
    iou = args.overlap_iou if args.overlap_iou is not None else cfg.get_float("overlap_iou")
    outcomes = evaluation.run_campaign(
        scenes, classes, args.attempts, library, detector_fn,
        seed=args.seed, out_root=args.out, inject=not args.no_inject,
        confidence_threshold=conf, overlap_threshold=iou,
        forward_band=forward, lateral_band=cfg.lateral_band(),
        min_bbox_area=cfg.get_float("min_bbox_area"), workers=args.workers)
    summary = evaluation.summarize(outcomes, include_aborted=not args.exclude_aborted)
    table = evaluation.render_summary_table(summary)
    with open(os.path.join(args.out, "summary.txt"), "w") as f:
        f.write(table)
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(evaluation.summary_to_dict(summary), f, indent=1)
        f.write("\n")
    print(table, end="")
    return 0


def cmd_detect(args):
    cfg = _load_config(args)
    ids = _scene_ids(args.data_root, args.scenes)
    os.makedirs(args.out, exist_ok=True)
    detector_cfg = cfg.detector_config()
    for sid in ids:
        scene = kitti_io.load_scene(args.data_root, sid)
        dets = surrogate_detect(scene.cloud, scene.calib, detector_cfg)
        labels = [detection_to_label(d, scene.calib, scene.image_size) for d in dets]
        with open(os.path.join(args.out, sid + ".txt"), "w") as f:
            f.write(kitti_io.write_labels(labels))
    print(f"wrote {len(ids)} result files to {args.out}")
    return 0


def cmd_evaluate(args):
    cfg = _load_config(args)
    conf = args.confidence_threshold if args.confidence_threshold is not None \
        else cfg.get_float("confidence_threshold")
    iou = args.overlap_iou if args.overlap_iou is not None else cfg.get_float("overlap_iou")
    if args.outcomes:
        outcomes = evaluation.read_outcomes(args.outcomes)
    else:
        outcomes = evaluation.evaluate_results(args.manifests_root, args.results,
                                               confidence_threshold=conf,
                                               overlap_threshold=iou)
    summary = evaluation.summarize(outcomes, include_aborted=not args.exclude_aborted)
    table = evaluation.render_summary_table(summary)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        evaluation.write_outcomes(outcomes, os.path.join(args.out, "outcomes.jsonl"))
        with open(os.path.join(args.out, "summary.txt"), "w") as f:
            f.write(table)
        with open(os.path.join(args.out, "summary.json"), "w") as f:
            json.dump(evaluation.summary_to_dict(summary), f, indent=1)
            f.write("\n")
    print(table, end="")
    return 0


def cmd_render(args):
    cfg = _load_config(args)
    style = render.RenderStyle.from_config(cfg)
    scene = kitti_io.load_scene(args.tree, args.scene)
    manifest = None
    manifest_file = phantom.manifest_path(args.tree, args.scene)
    if os.path.isfile(manifest_file):
        manifest = phantom.read_manifest(args.tree, args.scene)
    detections = None
    if args.results:
        detections = ResultFileDetector(args.results)(scene)
    boxes = render.scene_boxes(scene, manifest=manifest, detections=detections)
    if args.mode == "bev":
        raster = render.render_bev(scene.cloud, boxes, scene.calib, style)
    else:
        raster = render.render_overlay(scene.image, boxes, scene.calib, style)
    kitti_io.save_image(raster, args.out)
    print(f"wrote {args.mode} render to {args.out}")
    return 0


def cmd_replay(args):
    manifest_dir = os.path.join(args.tree, "manifests")
    if args.scene:
        ids = [args.scene]
    else:
        ids = sorted(n[:-len(".json")] for n in os.listdir(manifest_dir)
                     if n.endswith(".json"))
    bad = 0
    for sid in ids:
        manifest, fraction = phantom.replay_consistency(args.tree, sid)
        ok = fraction == manifest.consistency_fraction
        bad += 0 if ok else 1
        print(f"{sid}: manifest {manifest.consistency_fraction:.6f} "
              f"recomputed {fraction:.6f} {'OK' if ok else 'MISMATCH'}")
    if bad:
        raise RuntimeError(f"{bad} of {len(ids)} manifests failed replay")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="phantomkit",
        description="Coordinated camera-LiDAR phantom injection on KITTI-format scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data_root=False):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="flat key=value config file")
        if data_root:
            p.add_argument("--data-root", required=True, help="KITTI-layout input tree")

    p = sub.add_parser("make-scenes", help="generate procedural KITTI-format scenes")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--objects-per-scene", type=int, default=1)
    p.set_defaults(func=cmd_make_scenes)

    p = sub.add_parser("extract-templates", help="harvest object templates")
    common(p, data_root=True)
    p.add_argument("--scenes", default="all", help="comma-separated ids or 'all'")
    p.add_argument("--classes", default="Car,Pedestrian")
    p.add_argument("--min-points", type=int, default=None)
    p.add_argument("--out", required=True, help="template library directory")
    p.set_defaults(func=cmd_extract_templates)

    p = sub.add_parser("inject", help="augment one scene with a phantom")
    common(p, data_root=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--templates", required=True)
    p.add_argument("--class", dest="class_name", default="Car",
                   choices=list(phantom.ATTACK_CLASSES))
    p.add_argument("--template", default=None, help="template id (default: seeded pick)")
    p.add_argument("--location", default=None, help="x,y LiDAR meters (default: sampled)")
    p.add_argument("--yaw", type=float, default=None)
    p.add_argument("--range", default=None, help="forward band lo:hi, e.g. 20:40")
    p.add_argument("--out", required=True)
    p.add_argument("--output-id", default=None)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("campaign", help="batch attack + detect + score")
    common(p, data_root=True)
    p.add_argument("--scenes", default="all")
    p.add_argument("--classes", default="Car,Pedestrian")
    p.add_argument("--attempts", type=int, required=True, help="attempts per class")
    p.add_argument("--templates", required=True)
    p.add_argument("--detector", default="surrogate", help="surrogate | results:DIR")
    p.add_argument("--range", default=None)
    p.add_argument("--confidence-threshold", type=float, default=None)
    p.add_argument("--overlap-iou", type=float, default=None)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--no-inject", action="store_true",
                   help="control run: score original scenes against intended boxes")
    p.add_argument("--exclude-aborted", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("detect", help="run the surrogate detector")
    common(p, data_root=True)
    p.add_argument("--scenes", default="all")
    p.add_argument("--out", required=True, help="result-file directory")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score result files against manifests")
    common(p)
    p.add_argument("--manifests-root", help="augmented tree containing manifests/")
    p.add_argument("--results", help="directory of 16-field result files")
    p.add_argument("--outcomes", help="summarize an existing outcomes.jsonl instead")
    p.add_argument("--confidence-threshold", type=float, default=None)
    p.add_argument("--overlap-iou", type=float, default=None)
    p.add_argument("--exclude-aborted", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="BEV or camera-overlay figure")
    common(p)
    p.add_argument("--tree", required=True, help="KITTI-layout tree (augmented or not)")
    p.add_argument("--scene", required=True)
    p.add_argument("--mode", choices=["bev", "overlay"], default="bev")
    p.add_argument("--results", default=None, help="draw detections from result files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("replay", help="re-verify manifests from persisted artifacts")
    common(p)
    p.add_argument("--tree", required=True)
    p.add_argument("--scene", default=None)
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "evaluate" and not args.outcomes \
            and not (args.manifests_root and args.results):
        parser.error("evaluate needs --outcomes or both --manifests-root and --results")
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # one-line diagnostic, exit 1
        print(f"phantomkit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
