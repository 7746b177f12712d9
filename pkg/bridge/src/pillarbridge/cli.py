"""Bridge command line. Exit codes mirror the attack toolkit: 0 success,
1 operational error or any per-scene skip, 2 usage error."""

import argparse
import sys

from .config import CONFIG_TEMPLATE, config_from_values, load_config
from .runner import run_inference


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pillarbridge",
        description="Run a 3D detector over a KITTI-layout tree, emitting "
                    "16-field result files")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run inference")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--input-root")
    p.add_argument("--output-dir")
    p.add_argument("--model", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--scenes", default=None, help="comma-separated ids or all")
    p.add_argument("--score-floor", type=float, default=None)
    p.add_argument("--device", default=None)
    p.set_defaults(cmd="run")

    p = sub.add_parser("write-config", help="emit a commented config template")
    p.add_argument("--out", required=True)
    p.set_defaults(cmd="write-config")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.cmd == "write-config":
            with open(args.out, "w") as f:
                f.write(CONFIG_TEMPLATE)
            print(f"wrote config template to {args.out}")
            return 0
        overrides = {
            "input_root": args.input_root, "output_dir": args.output_dir,
            "model": args.model, "checkpoint": args.checkpoint,
            "scenes": args.scenes, "device": args.device,
            "score_floor": None if args.score_floor is None else str(args.score_floor),
        }
        if args.config:
            cfg = load_config(args.config, overrides)
        else:
            cfg = config_from_values({k: v for k, v in overrides.items()
                                      if v is not None})
        result = run_inference(cfg)
        print(f"wrote {len(result.written)} result files to {cfg.output_dir}"
              + (f", skipped {len(result.skipped)}" if result.skipped else ""))
        for sid, reason in result.skipped:
            print(f"  skipped {sid}: {reason}", file=sys.stderr)
        return 0 if result.ok else 1
    except Exception as exc:
        print(f"pillarbridge: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
