"""Command line entry point: ``geotagger <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .pipeline import STAGES, ConfigError, PipelineConfig, StageError, run_pipeline
from .sfm.poses import MODES

log = logging.getLogger("geotagger")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="INI run configuration")
    p.add_argument("--seed", type=int, help="override [run] seed")
    p.add_argument("--stage-dir", type=Path, help="override [paths] output_dir")
    p.add_argument("--mode", choices=MODES, help="override [sfm] mode")
    p.add_argument("--verbose", "-v", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="geotagger", description="Geotag street objects from panorama detections.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "split-views": "write the rectilinear view layout of every panorama",
        "refine-poses": "correct camera metadata from image matches",
        "build-graph": "cast detection rays and intersect them",
        "solve-mrf": "label intersection nodes occupied or empty",
        "cluster": "group occupied nodes into objects",
        "apply-prior": "shift objects with the map prior and write predictions",
        "report": "render figures from the stage directory",
        "run-all": "run every stage and write the manifest",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    ev = sub.add_parser("evaluate", parents=[common], help="score predictions against ground truth")
    ev.add_argument("--counts", type=Path, help="JSON lines of {label, n_actual, n_detected, tp}")

    sy = sub.add_parser("synth", help="write a synthetic street scene and a config for it")
    sy.add_argument("--out", type=Path, required=True)
    sy.add_argument("--cameras", type=int, default=5)
    sy.add_argument("--objects", type=int, default=3)
    sy.add_argument("--gps-noise", type=float, default=0.0, help="GPS noise sigma, m")
    sy.add_argument("--heading-noise", type=float, default=0.0, help="heading noise sigma, deg")
    sy.add_argument("--pixel-noise", type=float, default=0.0)
    sy.add_argument("--outlier-rate", type=float, default=0.0)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--mode", choices=MODES, default="full")
    sy.add_argument("--verbose", "-v", action="count", default=0)
    return parser


def load_config(args) -> PipelineConfig:
    if args.config is not None:
        cfg = PipelineConfig.load(args.config)
    elif args.command == "evaluate" and args.counts is not None:
        cfg = PipelineConfig.from_dict({"paths": {"cameras": "", "detections": ""}})
    else:
        raise ConfigError("--config is required")
    over = {}
    if args.seed is not None:
        over["run__seed"] = args.seed
    if args.stage_dir is not None:
        over["paths__output_dir"] = str(args.stage_dir.resolve())
    if args.mode is not None:
        over["sfm__mode"] = args.mode
    return cfg.with_overrides(**over) if over else cfg


def write_synthetic(args) -> Path:
    from .synth import SynthConfig, make_scene

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    scene = make_scene(
        SynthConfig(
            n_cameras=args.cameras,
            n_objects=args.objects,
            gps_noise=args.gps_noise,
            heading_noise=args.heading_noise,
            pixel_noise=args.pixel_noise,
            outlier_rate=args.outlier_rate,
            seed=args.seed,
        )
    )
    io.write_cameras(out / "cameras.csv", scene.cameras)
    io.write_cameras(out / "cameras_true.csv", scene.true_cameras)
    io.write_jsonl(out / "detections.jsonl", [io.detection_record(d) for d in scene.detections])
    io.write_jsonl(out / "correspondences.jsonl", [io.correspondence_record(c) for c in scene.correspondences])
    io.write_jsonl(out / "truth.jsonl", [{"id": f"obj{k}", "lat": g.lat, "lon": g.lon} for k, g in enumerate(scene.truth)])
    (out / "map.osm").write_text(scene.osm_xml)
    cfg = PipelineConfig.from_dict(
        {
            "paths": {
                "cameras": "cameras.csv",
                "detections": "detections.jsonl",
                "correspondences": "correspondences.jsonl",
                "osm": "map.osm",
                "truth": "truth.jsonl",
                "output_dir": "out",
            },
            "sfm": {"mode": args.mode},
            "run": {"seed": args.seed},
        },
        out,
    )
    path = out / "config.ini"
    path.write_text(cfg.to_ini())
    return path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            print(write_synthetic(args))
            return 0
        cfg = load_config(args)
        if args.command == "run-all":
            manifest = run_pipeline(cfg)
            summary = {"correction": manifest.correction, "refinement": manifest.refinement,
                       "evaluation": manifest.evaluation}
        elif args.command == "evaluate":
            summary = STAGES["evaluate"](cfg, counts=args.counts)
        else:
            summary = STAGES[args.command](cfg)
    except (ConfigError, io.SchemaError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2 if isinstance(e.cause, (io.SchemaError, ConfigError)) else 1
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
