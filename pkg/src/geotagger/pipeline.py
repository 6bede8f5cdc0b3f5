"""Batch driver: configuration, stage functions and the run manifest.

Every stage reads the artifacts of the stages before it from the stage
directory and writes its own, so a run can be inspected (or resumed) one
stage at a time. ``run_pipeline`` chains all of them.

Stage directory layout::

    views.jsonl                      split-views
    poses.csv pose_report.json
    frame.json                       refine-poses
    rays.jsonl nodes.jsonl           build-graph
    labels.jsonl                     solve-mrf
    clusters.jsonl                   cluster
    predictions.geojson
    predictions.csv prior_report.json
    heatmap.asc (optional)           apply-prior
    evaluation.json evaluation.csv   evaluate
    figures/*.png                    report
    manifest.json                    run-all
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import io
from .evaluation import TP_RADIUS_M, EvalReport, evaluate, metrics_from_counts
from .geodesy import EARTH_RADIUS_M, EnuPoint, GeoPoint, LocalFrame
from .osmprior import (
    BUILDING_SIGMA_M,
    GRID_RESOLUTION_M,
    INTERPOLATION_SPACING_M,
    ROAD_SIGMA_M,
    TRUNCATION_SIGMAS,
    PriorField,
    build_prior_field,
    parse_osm_xml,
    write_ascii_grid,
)
from .panorama import DEFAULT_VIEW_SIZE, N_VIEWS, VIEW_HFOV_DEG, VIEW_STEP_DEG, split_panorama
from .raygraph import EnergyParams, RayGraph, build_intersection_graph, cast_rays, solve_mrf
from .refine import DEFAULT_CLUSTER_THRESHOLD_M, Cluster, cluster_positives, refine_cluster_position
from .sfm import BAOptions, RansacOptions, RefineOptions, refine_poses
from .sfm.poses import MODES

log = logging.getLogger(__name__)

REQUIRED = object()

# section -> key -> default; the default's type is the key's type
CONFIG_KEYS: dict[str, dict[str, object]] = {
    "paths": {
        "cameras": REQUIRED,
        "detections": REQUIRED,
        "correspondences": "",
        "osm": "",
        "truth": "",
        "output_dir": "out",
    },
    "frame": {
        "origin_lat": "",
        "origin_lon": "",
        "max_distance_m": 10_000.0,
        "earth_radius_m": EARTH_RADIUS_M,
    },
    "panorama": {
        "n_views": N_VIEWS,
        "hfov_deg": VIEW_HFOV_DEG,
        "step_deg": VIEW_STEP_DEG,
        "view_width": DEFAULT_VIEW_SIZE[0],
        "view_height": DEFAULT_VIEW_SIZE[1],
    },
    "sfm": {
        "mode": "full",
        "gps_weight": 1.0,
        "heading_weight": 1.0,
        "tilt_weight": 1.0,
        "robust_delta_px": 2.0,
        "max_iterations": 100,
        "ransac_iterations": 500,
        "ransac_threshold_px": 1.0,
        "ransac_confidence": 0.999,
        "min_parallax_deg": 0.25,
        "min_triangulation_angle_deg": 2.0,
        "outlier_px": 8.0,
        "rejection_rounds": 3,
    },
    "mrf": {
        "depth_sigma_m": 2.0,
        "pairwise_penalty": 2.0,
        "occupancy_bias": 1.0,
        "min_angle_deg": 10.0,
        "max_depth_m": 25.0,
        "restarts": 50,
        "exhaustive_limit": 20,
    },
    "cluster": {"threshold_m": DEFAULT_CLUSTER_THRESHOLD_M},
    "prior": {
        "enabled": True,
        "sigma_road_m": ROAD_SIGMA_M,
        "sigma_building_m": BUILDING_SIGMA_M,
        "interpolation_spacing_m": INTERPOLATION_SPACING_M,
        "grid_resolution_m": GRID_RESOLUTION_M,
        "truncation_sigmas": TRUNCATION_SIGMAS,
        "heatmap": False,
    },
    "eval": {"tp_radius_m": TP_RADIUS_M},
    "run": {"seed": 0, "figures": False},
}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A stage failed; carries the stage name and the files it was reading."""

    def __init__(self, stage: str, inputs: list[str], cause: BaseException):
        self.stage = stage
        self.inputs = list(inputs)
        self.cause = cause
        src = ", ".join(self.inputs) if self.inputs else "no inputs"
        super().__init__(f"stage {stage} failed ({type(cause).__name__}: {cause}); inputs: {src}")


def _coerce(value: str, default, where: str):
    try:
        if isinstance(default, bool):
            v = value.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e
    return value.strip()


@dataclass
class PipelineConfig:
    """All run settings. ``values`` holds the typed key/value table."""

    values: dict[str, dict[str, object]]
    base_dir: Path = Path(".")

    @classmethod
    def defaults(cls) -> dict[str, dict[str, object]]:
        return {s: dict(keys) for s, keys in CONFIG_KEYS.items()}

    @classmethod
    def from_dict(cls, values: dict, base_dir: Path | str = ".") -> "PipelineConfig":
        merged = cls.defaults()
        for section, keys in values.items():
            if section not in merged:
                raise ConfigError(f"unknown section [{section}]")
            for key, v in keys.items():
                if key not in merged[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                default = CONFIG_KEYS[section][key]
                if isinstance(v, str) and default is not REQUIRED and not isinstance(default, str):
                    v = _coerce(v, default, f"[{section}] {key}")
                merged[section][key] = v
        cfg = cls(merged, Path(base_dir))
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path: Path | str) -> "PipelineConfig":
        path = Path(path)
        parser = configparser.ConfigParser(interpolation=None)
        if not parser.read(path):
            raise ConfigError(f"cannot read config {path}")
        values = {s: dict(parser.items(s)) for s in parser.sections()}
        return cls.from_dict(values, path.parent)

    def check(self) -> None:
        for section, keys in self.values.items():
            for key, v in keys.items():
                if v is REQUIRED:
                    raise ConfigError(f"missing required key {key!r} in [{section}]")
        if self.mode not in MODES:
            raise ConfigError(f"[sfm] mode must be one of {MODES}, got {self.mode!r}")
        pano = self.values["panorama"]
        if not math.isclose(pano["step_deg"] * pano["n_views"], 360.0):
            raise ConfigError("[panorama] step_deg * n_views must cover 360 degrees")
        lat, lon = self.values["frame"]["origin_lat"], self.values["frame"]["origin_lon"]
        if (lat == "") != (lon == ""):
            raise ConfigError("[frame] origin_lat and origin_lon go together")

    def get(self, section: str, key: str):
        return self.values[section][key]

    def with_overrides(self, **kw) -> "PipelineConfig":
        """Copy with (section, key) overrides given as ``section__key=value``."""
        values = {s: dict(k) for s, k in self.values.items()}
        for name, v in kw.items():
            section, key = name.split("__", 1)
            values[section][key] = v
        return PipelineConfig.from_dict(values, self.base_dir)

    def path(self, key: str) -> Path | None:
        v = self.values["paths"][key]
        if not v:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def stage_dir(self) -> Path:
        return self.path("output_dir")

    @property
    def mode(self) -> str:
        return self.values["sfm"]["mode"]

    @property
    def seed(self) -> int:
        return int(self.values["run"]["seed"])

    @property
    def view_size(self) -> tuple[int, int]:
        p = self.values["panorama"]
        return int(p["view_width"]), int(p["view_height"])

    def origin(self) -> GeoPoint | None:
        f = self.values["frame"]
        if f["origin_lat"] == "":
            return None
        return GeoPoint(float(f["origin_lat"]), float(f["origin_lon"]))

    def refine_options(self) -> RefineOptions:
        s = self.values["sfm"]
        p = self.values["panorama"]
        ba = BAOptions(
            gps_weight=s["gps_weight"],
            heading_weight=s["heading_weight"],
            tilt_weight=s["tilt_weight"],
            robust_delta=s["robust_delta_px"],
            max_iters=s["max_iterations"],
        )
        ransac = RansacOptions(
            iterations=s["ransac_iterations"],
            threshold_px=s["ransac_threshold_px"],
            seed=self.seed,
            confidence=s["ransac_confidence"],
            min_parallax_deg=s["min_parallax_deg"],
        )
        return RefineOptions(
            mode=s["mode"],
            ba=ba,
            ransac=ransac,
            view_size=self.view_size,
            n_views=p["n_views"],
            hfov=p["hfov_deg"],
            min_triangulation_angle=s["min_triangulation_angle_deg"],
            outlier_px=s["outlier_px"],
            rejection_rounds=s["rejection_rounds"],
        )

    def energy_params(self) -> EnergyParams:
        m = self.values["mrf"]
        return EnergyParams(
            depth_sigma=m["depth_sigma_m"],
            pairwise_penalty=m["pairwise_penalty"],
            occupancy_bias=m["occupancy_bias"],
            min_angle=m["min_angle_deg"],
            max_depth=m["max_depth_m"],
            seed=self.seed,
            restarts=m["restarts"],
            exhaustive_limit=m["exhaustive_limit"],
        )

    def snapshot(self) -> dict:
        return {s: {k: v for k, v in keys.items()} for s, keys in self.values.items()}

    def to_ini(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            for k, v in keys.items():
                if isinstance(v, bool):
                    v = "true" if v else "false"
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)


@dataclass
class RunManifest:
    config: dict
    seed: int
    timings_s: dict[str, float] = field(default_factory=dict)
    correction: dict = field(default_factory=dict)
    refinement: dict = field(default_factory=dict)
    evaluation: dict | None = None
    outputs: dict[str, str] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "timings_s": self.timings_s,
            "correction": self.correction,
            "refinement": self.refinement,
            "evaluation": self.evaluation,
            "outputs": self.outputs,
        }


# -- stage plumbing -------------------------------------------------------------


class _Stage:
    """Context for one stage: tracks written files and wraps errors."""

    def __init__(self, name: str, config: PipelineConfig, written: list[Path] | None = None):
        self.name = name
        self.config = config
        self.dir = config.stage_dir
        self.inputs: list[str] = []
        self.written = written if written is not None else []

    def need(self, path: Path | None, what: str) -> Path:
        if path is None or not Path(path).exists():
            raise FileNotFoundError(f"{what} not found: {path}")
        self.inputs.append(str(path))
        return Path(path)

    def out(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(p)
        return p

    def __enter__(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        self._start = len(self.written)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None:
            return False
        for p in self.written[self._start:]:
            p.unlink(missing_ok=True)
        del self.written[self._start:]
        if isinstance(exc, StageError):
            return False
        raise StageError(self.name, self.inputs, exc) from exc


def _frame_for(stage: _Stage) -> LocalFrame:
    cfg = stage.config
    fpath = stage.dir / "frame.json"
    if fpath.exists():
        stage.inputs.append(str(fpath))
        return io.read_frame(fpath)
    f = cfg.values["frame"]
    origin = cfg.origin()
    if origin is None:
        cams = io.read_cameras(stage.need(cfg.path("cameras"), "camera metadata"))
        if not cams:
            raise ValueError("no cameras to center the local frame on")
        origin = LocalFrame.centered_on([c.position for c in cams]).origin
    return LocalFrame(origin, f["earth_radius_m"], f["max_distance_m"])


def _views_for(stage: _Stage, camera_ids) -> dict:
    vpath = stage.dir / "views.jsonl"
    if vpath.exists():
        stage.inputs.append(str(vpath))
        views = io.read_views(vpath)
        missing = [c for c in camera_ids if c not in views]
        if not missing:
            return views
        log.info("views.jsonl lacks %d cameras; splitting them from the config", len(missing))
    else:
        views = {}
    p = stage.config.values["panorama"]
    w, h = stage.config.view_size
    for cid in camera_ids:
        views.setdefault(cid, split_panorama(cid, w, h, p["n_views"], p["hfov_deg"]))
    return views


def _current_cameras(stage: _Stage):
    poses = stage.dir / "poses.csv"
    if poses.exists():
        return io.read_cameras(stage.need(poses, "corrected poses"))
    log.info("no poses.csv in %s; using the camera metadata as is", stage.dir)
    return io.read_cameras(stage.need(stage.config.path("cameras"), "camera metadata"))


# -- stages ---------------------------------------------------------------------


def stage_split_views(config: PipelineConfig, written: list | None = None) -> dict:
    with _Stage("split-views", config, written) as st:
        cams = io.read_cameras(st.need(config.path("cameras"), "camera metadata"))
        p = config.values["panorama"]
        w, h = config.view_size
        recs = []
        for c in cams:
            recs += [io.view_record(v) for v in split_panorama(c.camera_id, w, h, p["n_views"], p["hfov_deg"])]
        io.write_jsonl(st.out("views.jsonl"), recs)
        return {"n_panoramas": len(cams), "n_views": len(recs)}


def stage_refine_poses(config: PipelineConfig, written: list | None = None) -> dict:
    with _Stage("refine-poses", config, written) as st:
        cams = io.read_cameras(st.need(config.path("cameras"), "camera metadata"))
        frame = _frame_for(st)
        corrs = []
        if config.mode != "none":
            corrs = io.read_correspondences(st.need(config.path("correspondences"), "correspondences"))
        new, report = refine_poses(cams, corrs, frame, config.refine_options())
        io.write_cameras(st.out("poses.csv"), new)
        io.write_json(st.out("pose_report.json"), report.as_dict())
        if not (st.dir / "frame.json").exists():
            io.write_json(st.out("frame.json"), io.frame_record(frame))
        return {
            "mode": config.mode,
            "mean_bearing_shift_deg": report.mean_bearing_shift_deg,
            "mean_position_shift_m": report.mean_position_shift_m,
        }


def stage_build_graph(config: PipelineConfig, written: list | None = None) -> dict:
    with _Stage("build-graph", config, written) as st:
        cams = _current_cameras(st)
        frame = _frame_for(st)
        dets = io.read_detections(st.need(config.path("detections"), "detections"))
        views = _views_for(st, [c.camera_id for c in cams])
        rays = cast_rays(dets, {c.camera_id: c for c in cams}, frame, views)
        graph = build_intersection_graph(rays, config.energy_params())
        io.write_jsonl(st.out("rays.jsonl"), [io.ray_record(r) for r in rays])
        io.write_jsonl(st.out("nodes.jsonl"), [io.node_record(n, frame) for n in graph.nodes])
        return {"n_rays": len(rays), "n_nodes": len(graph.nodes)}


def _load_graph(st: _Stage) -> RayGraph:
    rays = io.read_rays(st.need(st.dir / "rays.jsonl", "rays"))
    nodes = io.read_nodes(st.need(st.dir / "nodes.jsonl", "intersection nodes"))
    return RayGraph(rays, nodes)


def stage_solve_mrf(config: PipelineConfig, written: list | None = None) -> dict:
    with _Stage("solve-mrf", config, written) as st:
        graph = _load_graph(st)
        z = solve_mrf(graph, config.energy_params())
        io.write_jsonl(
            st.out("labels.jsonl"), [{"node_id": n.node_id, "label": int(l)} for n, l in zip(graph.nodes, z)]
        )
        return {"n_nodes": len(z), "n_positive": int(np.sum(z))}


def stage_cluster(config: PipelineConfig, written: list | None = None) -> dict:
    with _Stage("cluster", config, written) as st:
        frame = _frame_for(st)
        nodes = io.read_nodes(st.need(st.dir / "nodes.jsonl", "intersection nodes"))
        labels = io.read_labels(st.need(st.dir / "labels.jsonl", "labels"))
        if set(labels) != {n.node_id for n in nodes}:
            raise ValueError("labels.jsonl does not label exactly the nodes in nodes.jsonl")
        pos = [n for n in nodes if labels[n.node_id] == 1]
        clusters = cluster_positives(
            [n.position for n in pos], config.get("cluster", "threshold_m"), [n.node_id for n in pos]
        )
        io.write_jsonl(st.out("clusters.jsonl"), [_cluster_record(k, c, frame) for k, c in enumerate(clusters)])
        return {"n_clusters": len(clusters)}


def _cluster_record(k: int, c: Cluster, frame: LocalFrame) -> dict:
    g = frame.from_enu(c.position)
    return {
        "cluster_id": k,
        "x": c.position.x,
        "y": c.position.y,
        "lat": g.lat,
        "lon": g.lon,
        "n_sites": len(c.sites),
        "sites": [[s.x, s.y] for s in c.sites],
        "node_ids": list(c.node_ids),
    }


def load_prior(config: PipelineConfig, frame: LocalFrame, inputs: list | None = None) -> PriorField | None:
    osm_path = config.path("osm")
    if not config.get("prior", "enabled") or osm_path is None:
        return None
    if inputs is not None:
        inputs.append(str(osm_path))
    p = config.values["prior"]
    return build_prior_field(
        parse_osm_xml(Path(osm_path)),
        frame,
        p["sigma_road_m"],
        p["sigma_building_m"],
        p["interpolation_spacing_m"],
        p["grid_resolution_m"],
    )


def stage_apply_prior(config: PipelineConfig, written: list | None = None) -> dict:
    with _Stage("apply-prior", config, written) as st:
        frame = _frame_for(st)
        recs = io.read_clusters(st.need(st.dir / "clusters.jsonl", "clusters"))
        if config.path("osm") is not None:
            st.need(config.path("osm"), "OSM map")
        prior = load_prior(config, frame)
        if prior is not None:
            prior.truncation = config.get("prior", "truncation_sigmas")
        features, rows, shifts = [], [], []
        for r in recs:
            sites = [EnuPoint(x, y) for x, y in r["sites"]]
            c = Cluster(sites, EnuPoint(r["x"], r["y"]), node_ids=r["node_ids"])
            before = c.position
            if prior is not None:
                refine_cluster_position(c, prior)
            else:
                c.weights = [1.0] * len(sites)
            d = c.position.distance(before)
            shifts.append(d)
            g = frame.from_enu(c.position)
            props = {
                "cluster_id": r["cluster_id"],
                "n_sites": len(sites),
                "weight_sum": float(c.weight_sum),
                "prior_fallback": bool(c.prior_fallback),
                "displacement_m": d,
                "pre_prior_lat": r["lat"],
                "pre_prior_lon": r["lon"],
            }
            features.append(io.point_feature(g, props))
            rows.append([r["cluster_id"], g.lat, g.lon, c.position.x, c.position.y, len(sites),
                         c.weight_sum, int(c.prior_fallback), d])
        fc = io.feature_collection(features)
        io.validate_geojson_predictions(fc)
        io.write_geojson(st.out("predictions.geojson"), fc)
        with open(st.out("predictions.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cluster_id", "lat", "lon", "x_m", "y_m", "n_sites", "weight_sum", "prior_fallback",
                        "displacement_m"])
            w.writerows(rows)
        summary = {
            "prior": prior is not None,
            "n_predictions": len(features),
            "mean_displacement_m": float(np.mean(shifts)) if shifts else 0.0,
            "n_fallback": sum(f["properties"]["prior_fallback"] for f in features),
        }
        if prior is not None and config.get("prior", "heatmap") and len(prior):
            grid, (xll, yll) = prior.heatmap()
            write_ascii_grid(st.out("heatmap.asc"), grid, xll, yll, prior.resolution)
        io.write_json(st.out("prior_report.json"), summary)
        return summary


EVAL_COLUMNS = ["positions", "n_actual", "n_detected", "tp", "precision", "recall", "f_measure", "mean_error_m"]


def _eval_row(name: str, rep: EvalReport) -> list:
    d = rep.as_dict()
    return [name] + [d[k] if d[k] is not None else "" for k in EVAL_COLUMNS[1:]]


def stage_evaluate(config: PipelineConfig, written: list | None = None, counts: Path | None = None) -> dict | None:
    """Score predictions before and after the map prior.

    With ``counts`` (JSON lines of {label, n_actual, n_detected, tp}) the
    metrics are computed from stored counts instead of positions.
    """
    with _Stage("evaluate", config, written) as st:
        if counts is not None:
            return _evaluate_counts(st, st.need(counts, "counts fixture"))
        truth_path = config.path("truth")
        if truth_path is None:
            log.info("no ground truth configured; skipping evaluation")
            return None
        truths = [g for _, g in io.read_truth(st.need(truth_path, "ground truth"))]
        clusters = io.read_clusters(st.need(st.dir / "clusters.jsonl", "clusters"))
        post = io.read_geojson_points(st.need(st.dir / "predictions.geojson", "predictions"))
        radius = config.get("eval", "tp_radius_m")
        reports = {
            "pre_prior": evaluate([GeoPoint(r["lat"], r["lon"]) for r in clusters], truths, radius),
            "post_prior": evaluate([g for g, _ in post], truths, radius),
        }
        out = {k: r.as_dict() for k, r in reports.items()}
        io.write_json(st.out("evaluation.json"), out)
        with open(st.out("evaluation.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EVAL_COLUMNS)
            for k, r in reports.items():
                w.writerow(_eval_row(k, r))
        return out


def _evaluate_counts(st: _Stage, path: Path) -> dict:
    out = {}
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                rep = metrics_from_counts(int(r["n_actual"]), int(r["n_detected"]), int(r["tp"]),
                                          float(r.get("mean_error_m", math.nan)))
            except (KeyError, TypeError, ValueError) as e:
                raise io.SchemaError(path, lineno, str(e)) from e
            label = str(r.get("label", lineno))
            d = rep.as_dict()
            d["rounded"] = list(rep.rounded())
            out[label] = d
            rows.append(_eval_row(label, rep) + list(rep.rounded()))
    io.write_json(st.out("evaluation.json"), out)
    with open(st.out("evaluation.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_COLUMNS + ["precision_2dp", "recall_2dp", "f_measure_2dp"])
        w.writerows(rows)
    return out


def stage_report(config: PipelineConfig, written: list | None = None) -> dict:
    from .plotting import render_report

    with _Stage("report", config, written) as st:
        frame = _frame_for(st)
        paths = render_report(config, frame, st)
        return {"figures": [p.name for p in paths]}


STAGES: dict[str, Callable] = {
    "split-views": stage_split_views,
    "refine-poses": stage_refine_poses,
    "build-graph": stage_build_graph,
    "solve-mrf": stage_solve_mrf,
    "cluster": stage_cluster,
    "apply-prior": stage_apply_prior,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_pipeline(config: PipelineConfig) -> RunManifest:
    """Run every stage in order and write ``manifest.json``.

    On failure all files written by this run are removed and the StageError
    propagates.
    """
    for key in ("cameras", "detections", "correspondences", "osm", "truth"):
        p = config.path(key)
        if p is not None and not p.exists():
            raise StageError("run-all", [str(p)], FileNotFoundError(f"[paths] {key} does not exist"))
    manifest = RunManifest(config.snapshot(), config.seed)
    written: list[Path] = []
    stale = [config.stage_dir / n for n in ("frame.json", "poses.csv", "views.jsonl")]
    for p in stale:
        p.unlink(missing_ok=True)
    order = ["split-views", "refine-poses", "build-graph", "solve-mrf", "cluster", "apply-prior", "evaluate"]
    if config.get("run", "figures"):
        order.append("report")
    try:
        for name in order:
            t0 = time.perf_counter()
            result = STAGES[name](config, written)
            manifest.timings_s[name] = time.perf_counter() - t0
            if name == "refine-poses":
                manifest.correction = result
            elif name == "apply-prior":
                manifest.refinement = result
            elif name == "evaluate":
                manifest.evaluation = result
        for p in written:
            if p.exists():
                manifest.outputs[str(p.relative_to(config.stage_dir))] = _sha256(p)
        mpath = config.stage_dir / "manifest.json"
        written.append(mpath)
        io.write_json(mpath, manifest.as_dict())
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return manifest
