"""Readers and writers for the pipeline's files.

Inputs
  cameras CSV        camera_id, lat, lon, heading_deg [, height_m, fixed]
  detections JSONL   {"camera_id", "view_index", "pixel": [u, v], "depth_m", "class"?}
                     or {"camera_id", "bearing_deg", "depth_m", "class"?}
  correspondences    {"view_a": [panorama_id, view_index], "view_b": [...],
                      "matches": [[u_a, v_a, u_b, v_b], ...]}
  ground truth JSONL {"id", "lat", "lon"}

Intermediate artifacts are JSON lines, one record per line; predictions are
a GeoJSON FeatureCollection in WGS84.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from .geodesy import EnuPoint, GeoPoint, LocalFrame
from .panorama import PixelCoord, RectilinearView
from .raygraph import Detection, IntersectionNode, ObservationRay
from .sfm.essential import Correspondence
from .sfm.geometry import DEFAULT_CAMERA_HEIGHT_M, CameraPose


class SchemaError(ValueError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


NUM = (int, float)

# field -> (accepted types, required)
SCHEMAS: dict[str, dict[str, tuple[tuple, bool]]] = {
    "detection": {
        "camera_id": ((str, int), True),
        "depth_m": (NUM, True),
        "view_index": ((int,), False),
        "pixel": ((list,), False),
        "bearing_deg": (NUM, False),
        "class": ((str, type(None)), False),
    },
    "correspondence": {
        "view_a": ((list,), True),
        "view_b": ((list,), True),
        "matches": ((list,), True),
    },
    "truth": {"id": ((str, int), True), "lat": (NUM, True), "lon": (NUM, True)},
    "view": {
        "panorama_id": ((str,), True),
        "view_index": ((int,), True),
        "yaw_offset_deg": (NUM, True),
        "hfov_deg": (NUM, True),
        "step_deg": (NUM, True),
        "width": ((int,), True),
        "height": ((int,), True),
        "focal_px": (NUM, True),
    },
    "ray": {
        "ray_id": ((str,), True),
        "camera_id": ((str,), True),
        "x": (NUM, True),
        "y": (NUM, True),
        "bearing_deg": (NUM, True),
        "depth_m": (NUM, True),
    },
    "node": {
        "node_id": ((int,), True),
        "x": (NUM, True),
        "y": (NUM, True),
        "lat": (NUM, True),
        "lon": (NUM, True),
        "ray_ids": ((list,), True),
        "distances": ((list,), True),
        "angle_deg": (NUM, True),
    },
    "label": {"node_id": ((int,), True), "label": ((int,), True)},
    "cluster": {
        "cluster_id": ((int,), True),
        "x": (NUM, True),
        "y": (NUM, True),
        "lat": (NUM, True),
        "lon": (NUM, True),
        "n_sites": ((int,), True),
        "sites": ((list,), True),
        "node_ids": ((list,), True),
    },
}


def validate(record: Any, schema: str, path, line: int) -> dict:
    if not isinstance(record, dict):
        raise SchemaError(path, line, f"expected a JSON object, got {type(record).__name__}")
    for key, (types, required) in SCHEMAS[schema].items():
        if key not in record:
            if required:
                raise SchemaError(path, line, f"missing field {key!r}")
            continue
        v = record[key]
        if isinstance(v, bool) and bool not in types:
            raise SchemaError(path, line, f"field {key!r} has type bool")
        if not isinstance(v, types):
            raise SchemaError(path, line, f"field {key!r} has type {type(v).__name__}")
        if isinstance(v, float) and not math.isfinite(v):
            raise SchemaError(path, line, f"field {key!r} is not finite")
    return record


def iter_jsonl(path, schema: str) -> Iterator[tuple[int, dict]]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(path, lineno, f"invalid JSON: {e.msg}") from e
            yield lineno, validate(rec, schema, path, lineno)


def write_jsonl(path, records: Iterable[dict]) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "item"):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# -- cameras ---------------------------------------------------------------

CAMERA_COLUMNS = ("camera_id", "lat", "lon", "heading_deg")


def read_cameras(path) -> list[CameraPose]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CAMERA_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(path, 1, f"missing columns {missing}")
        for lineno, row in enumerate(reader, 2):
            try:
                out.append(
                    CameraPose(
                        row["camera_id"],
                        GeoPoint(float(row["lat"]), float(row["lon"])),
                        float(row["heading_deg"]),
                        fixed=str(row.get("fixed") or "").strip().lower() in ("1", "true", "yes"),
                        height=float(row.get("height_m") or DEFAULT_CAMERA_HEIGHT_M),
                    )
                )
            except ValueError as e:
                raise SchemaError(path, lineno, str(e)) from e
    ids = [c.camera_id for c in out]
    if len(set(ids)) != len(ids):
        raise SchemaError(path, 1, "duplicate camera_id")
    return out


def write_cameras(path, cameras: Sequence[CameraPose]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*CAMERA_COLUMNS, "height_m", "fixed"])
        for c in cameras:
            w.writerow([c.camera_id, repr(c.position.lat), repr(c.position.lon), repr(c.heading), repr(c.height), int(c.fixed)])
    return path


# -- detections / correspondences / truth -----------------------------------


def read_detections(path) -> list[Detection]:
    out = []
    for lineno, r in iter_jsonl(path, "detection"):
        try:
            if "bearing_deg" in r:
                det = Detection(str(r["camera_id"]), float(r["depth_m"]), bearing_deg=float(r["bearing_deg"]),
                                class_tag=r.get("class"))
            else:
                px = r.get("pixel")
                if "view_index" not in r or not isinstance(px, list) or len(px) != 2:
                    raise ValueError("pixel-form detection needs view_index and pixel [u, v]")
                det = Detection(str(r["camera_id"]), float(r["depth_m"]), int(r["view_index"]),
                                PixelCoord(float(px[0]), float(px[1])), class_tag=r.get("class"))
        except (ValueError, TypeError) as e:
            raise SchemaError(path, lineno, str(e)) from e
        out.append(det)
    return out


def detection_record(d: Detection) -> dict:
    rec: dict = {"camera_id": d.camera_id, "depth_m": d.depth_m}
    if d.bearing_deg is not None:
        rec["bearing_deg"] = d.bearing_deg
    else:
        rec["view_index"] = d.view_index
        rec["pixel"] = [d.pixel.u, d.pixel.v]
    if d.class_tag is not None:
        rec["class"] = d.class_tag
    return rec


def read_correspondences(path) -> list[Correspondence]:
    out = []
    for lineno, r in iter_jsonl(path, "correspondence"):
        try:
            va, vb = r["view_a"], r["view_b"]
            if len(va) != 2 or len(vb) != 2:
                raise ValueError("view_a/view_b must be [panorama_id, view_index]")
            m = r["matches"]
            if any(len(row) != 4 for row in m):
                raise ValueError("each match must be [u_a, v_a, u_b, v_b]")
            out.append(Correspondence((va[0], va[1]), (vb[0], vb[1]), m))
        except (ValueError, TypeError) as e:
            raise SchemaError(path, lineno, str(e)) from e
    return out


def correspondence_record(c: Correspondence) -> dict:
    return {"view_a": list(c.view_a), "view_b": list(c.view_b), "matches": c.points.tolist()}


def read_truth(path) -> list[tuple[str, GeoPoint]]:
    out = []
    for lineno, r in iter_jsonl(path, "truth"):
        try:
            out.append((str(r["id"]), GeoPoint(float(r["lat"]), float(r["lon"]))))
        except ValueError as e:
            raise SchemaError(path, lineno, str(e)) from e
    return out


# -- stage artifacts ---------------------------------------------------------


def view_record(v: RectilinearView) -> dict:
    return {
        "panorama_id": v.panorama_id,
        "view_index": v.view_index,
        "yaw_offset_deg": v.yaw_offset,
        "hfov_deg": v.hfov,
        "step_deg": v.step,
        "width": v.width,
        "height": v.height,
        "focal_px": v.focal_px,
    }


def read_views(path) -> dict[str, list[RectilinearView]]:
    out: dict[str, list[RectilinearView]] = {}
    for lineno, r in iter_jsonl(path, "view"):
        views = out.setdefault(r["panorama_id"], [])
        if r["view_index"] != len(views):
            raise SchemaError(path, lineno, f"view_index {r['view_index']} out of order for {r['panorama_id']}")
        views.append(RectilinearView(r["panorama_id"], r["view_index"], r["width"], r["height"],
                                     float(r["hfov_deg"]), float(r["step_deg"])))
    return out


def ray_record(r: ObservationRay) -> dict:
    return {
        "ray_id": r.ray_id,
        "camera_id": r.camera_id,
        "x": r.origin.x,
        "y": r.origin.y,
        "bearing_deg": r.bearing,
        "depth_m": r.depth_estimate,
    }


def read_rays(path) -> list[ObservationRay]:
    return [
        ObservationRay(r["ray_id"], r["camera_id"], EnuPoint(r["x"], r["y"]), float(r["bearing_deg"]), float(r["depth_m"]))
        for _, r in iter_jsonl(path, "ray")
    ]


def node_record(n: IntersectionNode, frame: LocalFrame) -> dict:
    g = frame.from_enu(n.position)
    return {
        "node_id": n.node_id,
        "x": n.position.x,
        "y": n.position.y,
        "lat": g.lat,
        "lon": g.lon,
        "ray_ids": list(n.ray_ids),
        "distances": list(n.distances),
        "angle_deg": n.angle,
    }


def read_nodes(path) -> list[IntersectionNode]:
    out = []
    for lineno, r in iter_jsonl(path, "node"):
        if len(r["ray_ids"]) != 2 or len(r["distances"]) != 2:
            raise SchemaError(path, lineno, "a node joins exactly two rays")
        out.append(
            IntersectionNode(r["node_id"], EnuPoint(r["x"], r["y"]), tuple(r["ray_ids"]),
                             tuple(float(d) for d in r["distances"]), float(r["angle_deg"]))
        )
    return out


def read_labels(path) -> dict[int, int]:
    out = {}
    for lineno, r in iter_jsonl(path, "label"):
        if r["label"] not in (0, 1):
            raise SchemaError(path, lineno, "label must be 0 or 1")
        out[r["node_id"]] = r["label"]
    return out


def read_clusters(path) -> list[dict]:
    return [r for _, r in iter_jsonl(path, "cluster")]


def read_frame(path) -> LocalFrame:
    with open(path) as fh:
        d = json.load(fh)
    return LocalFrame(GeoPoint(d["origin_lat"], d["origin_lon"]), d.get("earth_radius", 6_371_000.0))


def frame_record(frame: LocalFrame) -> dict:
    return {"origin_lat": frame.origin.lat, "origin_lon": frame.origin.lon, "earth_radius": frame.earth_radius}


# -- GeoJSON -------------------------------------------------------------------


def feature_collection(features: list[dict]) -> dict:
    return {"type": "FeatureCollection", "features": features}


def point_feature(p: GeoPoint, properties: dict) -> dict:
    return {"type": "Feature", "geometry": {"type": "Point", "coordinates": [p.lon, p.lat]}, "properties": properties}


def write_geojson(path, fc: dict) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(json.dumps(fc, sort_keys=True, indent=1))
        fh.write("\n")
    return path


def read_geojson_points(path) -> list[tuple[GeoPoint, dict]]:
    with open(path) as fh:
        fc = json.load(fh)
    if fc.get("type") != "FeatureCollection":
        raise SchemaError(path, 1, "not a FeatureCollection")
    out = []
    for k, f in enumerate(fc.get("features", [])):
        geom = f.get("geometry") or {}
        if geom.get("type") != "Point":
            raise SchemaError(path, 1, f"feature {k} is not a Point")
        lon, lat = geom["coordinates"][:2]
        out.append((GeoPoint(lat, lon), f.get("properties") or {}))
    return out


def validate_geojson_predictions(fc: dict) -> None:
    """Raise ValueError unless ``fc`` matches the predictions schema."""
    if fc.get("type") != "FeatureCollection" or not isinstance(fc.get("features"), list):
        raise ValueError("predictions must be a FeatureCollection")
    for k, f in enumerate(fc["features"]):
        if f.get("type") != "Feature" or f.get("geometry", {}).get("type") != "Point":
            raise ValueError(f"feature {k} is not a Point Feature")
        lon, lat = f["geometry"]["coordinates"]
        GeoPoint(lat, lon)
        props = f.get("properties", {})
        for key, typ in (("weight_sum", NUM), ("prior_fallback", (bool,)), ("n_sites", (int,))):
            if not isinstance(props.get(key), typ):
                raise ValueError(f"feature {k}: property {key!r} missing or mistyped")
