import json

import pytest

from geotagger import io
from geotagger.geodesy import GeoPoint
from geotagger.sfm.geometry import CameraPose


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return path


def test_detection_schema_names_line(tmp_path):
    p = write_lines(tmp_path / "d.jsonl", [
        json.dumps({"camera_id": "a", "bearing_deg": 10.0, "depth_m": 5.0}),
        json.dumps({"camera_id": "a", "bearing_deg": 10.0}),
    ])
    with pytest.raises(io.SchemaError) as err:
        io.read_detections(p)
    assert err.value.line == 2
    assert str(err.value).startswith(f"{p}:2:")
    assert "depth_m" in str(err.value)


@pytest.mark.parametrize("bad", [
    "{not json",
    json.dumps([1, 2]),
    json.dumps({"camera_id": "a", "bearing_deg": "north", "depth_m": 5}),
    json.dumps({"camera_id": "a", "depth_m": 5}),
    json.dumps({"camera_id": "a", "view_index": 0, "pixel": [1], "depth_m": 5}),
    json.dumps({"camera_id": "a", "bearing_deg": 1.0, "depth_m": -5}),
    json.dumps({"camera_id": "a", "bearing_deg": True, "depth_m": 5}),
])
def test_bad_detection_lines(tmp_path, bad):
    p = write_lines(tmp_path / "d.jsonl", ["", bad])
    with pytest.raises(io.SchemaError) as err:
        io.read_detections(p)
    assert err.value.line == 2


def test_detection_round_trip(tmp_path, clean_scene):
    p = io.write_jsonl(tmp_path / "d.jsonl", [io.detection_record(d) for d in clean_scene.detections])
    assert io.read_detections(p) == clean_scene.detections


def test_correspondence_round_trip_and_errors(tmp_path, clean_scene):
    p = io.write_jsonl(tmp_path / "c.jsonl", [io.correspondence_record(c) for c in clean_scene.correspondences])
    back = io.read_correspondences(p)
    assert len(back) == len(clean_scene.correspondences)
    assert (back[0].points == clean_scene.correspondences[0].points).all()
    bad = write_lines(tmp_path / "b.jsonl", [json.dumps({"view_a": ["a", 0], "view_b": ["b", 1], "matches": [[1, 2, 3]]})])
    with pytest.raises(io.SchemaError, match=":1:"):
        io.read_correspondences(bad)


def test_cameras_round_trip(tmp_path):
    cams = [CameraPose("a", GeoPoint(53.1, -6.2), 12.5), CameraPose("b", GeoPoint(53.2, -6.3), 359.0, fixed=True)]
    p = io.write_cameras(tmp_path / "c.csv", cams)
    back = io.read_cameras(p)
    assert [(c.camera_id, c.position, c.heading, c.fixed) for c in back] == \
        [(c.camera_id, c.position, c.heading, c.fixed) for c in cams]


def test_camera_errors(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("camera_id,lat,lon,heading_deg\na,53.1,-6.2,10\nb,north,-6.2,10\n")
    with pytest.raises(io.SchemaError, match=":3:"):
        io.read_cameras(p)
    p.write_text("camera_id,lat,lon\na,53.1,-6.2\n")
    with pytest.raises(io.SchemaError, match="heading_deg"):
        io.read_cameras(p)
    p.write_text("camera_id,lat,lon,heading_deg\na,53.1,-6.2,10\na,53.1,-6.2,10\n")
    with pytest.raises(io.SchemaError, match="duplicate"):
        io.read_cameras(p)


def test_truth_reader(tmp_path):
    p = write_lines(tmp_path / "t.jsonl", [json.dumps({"id": 7, "lat": 53.0, "lon": -6.0})])
    assert io.read_truth(p) == [("7", GeoPoint(53.0, -6.0))]
    bad = write_lines(tmp_path / "b.jsonl", [json.dumps({"id": 7, "lat": 53.0})])
    with pytest.raises(io.SchemaError, match=":1:"):
        io.read_truth(bad)


def test_geojson_validation():
    fc = io.feature_collection([io.point_feature(GeoPoint(53.0, -6.0), {"n_sites": 2, "weight_sum": 1.0,
                                                                         "prior_fallback": False})])
    io.validate_geojson_predictions(fc)
    assert fc["features"][0]["geometry"]["coordinates"] == [-6.0, 53.0]
    del fc["features"][0]["properties"]["weight_sum"]
    with pytest.raises(ValueError):
        io.validate_geojson_predictions(fc)
