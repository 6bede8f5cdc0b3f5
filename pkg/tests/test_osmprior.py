import math

import numpy as np
import pytest

from geotagger.geodesy import EnuPoint, haversine_distance
from geotagger.osmprior import (
    DanglingNodeRef,
    KernelCenter,
    MalformedXml,
    OpenBuildingRing,
    OsmData,
    PriorField,
    build_prior_field,
    interpolate_nodes,
    parse_osm_xml,
    polyline_length,
    weight_at,
    write_ascii_grid,
)

from fixtures import FRAME, osm_xml


def field_of(points, sigma=2.0):
    return PriorField([KernelCenter(EnuPoint(*p), sigma, "road") for p in points])


def untruncated_w(field, x):
    d2 = np.sum((field.mu - np.asarray(x)) ** 2, axis=1)
    return 1.0 - min(1.0, float(np.sum(np.exp(-d2 / (2 * field.sigma**2)))))


def test_parse_single_road():
    data = parse_osm_xml(osm_xml(roads=[[(0, 0), (30, 40)]]))
    (road,) = data.roads
    assert len(data.nodes) == 2
    assert polyline_length(road) == pytest.approx(haversine_distance(road[0], road[1]))
    assert polyline_length(road) == pytest.approx(50.0, rel=1e-3)
    assert data.buildings == []


def test_parse_building_and_other_ways():
    extra = '  <way id="900"><nd ref="1"/><nd ref="2"/><tag k="natural" v="tree_row"/></way>\n'
    data = parse_osm_xml(osm_xml(buildings=[[(0, 0), (5, 0), (5, 5), (0, 5), (0, 0)]], extra_ways=extra))
    (ring,) = data.buildings
    assert ring[0] == ring[-1] and len(ring) == 5
    assert data.roads == [] and "900" not in data.ways


def test_parse_empty_document():
    data = parse_osm_xml('<osm version="0.6"></osm>')
    assert data.ways == {} and data.roads == []


def test_parse_from_file(tmp_path):
    p = tmp_path / "m.osm"
    p.write_text(osm_xml(roads=[[(0, 0), (10, 0)]]))
    assert len(parse_osm_xml(p).roads) == 1


def test_parse_errors():
    with pytest.raises(MalformedXml):
        parse_osm_xml("<osm><node id='1'")
    with pytest.raises(DanglingNodeRef):
        parse_osm_xml('<osm><node id="1" lat="0" lon="0"/><way id="5"><nd ref="1"/><nd ref="7"/>'
                      '<tag k="highway" v="x"/></way></osm>')
    with pytest.raises(OpenBuildingRing):
        parse_osm_xml('<osm><node id="1" lat="0" lon="0"/><node id="2" lat="0" lon="0.001"/>'
                      '<node id="3" lat="0.001" lon="0"/><way id="5"><nd ref="1"/><nd ref="2"/><nd ref="3"/>'
                      '<tag k="building" v="yes"/></way></osm>')


def arclen(points):
    return [p.x for p in points]


def test_interpolate_12m():
    pts = interpolate_nodes([EnuPoint(0, 0), EnuPoint(12, 0)])
    assert arclen(pts) == pytest.approx([0, 5, 10, 12])


def test_interpolate_short_segment():
    pts = interpolate_nodes([EnuPoint(0, 0), EnuPoint(4, 0)])
    assert arclen(pts) == pytest.approx([0, 4])


def test_interpolate_square_ring():
    sq = [EnuPoint(0, 0), EnuPoint(5, 0), EnuPoint(5, 5), EnuPoint(0, 5), EnuPoint(0, 0)]
    pts = interpolate_nodes(sq)
    assert len(pts) == 4
    assert {(round(p.x, 9), round(p.y, 9)) for p in pts} == {(0, 0), (5, 0), (5, 5), (0, 5)}


def test_interpolate_keeps_vertices_and_spacing():
    line = [EnuPoint(0, 0), EnuPoint(7, 0), EnuPoint(7, 9)]
    pts = interpolate_nodes(line)
    xy = [(round(p.x, 9), round(p.y, 9)) for p in pts]
    assert xy == [(0, 0), (5, 0), (7, 0), (7, 3), (7, 8), (7, 9)]


def test_field_from_12m_road():
    field = build_prior_field(parse_osm_xml(osm_xml(roads=[[(0, 0), (12, 0)]])), FRAME)
    assert len(field) == 4
    assert all(k.sigma == 2.0 and k.kind == "road" for k in field.kernels)


def test_field_from_building():
    field = build_prior_field(parse_osm_xml(osm_xml(buildings=[[(0, 0), (5, 0), (5, 5), (0, 5), (0, 0)]])), FRAME)
    assert len(field) == 4
    assert all(k.sigma == 1.0 and k.kind == "building_edge" for k in field.kernels)


def test_empty_field_is_uniform():
    field = build_prior_field(OsmData(), FRAME)
    rng = np.random.default_rng(0)
    assert all(weight_at(field, x) == 1.0 for x in rng.normal(0, 100, (20, 2)))


def test_weight_examples():
    field = field_of([(0.0, 0.0)])
    assert weight_at(field, EnuPoint(0, 0)) == 0.0
    assert weight_at(field, (100.0, 0.0)) == 1.0
    assert weight_at(field, (2.0, 0.0)) == pytest.approx(1 - math.exp(-0.5), abs=1e-9)
    assert weight_at(field, (0.0, -2.0)) == pytest.approx(0.393469, abs=1e-6)


def test_weight_in_unit_interval():
    rng = np.random.default_rng(1)
    field = PriorField([KernelCenter(EnuPoint(*p), s, "road") for p, s in
                        zip(rng.uniform(-20, 20, (60, 2)), rng.choice([1.0, 2.0], 60))])
    for x in rng.uniform(-30, 30, (2000, 2)):
        assert 0.0 <= field.weight_at(x) <= 1.0


def test_radially_monotone():
    field = field_of([(3.0, -1.0)], sigma=1.5)
    for ang in np.linspace(0, 2 * np.pi, 12, endpoint=False):
        u = np.array([np.cos(ang), np.sin(ang)])
        w = [field.weight_at(np.array([3.0, -1.0]) + r * u) for r in np.linspace(8.0, 0.0, 81)]
        assert all(b <= a for a, b in zip(w, w[1:]))


def test_adding_kernels_never_raises_weight():
    rng = np.random.default_rng(2)
    pts = [tuple(p) for p in rng.uniform(-10, 10, (15, 2))]
    xs = rng.uniform(-12, 12, (300, 2))
    for k in range(1, len(pts)):
        small, big = field_of(pts[:k]), field_of(pts[: k + 1])
        assert all(big.weight_at(x) <= small.weight_at(x) for x in xs)


def test_truncation_bound():
    rng = np.random.default_rng(3)
    field = PriorField([KernelCenter(EnuPoint(*p), s, "road") for p, s in
                        zip(rng.uniform(-15, 15, (40, 2)), rng.choice([1.0, 2.0], 40))])
    for x in rng.uniform(-20, 20, (500, 2)):
        d = np.linalg.norm(field.mu - x, axis=1)
        k = int(np.sum(d > 3 * field.sigma))
        assert abs(field.weight_at(x) - untruncated_w(field, x)) <= k * math.exp(-4.5) + 1e-12
        assert abs(field.weight_at(x) - untruncated_w(field, x)) <= 0.012 * k + 1e-12


def test_heatmap_matches_point_queries():
    field = field_of([(0.0, 0.0), (4.0, 1.0)])
    grid, (xll, yll) = field.heatmap((-3, -3, 7, 4))
    r = field.resolution
    nrows, ncols = grid.shape
    for i in range(0, nrows, 7):
        for j in range(0, ncols, 5):
            x = xll + (j + 0.5) * r
            y = yll + (nrows - 1 - i + 0.5) * r
            assert grid[i, j] == pytest.approx(field.weight_at((x, y)), abs=1e-12)


def test_ascii_grid_header(tmp_path):
    field = field_of([(0.0, 0.0)])
    grid, (xll, yll) = field.heatmap((-2, -2, 2, 3))
    p = tmp_path / "w.asc"
    write_ascii_grid(p, grid, xll, yll, field.resolution)
    lines = p.read_text().splitlines()
    head = dict(line.split() for line in lines[:6])
    assert [k for k in head] == ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value"]
    assert int(head["ncols"]) == 16 and int(head["nrows"]) == 20
    assert float(head["cellsize"]) == 0.25
    assert len(lines) == 6 + 20 and len(lines[6].split()) == 16
