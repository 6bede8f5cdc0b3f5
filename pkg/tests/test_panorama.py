import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geotagger.geodesy import angle_diff
from geotagger.panorama import (
    OutOfView,
    PixelCoord,
    RectilinearView,
    bearing_to_view_pixel,
    pixel_to_bearing,
    render_view,
    split_panorama,
)


def test_eight_views_with_45_degree_steps():
    views = split_panorama("p", 640, 480)
    assert len(views) == 8
    assert [v.yaw_offset for v in views] == [0, 45, 90, 135, 180, 225, 270, 315]
    assert all(v.hfov == 90 for v in views)
    assert views[0].yaw_offset == 0


def test_adjacent_views_overlap_by_half():
    a, b = split_panorama("p")[:2]
    overlap = (a.yaw_offset + a.hfov / 2) - (b.yaw_offset - b.hfov / 2)
    assert overlap == 45


def test_dataset_view_count():
    assert sum(len(split_panorama(f"p{i}")) for i in range(112)) == 896


@pytest.mark.parametrize("w, hfov", [(640, 90.0), (1024, 90.0), (800, 60.0)])
def test_focal_consistent_with_fov(w, hfov):
    v = RectilinearView("p", 0, w, w, hfov)
    fov = 2 * math.degrees(math.atan((w / 2) / v.focal_px))
    assert abs(fov - hfov) / hfov < 1e-9


def test_bad_dimensions():
    with pytest.raises(ValueError):
        split_panorama("p", 0, 10)


class TestPixelToBearing:
    def test_center_pixel(self):
        v = split_panorama("p")[2]
        assert pixel_to_bearing(v, 10.0, PixelCoord(320, 320)) == pytest.approx(100.0)

    def test_left_edge(self):
        v = split_panorama("p")[0]
        assert pixel_to_bearing(v, 0.0, PixelCoord(0, 320)) == pytest.approx(315.0)

    def test_three_quarter_column(self):
        v = split_panorama("p")[0]
        assert pixel_to_bearing(v, 0.0, PixelCoord(480, 320)) == pytest.approx(math.degrees(math.atan(0.5)))
        assert pixel_to_bearing(v, 0.0, PixelCoord(480, 320)) == pytest.approx(26.565, abs=1e-3)

    def test_out_of_view(self):
        v = split_panorama("p")[0]
        with pytest.raises(OutOfView):
            pixel_to_bearing(v, 0.0, PixelCoord(-1, 10))
        with pytest.raises(OutOfView):
            pixel_to_bearing(v, 0.0, PixelCoord(10, 641))


class TestBearingToViewPixel:
    def test_heading_itself(self):
        views = split_panorama("p")
        cands = dict(bearing_to_view_pixel(views, 30.0, 30.0))
        assert cands[0].u == pytest.approx(320.0)
        # the neighbours see it at their borders, half a field of view off center
        assert 7 in cands
        assert abs(angle_diff(pixel_to_bearing(views[7], 30.0, cands[7]), 30.0)) < 0.01

    def test_heading_plus_100(self):
        views = split_panorama("p")
        cands = dict(bearing_to_view_pixel(views, 20.0, 120.0))
        offset = math.degrees(math.atan((cands[2].u - 320) / views[2].focal_px))
        assert offset == pytest.approx(10.0)

    def test_round_trip_sweep(self):
        views = split_panorama("p", 640, 640)
        heading = 17.3
        worst = 0.0
        for b in np.arange(3600) / 10.0:
            cands = bearing_to_view_pixel(views, heading, b)
            assert cands, f"bearing {b} not covered"
            centered = min(abs(angle_diff(b, heading + views[k].yaw_offset)) for k, _ in cands)
            assert centered <= 45.0
            for k, p in cands:
                worst = max(worst, abs(angle_diff(pixel_to_bearing(views[k], heading, p), b)))
        assert worst < 0.01

    @settings(max_examples=200)
    @given(st.floats(0, 360, exclude_max=True), st.floats(0, 360, exclude_max=True))
    def test_round_trip_property(self, heading, b):
        views = split_panorama("p")
        cands = bearing_to_view_pixel(views, heading, b)
        assert 1 <= len(cands) <= 3
        for k, p in cands:
            assert abs(angle_diff(pixel_to_bearing(views[k], heading, p), b)) < 0.01


def test_render_view_centers_heading():
    # a panorama whose columns encode azimuth; the view-0 center column must see azimuth 0
    H, W = 90, 360
    pano = np.tile((np.arange(W) + 0.5)[None, :] - 180.0, (H, 1))
    v = RectilinearView("p", 0, 64, 64)
    img = render_view(pano, v)
    assert img.shape == (64, 64)
    assert abs(img[32, 31:33].mean()) < 1.0
    v2 = RectilinearView("p", 2, 64, 64)
    assert abs(render_view(pano, v2)[32, 31:33].mean() - 90.0) < 1.0
