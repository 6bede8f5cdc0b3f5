import numpy as np
import pytest

from geotagger.panorama import split_panorama
from geotagger.sfm.geometry import ViewCamera, body_rotation
from geotagger.sfm.triangulate import ParallelRays, triangulate, triangulate_track

VIEW = split_panorama("p")[0]


def cam(center):
    return ViewCamera.from_body(body_rotation(0.0), np.asarray(center, dtype=float), VIEW)


def test_two_cameras_exact():
    a, b = cam([0, 0, 0]), cam([1, 0, 0])
    X = np.array([0.5, 5.0, 0.0])
    tp = triangulate(a, b, a.project(X), b.project(X))
    assert np.linalg.norm(tp.point - X) < 1e-9
    assert tp.reprojection_error < 1e-9


def test_symmetric_midpoint():
    a, b = cam([0, 0, 0]), cam([1, 0, 0])
    X = np.array([0.5, 7.0, 0.3])
    tp = triangulate(a, b, a.project(X), b.project(X))
    assert abs(tp.point[0] - 0.5) < 1e-12


def test_same_center():
    a = cam([0, 0, 0])
    with pytest.raises(ParallelRays):
        triangulate(a, cam([0, 0, 0]), (320, 320), (330, 320))


def test_near_parallel():
    a, b = cam([0, 0, 0]), cam([1, 0, 0])
    X = np.array([0.5, 1e4, 0.0])
    with pytest.raises(ParallelRays):
        triangulate(a, b, a.project(X), b.project(X))


def test_multi_view_track():
    cams = [cam([x, 0, 2.5]) for x in (0.0, 3.0, 6.0)]
    X = np.array([2.0, 9.0, 4.0])
    tp = triangulate_track(cams, [c.project(X) for c in cams])
    assert np.linalg.norm(tp.point - X) < 1e-9
    with pytest.raises(ValueError):
        triangulate_track(cams[:1], [cams[0].project(X)])
