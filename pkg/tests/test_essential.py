import numpy as np
import pytest

from conftest import K_DEFAULT, rot_y, two_view_pixels
from geotagger.sfm.essential import (
    AmbiguousCheirality,
    Correspondence,
    Degenerate,
    PureRotation,
    RansacOptions,
    decompose_essential,
    decomposition_candidates,
    estimate_essential,
    normalize_pixels,
    sampson_distance,
)
from geotagger.sfm.geometry import is_rotation, rotation_angle, skew

KK = (K_DEFAULT, K_DEFAULT)


def corr(points):
    return Correspondence(("a", 0), ("b", 0), points)


def normalized(E, ref=(2, 1)):
    E = E / np.linalg.norm(E)
    return E * np.sign(E[ref])


def test_pure_translation_gives_skew_t():
    pts = two_view_pixels(np.eye(3), np.array([1.0, 0.0, 0.0]), n=20)
    E, mask = estimate_essential(corr(pts), KK)
    expected = normalized(np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float))
    np.testing.assert_allclose(normalized(E), expected, atol=1e-9)
    xa = normalize_pixels(pts[:, :2], K_DEFAULT)
    xb = normalize_pixels(pts[:, 2:], K_DEFAULT)
    assert sampson_distance(E, xa, xb).max() < 1e-9
    assert mask.all()


def test_essential_manifold():
    R = rot_y(12.0)
    pts = two_view_pixels(R, np.array([-1.5, 0.1, 0.3]), n=40, seed=4)
    E, _ = estimate_essential(corr(pts), KK)
    E = E / np.linalg.norm(E)
    s = np.linalg.svd(E, compute_uv=False)
    assert abs(s[0] - s[1]) / s[0] < 1e-6
    assert s[2] < 1e-9
    assert abs(np.linalg.det(E)) < 1e-6
    assert np.abs(2 * E @ E.T @ E - np.trace(E @ E.T) * E).max() < 1e-6


def test_outliers_rejected_exactly():
    R = rot_y(5.0)
    t = np.array([-1.0, 0.0, 0.2])
    n = 50
    pts = two_view_pixels(R, t, n=n, seed=7)
    E_true = skew(t) @ R
    rng = np.random.default_rng(11)
    bad = rng.choice(n, n // 5, replace=False)
    for i in bad:
        while True:
            cand = rng.uniform(0, 640, 4)
            xa = normalize_pixels(cand[None, :2], K_DEFAULT)
            xb = normalize_pixels(cand[None, 2:], K_DEFAULT)
            if sampson_distance(E_true, xa, xb)[0] * 320 > 10:
                break
        pts[i] = cand
    _, mask = estimate_essential(corr(pts), KK, RansacOptions(seed=3))
    expected = np.ones(n, dtype=bool)
    expected[bad] = False
    np.testing.assert_array_equal(mask, expected)


def test_seven_points_degenerate():
    pts = two_view_pixels(np.eye(3), np.array([1.0, 0, 0]), n=7)
    with pytest.raises(Degenerate):
        estimate_essential(corr(pts), KK)


def test_pure_rotation_detected():
    pts = two_view_pixels(rot_y(10.0), np.zeros(3), n=30)
    with pytest.raises(PureRotation):
        estimate_essential(corr(pts), KK)


def test_deterministic_for_seed():
    pts = two_view_pixels(rot_y(3.0), np.array([-1.0, 0, 0]), n=30, seed=2)
    pts[:5] += 40.0
    a = estimate_essential(corr(pts), KK, RansacOptions(seed=9))
    b = estimate_essential(corr(pts), KK, RansacOptions(seed=9))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


class TestDecompose:
    def test_identity_motion(self):
        pts = two_view_pixels(np.eye(3), np.array([1.0, 0, 0]), n=20)
        E = skew([1.0, 0, 0])
        T = decompose_essential(E, normalize_pixels(pts[:, :2], K_DEFAULT), normalize_pixels(pts[:, 2:], K_DEFAULT))
        assert rotation_angle(T.R) < 1e-6
        np.testing.assert_allclose(T.t, [1.0, 0, 0], atol=1e-6)

    def test_yaw_10_baseline_2m_east(self):
        # camera b sits 2 m to the right (east for a north-facing camera) and is turned 10 deg
        R = rot_y(10.0)
        center_b = np.array([2.0, 0.0, 0.0])
        t = -R @ center_b
        pts = two_view_pixels(R, t, n=40, seed=5)
        E, mask = estimate_essential(corr(pts), KK)
        T = decompose_essential(
            E, normalize_pixels(pts[mask, :2], K_DEFAULT), normalize_pixels(pts[mask, 2:], K_DEFAULT)
        )
        assert rotation_angle(T.R.T @ R) < 1e-6
        cos = T.t @ (t / np.linalg.norm(t))
        assert np.degrees(np.arccos(min(1.0, cos))) < 0.1

    def test_candidates_are_rotations(self):
        E = skew([0.3, -0.1, 0.9]) @ rot_y(20.0)
        cands = decomposition_candidates(E)
        assert len(cands) == 4
        assert all(is_rotation(R) for R, _ in cands)

    def test_mixed_cheirality_is_ambiguous(self):
        # half the points in front of both cameras, half behind both: no candidate wins a majority
        R, t = np.eye(3), np.array([1.0, 0.0, 0.0])
        rng = np.random.default_rng(0)
        X = np.column_stack([rng.uniform(-3, 3, 20), rng.uniform(-2, 2, 20), rng.uniform(4, 10, 20)])
        X[10:] *= -1
        Xb = X @ R.T + t
        xa = X / X[:, 2:3]
        xb = Xb / Xb[:, 2:3]
        with pytest.raises(AmbiguousCheirality):
            decompose_essential(skew(t) @ R, xa, xb)
