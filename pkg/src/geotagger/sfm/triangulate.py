"""Ray-midpoint triangulation of matched pixels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import ViewCamera

MIN_RAY_ANGLE_DEG = 0.1


class ParallelRays(ValueError):
    """Viewing rays are (near) parallel or share a center; depth is unobservable."""


@dataclass(frozen=True)
class TriangulatedPoint:
    point: np.ndarray
    reprojection_error: float  # RMS over the observing views, pixels
    ray_angle: float  # degrees


def triangulate(cam_a: ViewCamera, cam_b: ViewCamera, px_a, px_b, min_angle: float = MIN_RAY_ANGLE_DEG) -> TriangulatedPoint:
    """Midpoint of the common perpendicular of the two viewing rays."""
    ca, cb = cam_a.center, cam_b.center
    if np.linalg.norm(cb - ca) < 1e-9:
        raise ParallelRays("camera centers coincide")
    da = cam_a.ray(px_a)
    db = cam_b.ray(px_b)
    angle = math.degrees(math.acos(min(1.0, abs(float(da @ db)))))
    if angle < min_angle:
        raise ParallelRays(f"ray angle {angle:.4f} deg below {min_angle} deg")
    w = ca - cb
    b = da @ db
    d = da @ w
    e = db @ w
    den = 1.0 - b * b
    s = (b * e - d) / den
    r = (e - b * d) / den
    X = 0.5 * ((ca + s * da) + (cb + r * db))
    err = _rms_reprojection([cam_a, cam_b], [px_a, px_b], X)
    return TriangulatedPoint(X, err, angle)


def triangulate_rays(centers: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Least-squares point closest to all rays (the n-view midpoint)."""
    A = np.zeros((3, 3))
    rhs = np.zeros(3)
    for c, d in zip(centers, directions):
        d = d / np.linalg.norm(d)
        P = np.eye(3) - np.outer(d, d)
        A += P
        rhs += P @ c
    if np.linalg.cond(A) > 1e10:
        raise ParallelRays("rays do not constrain a point")
    return np.linalg.solve(A, rhs)


def triangulate_track(cameras: list[ViewCamera], pixels) -> TriangulatedPoint:
    if len(cameras) < 2:
        raise ValueError("a track needs at least two observations")
    centers = np.array([c.center for c in cameras])
    if np.ptp(centers, axis=0).max() < 1e-9:
        raise ParallelRays("all observing cameras share one center")
    dirs = np.array([c.ray(p) for c, p in zip(cameras, pixels)])
    X = triangulate_rays(centers, dirs)
    cosmin = min(abs(float(dirs[i] @ dirs[j])) for i in range(len(dirs)) for j in range(i + 1, len(dirs)))
    angle = math.degrees(math.acos(min(1.0, cosmin)))
    return TriangulatedPoint(X, _rms_reprojection(cameras, pixels, X), angle)


def _rms_reprojection(cameras, pixels, X) -> float:
    errs = []
    for cam, p in zip(cameras, pixels):
        if hasattr(p, "u"):
            p = (p.u, p.v)
        errs.append(np.sum((cam.project(X) - np.asarray(p, dtype=float)) ** 2))
    return float(math.sqrt(np.mean(errs)))
