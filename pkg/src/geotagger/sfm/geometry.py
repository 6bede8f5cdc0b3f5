"""Rigid transforms, camera orientation conventions and pinhole projection.

World frame is local east/north/up (meters). Camera frames follow the usual
computer-vision convention: x right, y down, z forward. A panorama's body
frame is the camera frame of its view 0; view k is the body frame yawed by the
view's offset about the (down) y axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from ..geodesy import EnuPoint, GeoPoint, LocalFrame, normalize_bearing
from ..panorama import PixelCoord, RectilinearView

DEFAULT_CAMERA_HEIGHT_M = 2.5


def skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def exp_so3(w) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(w, dtype=float)).as_matrix()


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle of ``R`` in radians."""
    c = (np.trace(R) - 1.0) / 2.0
    s = np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    return math.atan2(s, c)


def body_rotation(heading: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """World-to-camera rotation for a camera looking along ``heading`` (degrees).

    Rows are the camera's right, down and forward axes expressed in ENU.
    Pitch (positive up) and roll are applied in the camera frame.
    """
    h = math.radians(heading)
    R = np.array(
        [
            [math.cos(h), -math.sin(h), 0.0],
            [0.0, 0.0, -1.0],
            [math.sin(h), math.cos(h), 0.0],
        ]
    )
    if pitch or roll:
        R = exp_so3([0.0, 0.0, math.radians(roll)]) @ exp_so3([-math.radians(pitch), 0.0, 0.0]) @ R
    return R


_B0 = body_rotation(0.0)


def view_yaw_rotation(yaw_offset: float) -> np.ndarray:
    """Rotation taking a panorama body frame to the frame of a view yawed by ``yaw_offset``."""
    return body_rotation(yaw_offset) @ _B0.T


def heading_from_rotation(R: np.ndarray) -> float:
    forward = R[2]
    return normalize_bearing(math.degrees(math.atan2(forward[0], forward[1])))


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    return bool(
        np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol
    )


@dataclass(frozen=True)
class PoseTransform:
    """Rigid transform x_cam = R x_world + t, i.e. the 4x4 matrix [[R, t], [0, 1]]."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))
        if not is_rotation(self.R):
            raise ValueError("R is not a rotation matrix")

    @classmethod
    def identity(cls) -> "PoseTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_center(cls, R: np.ndarray, center) -> "PoseTransform":
        R = np.asarray(R, dtype=float)
        return cls(R, -R @ np.asarray(center, dtype=float))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "PoseTransform":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def inverse(self) -> "PoseTransform":
        return PoseTransform(self.R.T, -self.R.T @ self.t)

    def __matmul__(self, other: "PoseTransform") -> "PoseTransform":
        return PoseTransform(self.R @ other.R, self.R @ other.t + self.t)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X @ self.R.T + self.t


@dataclass
class CameraPose:
    """Panorama camera metadata: geolocation, compass heading, anchor flag."""

    camera_id: str
    position: GeoPoint
    heading: float
    fixed: bool = False
    height: float = DEFAULT_CAMERA_HEIGHT_M
    _enu_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not math.isfinite(self.heading):
            raise ValueError(f"camera {self.camera_id}: non-finite heading")
        self.heading = normalize_bearing(self.heading)

    def local(self, frame: LocalFrame) -> EnuPoint:
        e = self._enu_cache.get(frame)
        if e is None:
            e = self._enu_cache[frame] = frame.to_enu(self.position)
        return e

    def center(self, frame: LocalFrame) -> np.ndarray:
        e = self.local(frame)
        return np.array([e.x, e.y, self.height])

    def transform(self, frame: LocalFrame) -> PoseTransform:
        return PoseTransform.from_center(body_rotation(self.heading), self.center(frame))


@dataclass(frozen=True)
class ViewCamera:
    """One calibrated pinhole view: world-to-camera rotation, center, intrinsics."""

    R: np.ndarray
    center: np.ndarray
    K: np.ndarray

    @classmethod
    def from_body(cls, R_body: np.ndarray, center, view: RectilinearView) -> "ViewCamera":
        return cls(view_yaw_rotation(view.yaw_offset) @ R_body, np.asarray(center, dtype=float), view.K)

    def to_camera(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.center) @ self.R.T

    def project(self, X) -> np.ndarray:
        Xc = self.to_camera(X)
        uvw = Xc @ self.K.T
        return uvw[..., :2] / uvw[..., 2:3]

    def ray(self, p) -> np.ndarray:
        """Unit world-frame direction through pixel ``p`` ((u, v) or PixelCoord)."""
        if isinstance(p, PixelCoord):
            p = (p.u, p.v)
        d = np.linalg.solve(self.K, np.array([p[0], p[1], 1.0]))
        d = self.R.T @ d
        return d / np.linalg.norm(d)
