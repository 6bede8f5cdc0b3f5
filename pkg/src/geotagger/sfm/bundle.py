"""GPS-fused bundle adjustment solved with Levenberg-Marquardt.

Objective::

    sum_obs huber(|project(X_j; R_i, c_i, view) - uv|^2)
      + gps_weight     * sum_i |c_i - c_i^gps|^2
      + heading_weight * sum_i angdiff(heading(R_i), heading_i^prior)^2
      + tilt_weight    * sum_i (pitch_i^2 + roll_i^2)

Rotations are updated by left-multiplied axis-angle increments,
R <- exp([w]_x) R, and re-orthonormalized after every step. Angles in the
prior terms are in degrees, reprojection residuals in pixels and positions
in meters.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from ..geodesy import angle_diff
from ..panorama import PixelCoord, RectilinearView
from .geometry import exp_so3, heading_from_rotation, orthonormalize, skew, view_yaw_rotation

DEG = 180.0 / math.pi


class Diverged(RuntimeError):
    """Damping exceeded its ceiling without finding a decreasing step."""


class RankDeficient(RuntimeError):
    """Damped normal equations are singular."""


@dataclass
class Observation:
    camera: int
    view: RectilinearView
    pixel: PixelCoord


@dataclass
class Track:
    point: np.ndarray
    observations: list[Observation] = field(default_factory=list)

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float).reshape(3)


@dataclass
class CameraState:
    """A panorama camera as seen by the optimizer (local ENU + up)."""

    camera_id: str
    R: np.ndarray
    center: np.ndarray
    prior_center: np.ndarray
    prior_heading: float
    fixed: bool = False

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.prior_center = np.asarray(self.prior_center, dtype=float).reshape(3)

    @property
    def heading(self) -> float:
        return heading_from_rotation(self.R)


@dataclass(frozen=True)
class BAOptions:
    gps_weight: float = 1.0
    heading_weight: float = 1.0
    tilt_weight: float = 1.0
    robust_delta: float = 2.0
    max_iters: int = 100
    tol: float = 1e-10
    gradient_tol: float = 1e-8
    refine_rotation: bool = True
    initial_damping: float = 1e-4
    max_damping: float = 1e12


@dataclass
class BAReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    cost_history: list[float] = field(default_factory=list)
    initial_gradient_norm: float = 0.0
    gradient_norm: float = 0.0  # at the returned state, max-abs
    termination: str = ""
    n_cameras: int = 0
    n_tracks: int = 0
    n_observations: int = 0
    final_rms_px: float = 0.0

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "initial_gradient_norm": self.initial_gradient_norm,
            "gradient_norm": self.gradient_norm,
            "termination": self.termination,
            "n_cameras": self.n_cameras,
            "n_tracks": self.n_tracks,
            "n_observations": self.n_observations,
            "final_rms_px": self.final_rms_px,
        }


class BAProblem:
    """Flattened observation arrays plus the parameter layout."""

    def __init__(self, cameras: Sequence[CameraState], tracks: Sequence[Track], options: BAOptions):
        self.options = options
        self.n_cam = len(cameras)
        self.n_trk = len(tracks)
        self.prior_C = np.array([c.prior_center for c in cameras]).reshape(-1, 3)
        self.prior_h = np.array([c.prior_heading for c in cameras], dtype=float)
        self.free = np.array([not c.fixed for c in cameras], dtype=bool)

        cam, trk, Y, f, cx, cy, uv = [], [], [], [], [], [], []
        for j, t in enumerate(tracks):
            for ob in t.observations:
                cam.append(ob.camera)
                trk.append(j)
                Y.append(view_yaw_rotation(ob.view.yaw_offset))
                f.append(ob.view.focal_px)
                px, py = ob.view.principal_point
                cx.append(px)
                cy.append(py)
                uv.append((ob.pixel.u, ob.pixel.v))
        self.cam = np.array(cam, dtype=int)
        self.trk = np.array(trk, dtype=int)
        self.Y = np.array(Y).reshape(-1, 3, 3)
        self.f = np.array(f, dtype=float)
        self.c0 = np.column_stack([cx, cy]) if cx else np.zeros((0, 2))
        self.uv = np.array(uv, dtype=float).reshape(-1, 2)
        self.n_obs = len(self.cam)

        # parameter layout
        self.rot_dim = 3 if options.refine_rotation else 0
        per_cam = self.rot_dim + 3
        self.cam_offset = np.full(self.n_cam, -1, dtype=int)
        k = 0
        for i in range(self.n_cam):
            if self.free[i]:
                self.cam_offset[i] = k
                k += per_cam
        self.trk_offset = k + 3 * np.arange(self.n_trk)
        self.n_params = k + 3 * self.n_trk

        self.n_res = 2 * self.n_obs + 3 * self.n_cam + 3 * self.n_cam

    # -- residuals ---------------------------------------------------------

    def _camera_frame(self, R, C, X):
        Xb = np.einsum("kij,kj->ki", R[self.cam], X[self.trk] - C[self.cam])
        Xc = np.einsum("kij,kj->ki", self.Y, Xb)
        return Xb, Xc

    def residuals(self, R, C, X) -> np.ndarray:
        """Raw residual vector (prior blocks already scaled by sqrt(weight))."""
        o = self.options
        _, Xc = self._camera_frame(R, C, X)
        proj = self.f[:, None] * Xc[:, :2] / Xc[:, 2:3] + self.c0
        r_obs = (proj - self.uv).ravel()
        r_gps = math.sqrt(o.gps_weight) * (C - self.prior_C).ravel()
        fwd = R[:, 2, :]
        right = R[:, 0, :]
        heading = np.degrees(np.arctan2(fwd[:, 0], fwd[:, 1]))
        r_head = math.sqrt(o.heading_weight) * np.array(
            [angle_diff(h, p) for h, p in zip(heading, self.prior_h)]
        )
        r_tilt = math.sqrt(o.tilt_weight) * DEG * np.column_stack([fwd[:, 2], right[:, 2]]).ravel()
        return np.concatenate([r_obs, r_gps, r_head, r_tilt])

    def jacobian(self, R, C, X) -> sp.csr_matrix:
        o = self.options
        rows, cols, vals = [], [], []

        def put(r0, c0, block):
            nr, nc = block.shape[-2:]
            rr = r0[:, None, None] + np.arange(nr)[None, :, None]
            cc = c0[:, None, None] + np.arange(nc)[None, None, :]
            rr, cc = np.broadcast_arrays(rr, cc)
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            vals.append(np.broadcast_to(block, rr.shape).ravel())

        if self.n_obs:
            Xb, Xc = self._camera_frame(R, C, X)
            z = Xc[:, 2]
            dp = np.zeros((self.n_obs, 2, 3))
            dp[:, 0, 0] = self.f / z
            dp[:, 0, 2] = -self.f * Xc[:, 0] / z**2
            dp[:, 1, 1] = self.f / z
            dp[:, 1, 2] = -self.f * Xc[:, 1] / z**2
            YR = np.einsum("kij,kjl->kil", self.Y, R[self.cam])
            J_X = dp @ YR
            r0 = 2 * np.arange(self.n_obs)
            put(r0, self.trk_offset[self.trk], J_X)
            free = self.free[self.cam]
            off = self.cam_offset[self.cam]
            J_C = -J_X
            put(r0[free], off[free] + self.rot_dim, J_C[free])
            if self.rot_dim:
                Sx = np.array([skew(v) for v in Xb])
                J_w = -dp @ np.einsum("kij,kjl->kil", self.Y, Sx)
                put(r0[free], off[free], J_w[free])

        base = 2 * self.n_obs
        idx = np.flatnonzero(self.free)
        sg = math.sqrt(o.gps_weight)
        put(base + 3 * idx, self.cam_offset[idx] + self.rot_dim, np.broadcast_to(sg * np.eye(3), (len(idx), 3, 3)))

        if self.rot_dim and len(idx):
            e1, e3 = np.eye(3)[0], np.eye(3)[2]
            S1, S3 = skew(e1), skew(e3)
            Rf = R[idx]
            fwd = Rf[:, 2, :]
            right = Rf[:, 0, :]
            dF = np.einsum("kji,jl->kil", Rf, S3)  # R^T [e3]_x
            dRt = np.einsum("kji,jl->kil", Rf, S1)  # R^T [e1]_x
            n2 = fwd[:, 0] ** 2 + fwd[:, 1] ** 2
            dh = DEG * (fwd[:, 1, None] * dF[:, 0, :] - fwd[:, 0, None] * dF[:, 1, :]) / n2[:, None]
            sh = math.sqrt(o.heading_weight)
            put(base + 3 * self.n_cam + idx, self.cam_offset[idx], (sh * dh)[:, None, :])
            st = math.sqrt(o.tilt_weight) * DEG
            tilt = np.stack([dF[:, 2, :], dRt[:, 2, :]], axis=1) * st
            put(base + 4 * self.n_cam + 2 * idx, self.cam_offset[idx], tilt)

        if rows:
            J = sp.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(self.n_res, self.n_params),
            )
        else:
            J = sp.coo_matrix((self.n_res, self.n_params))
        return J.tocsr()

    # -- robust weighting --------------------------------------------------

    def cost_and_weights(self, r: np.ndarray) -> tuple[float, np.ndarray]:
        """Objective value and per-residual IRLS weights (Huber on each 2-vector)."""
        delta = self.options.robust_delta
        w = np.ones_like(r)
        r_obs = r[: 2 * self.n_obs].reshape(-1, 2)
        s = np.linalg.norm(r_obs, axis=1)
        if delta and delta > 0:
            big = s > delta
            rho = np.where(big, 2 * delta * s - delta**2, s**2)
            wo = np.where(big, delta / np.maximum(s, 1e-300), 1.0)
            w[: 2 * self.n_obs] = np.repeat(wo, 2)
        else:
            rho = s**2
        cost = float(rho.sum() + np.sum(r[2 * self.n_obs :] ** 2))
        return cost, w

    # -- updates -----------------------------------------------------------

    def apply(self, R, C, X, dx):
        R = R.copy()
        C = C.copy()
        X = X.copy()
        for i in np.flatnonzero(self.free):
            k = self.cam_offset[i]
            if self.rot_dim:
                R[i] = orthonormalize(exp_so3(dx[k : k + 3]) @ R[i])
            C[i] = C[i] + dx[k + self.rot_dim : k + self.rot_dim + 3]
        if self.n_trk:
            X = X + dx[self.trk_offset[0] :].reshape(-1, 3)
        return R, C, X


def bundle_adjust(
    cameras: Sequence[CameraState],
    tracks: Sequence[Track],
    options: BAOptions = BAOptions(),
) -> tuple[list[CameraState], list[Track], BAReport]:
    """Refine camera rotations/centers and track points jointly.

    Returns new camera and track objects; inputs are not modified.
    """
    if len(cameras) < 2:
        raise ValueError("bundle adjustment needs at least two cameras")
    for j, t in enumerate(tracks):
        if len(t.observations) < 2:
            raise ValueError(f"track {j} has fewer than two observations")
    if options.gps_weight <= 0:
        raise ValueError("gps_weight must be positive (it fixes gauge and scale)")
    if not 0 < options.initial_damping <= options.max_damping:
        raise ValueError("need 0 < initial_damping <= max_damping")

    prob = BAProblem(cameras, tracks, options)
    R = np.array([c.R for c in cameras])
    C = np.array([c.center for c in cameras])
    X = np.array([t.point for t in tracks]).reshape(-1, 3)

    report = BAReport(n_cameras=prob.n_cam, n_tracks=prob.n_trk, n_observations=prob.n_obs)
    r = prob.residuals(R, C, X)
    cost, w = prob.cost_and_weights(r)
    report.initial_cost = cost
    report.cost_history.append(cost)
    mu = options.initial_damping

    for it in range(options.max_iters):
        report.iterations = it + 1
        J = prob.jacobian(R, C, X)
        Jw = sp.diags(w) @ J
        g = Jw.T @ r
        H = (J.T @ Jw).tocsc()
        gnorm = float(np.abs(g).max()) if g.size else 0.0
        report.gradient_norm = gnorm
        if it == 0:
            report.initial_gradient_norm = gnorm
        if cost == 0.0 or gnorm < options.gradient_tol:
            report.termination = "gradient"
            break
        diag = H.diagonal()
        if np.any(diag <= 0):
            raise RankDeficient(f"{int(np.sum(diag <= 0))} parameters are unconstrained")
        accepted = False
        while mu <= options.max_damping:
            A = (H + sp.diags(mu * diag)).tocsc()
            with warnings.catch_warnings():
                warnings.simplefilter("error", MatrixRankWarning)
                try:
                    dx = spsolve(A, -g)
                except MatrixRankWarning as e:
                    raise RankDeficient("singular damped normal equations") from e
            if not np.all(np.isfinite(dx)):
                raise RankDeficient("non-finite step from damped normal equations")
            predicted = -(g @ dx) - 0.5 * dx @ (H @ dx)
            R2, C2, X2 = prob.apply(R, C, X, dx)
            r2 = prob.residuals(R2, C2, X2)
            cost2, w2 = prob.cost_and_weights(r2)
            if np.isfinite(cost2) and cost2 < cost:
                accepted = True
                rel = (cost - cost2) / cost
                R, C, X, r, w = R2, C2, X2, r2, w2
                cost = cost2
                report.cost_history.append(cost)
                mu = max(mu / 3.0, 1e-12)
                break
            if predicted <= options.tol * cost or predicted < 1e-14:
                # no meaningful decrease is available at any damping
                break
            mu *= 10.0
        if not accepted:
            if mu > options.max_damping and not (predicted <= options.tol * cost or predicted < 1e-14):
                raise Diverged(f"damping exceeded {options.max_damping:g} at iteration {it + 1}")
            report.termination = "stalled"
            break
        if rel < options.tol:
            report.termination = "relative_decrease"
            break
    else:
        report.termination = "max_iters"

    report.final_cost = cost
    if report.termination != "gradient":
        g = prob.jacobian(R, C, X).T @ (w * r)
        report.gradient_norm = float(np.abs(g).max()) if g.size else 0.0
    if prob.n_obs:
        report.final_rms_px = float(np.sqrt(np.mean(r[: 2 * prob.n_obs] ** 2) * 2))
    out_cams = [
        CameraState(c.camera_id, R[i], C[i], c.prior_center, c.prior_heading, c.fixed)
        for i, c in enumerate(cameras)
    ]
    out_tracks = [Track(X[j], list(t.observations)) for j, t in enumerate(tracks)]
    return out_cams, out_tracks, report
