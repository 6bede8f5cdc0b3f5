"""Camera pose denoising driver: two-view geometry, track building, BA."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..geodesy import EnuPoint, LocalFrame, angle_diff
from ..panorama import DEFAULT_VIEW_SIZE, N_VIEWS, VIEW_HFOV_DEG, PixelCoord, RectilinearView, split_panorama
from .bundle import BAOptions, BAReport, CameraState, Observation, Track, bundle_adjust
from .essential import (
    AmbiguousCheirality,
    Correspondence,
    Degenerate,
    PureRotation,
    RansacOptions,
    decompose_essential,
    estimate_essential,
    normalize_pixels,
)
from .geometry import CameraPose, ViewCamera, body_rotation, rotation_angle, view_yaw_rotation
from .triangulate import ParallelRays, triangulate_track

log = logging.getLogger(__name__)

MODES = ("none", "tau_only", "full")


class DisconnectedGraph(ValueError):
    def __init__(self, unreachable: Sequence[str]):
        self.unreachable = list(unreachable)
        super().__init__(f"cameras not connected to the view graph: {', '.join(self.unreachable)}")


@dataclass(frozen=True)
class RefineOptions:
    mode: str = "full"
    ba: BAOptions = BAOptions()
    ransac: RansacOptions = RansacOptions()
    view_size: tuple[int, int] = DEFAULT_VIEW_SIZE
    n_views: int = N_VIEWS
    hfov: float = VIEW_HFOV_DEG
    max_track_range: float = 100.0
    max_initial_reprojection: float = 200.0
    min_triangulation_angle: float = 2.0
    outlier_px: float = 8.0
    rejection_rounds: int = 3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")


@dataclass
class PoseReport:
    mode: str
    per_camera: list[dict] = field(default_factory=list)
    mean_position_shift_m: float = 0.0
    mean_bearing_shift_deg: float = 0.0
    pairs_used: int = 0
    pairs_skipped: dict = field(default_factory=dict)
    n_tracks: int = 0
    relative_rotation_disagreement_deg: float | None = None
    ba: BAReport | None = None

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mean_position_shift_m": self.mean_position_shift_m,
            "mean_bearing_shift_deg": self.mean_bearing_shift_deg,
            "pairs_used": self.pairs_used,
            "pairs_skipped": self.pairs_skipped,
            "n_tracks": self.n_tracks,
            "relative_rotation_disagreement_deg": self.relative_rotation_disagreement_deg,
            "per_camera": self.per_camera,
            "bundle_adjustment": self.ba.as_dict() if self.ba else None,
        }


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, a):
        self.parent.setdefault(a, a)
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def _pixel_key(pano: str, view: int, u: float, v: float):
    return (pano, view, round(u, 3), round(v, 3))


def build_tracks(
    correspondences: Sequence[Correspondence],
    masks: Sequence[np.ndarray],
    camera_index: dict[str, int],
    views: dict[str, list[RectilinearView]],
) -> list[Track]:
    """Chain inlier matches sharing a pixel (to 1e-3 px) into multi-view tracks.

    Tracks observed by a single panorama or seen twice in one view are dropped.
    """
    uf = _UnionFind()
    exact: dict = {}
    for c, mask in zip(correspondences, masks):
        for ua, va, ub, vb in c.points[mask]:
            ka, kb = _pixel_key(*c.view_a, ua, va), _pixel_key(*c.view_b, ub, vb)
            exact.setdefault(ka, (float(ua), float(va)))
            exact.setdefault(kb, (float(ub), float(vb)))
            uf.union(ka, kb)
    groups: dict = {}
    for key in sorted(uf.parent):
        groups.setdefault(uf.find(key), []).append(key)
    tracks = []
    for root in sorted(groups):
        keys = groups[root]
        if len({(k[0], k[1]) for k in keys}) != len(keys):
            continue
        if len({k[0] for k in keys}) < 2:
            continue
        obs = [Observation(camera_index[k[0]], views[k[0]][k[1]], PixelCoord(*exact[k])) for k in keys]
        tracks.append(Track(np.zeros(3), obs))
    return tracks


def _view_camera(state: CameraState, view: RectilinearView) -> ViewCamera:
    return ViewCamera.from_body(state.R, state.center, view)


def initialize_tracks(tracks: list[Track], states: list[CameraState], options: RefineOptions) -> list[Track]:
    kept = []
    for t in tracks:
        cams = [_view_camera(states[o.camera], o.view) for o in t.observations]
        try:
            tp = triangulate_track(cams, [o.pixel for o in t.observations])
        except ParallelRays:
            continue
        X = tp.point
        if tp.ray_angle < options.min_triangulation_angle:
            continue
        if any(cam.to_camera(X)[2] <= 0 for cam in cams):
            continue
        if np.linalg.norm(X[:2] - cams[0].center[:2]) > options.max_track_range:
            continue
        if tp.reprojection_error > options.max_initial_reprojection:
            continue
        kept.append(Track(X, t.observations))
    return kept


def _track_ok(t: Track, states: list[CameraState], options: RefineOptions) -> bool:
    for o in t.observations:
        cam = _view_camera(states[o.camera], o.view)
        if cam.to_camera(t.point)[2] <= 0:
            return False
        if np.linalg.norm(t.point[:2] - cam.center[:2]) > options.max_track_range:
            return False
        if np.linalg.norm(cam.project(t.point) - (o.pixel.u, o.pixel.v)) > options.outlier_px:
            return False
    return True


def _connectivity(n: int, edges: list[tuple[int, int]]) -> np.ndarray:
    if not edges:
        return np.arange(n)
    a = np.array(edges)
    g = coo_matrix((np.ones(len(a)), (a[:, 0], a[:, 1])), shape=(n, n))
    return connected_components(g, directed=False)[1]


def camera_states(cameras: Sequence[CameraPose], frame: LocalFrame) -> list[CameraState]:
    states = []
    for cam in cameras:
        c = cam.center(frame)
        states.append(CameraState(cam.camera_id, body_rotation(cam.heading), c, c.copy(), cam.heading, cam.fixed))
    return states


def refine_poses(
    cameras: Sequence[CameraPose],
    correspondences: Sequence[Correspondence],
    frame: LocalFrame,
    options: RefineOptions = RefineOptions(),
) -> tuple[list[CameraPose], PoseReport]:
    """Correct camera positions (and headings in ``full`` mode) from image matches.

    Chains RANSAC essential estimation, cheirality-checked decomposition,
    track triangulation and the GPS-fused bundle adjustment.
    """
    report = PoseReport(options.mode)
    cameras = list(cameras)
    if options.mode == "none":
        report.per_camera = [
            {"camera_id": c.camera_id, "position_shift_m": 0.0, "bearing_shift_deg": 0.0} for c in cameras
        ]
        return [CameraPose(c.camera_id, c.position, c.heading, c.fixed, c.height) for c in cameras], report

    camera_index = {c.camera_id: i for i, c in enumerate(cameras)}
    w, h = options.view_size
    views = {c.camera_id: split_panorama(c.camera_id, w, h, options.n_views, options.hfov) for c in cameras}
    states = camera_states(cameras, frame)

    used, masks, edges = [], [], []
    skipped = {"degenerate": 0, "pure_rotation": 0, "ambiguous": 0, "same_panorama": 0}
    disagreements = []
    for c in correspondences:
        pa, pb = c.view_a[0], c.view_b[0]
        if pa not in camera_index or pb not in camera_index:
            raise KeyError(f"correspondence references unknown camera {pa if pa not in camera_index else pb}")
        if pa == pb:
            skipped["same_panorama"] += 1
            continue
        va, vb = views[pa][c.view_a[1]], views[pb][c.view_b[1]]
        try:
            E, mask = estimate_essential(c, (va.K, vb.K), options.ransac)
            rel = decompose_essential(
                E, normalize_pixels(c.points[mask, :2], va.K), normalize_pixels(c.points[mask, 2:], vb.K)
            )
        except Degenerate:
            skipped["degenerate"] += 1
            continue
        except PureRotation:
            skipped["pure_rotation"] += 1
            continue
        except AmbiguousCheirality:
            skipped["ambiguous"] += 1
            continue
        ia, ib = camera_index[pa], camera_index[pb]
        Ra = view_yaw_rotation(va.yaw_offset) @ states[ia].R
        Rb = view_yaw_rotation(vb.yaw_offset) @ states[ib].R
        disagreements.append(np.degrees(rotation_angle(rel.R.T @ Rb @ Ra.T)))
        used.append(c)
        masks.append(mask)
        edges.append((ia, ib))
    report.pairs_used = len(used)
    report.pairs_skipped = skipped
    if disagreements:
        report.relative_rotation_disagreement_deg = float(np.mean(disagreements))

    tracks = initialize_tracks(build_tracks(used, masks, camera_index, views), states, options)
    track_edges = []
    for t in tracks:
        cams = sorted({o.camera for o in t.observations})
        track_edges += [(cams[0], k) for k in cams[1:]]
    labels = _connectivity(len(cameras), edges + track_edges if tracks else [])
    if len(cameras) > 1:
        main = np.bincount(labels).argmax()
        lonely = [cameras[i].camera_id for i in range(len(cameras)) if labels[i] != main or not track_edges]
        if lonely:
            raise DisconnectedGraph(lonely)

    ba_opts = replace(options.ba, refine_rotation=options.mode == "full")
    refined, tracks, ba_report = bundle_adjust(states, tracks, ba_opts)
    for _ in range(options.rejection_rounds):
        keep = [t for t in tracks if _track_ok(t, refined, options)]
        if len(keep) == len(tracks):
            break
        log.info("rejecting %d of %d tracks after bundle adjustment", len(tracks) - len(keep), len(tracks))
        refined, tracks, ba_report = bundle_adjust(refined, keep, ba_opts)
    report.n_tracks = len(tracks)
    report.ba = ba_report

    out = []
    shifts, turns = [], []
    for cam, st in zip(cameras, refined):
        pos = frame.from_enu(EnuPoint(float(st.center[0]), float(st.center[1])))
        heading = st.heading if options.mode == "full" else cam.heading
        new = CameraPose(cam.camera_id, pos, heading, cam.fixed, cam.height)
        e0 = cam.local(frame)
        dpos = float(np.hypot(st.center[0] - e0.x, st.center[1] - e0.y))
        dh = abs(angle_diff(heading, cam.heading))
        shifts.append(dpos)
        turns.append(dh)
        report.per_camera.append({"camera_id": cam.camera_id, "position_shift_m": dpos, "bearing_shift_deg": dh})
        out.append(new)
    report.mean_position_shift_m = float(np.mean(shifts))
    report.mean_bearing_shift_deg = float(np.mean(turns))
    return out, report
