"""Synthetic street scenes with known geometry.

Cameras drive north along a straight street, traffic lights stand on the
sidewalks, and textured building facades supply feature matches. Images are
"taken" from the true poses; the metadata written out is the true pose plus
configurable GPS and heading noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geodesy import EnuPoint, GeoPoint, LocalFrame, angle_diff, direction_to_bearing, normalize_bearing
from .panorama import PixelCoord, split_panorama
from .raygraph import Detection
from .sfm.essential import Correspondence, normalize_pixels, sampson_distance
from .sfm.geometry import CameraPose, PoseTransform, ViewCamera, body_rotation, skew

DUBLIN = GeoPoint(53.3498, -6.2603)


@dataclass(frozen=True)
class SynthConfig:
    n_cameras: int = 5
    n_objects: int = 3
    n_landmarks: int = 400
    spacing: float = 8.0
    lateral_jitter: float = 1.0
    heading_jitter: float = 8.0
    camera_height: float = 2.5
    object_offset: float = 5.5
    object_height: float = 3.0
    facade_offset: float = 10.0
    facade_height: tuple[float, float] = (0.5, 8.0)
    max_detection_range: float = 25.0
    max_landmark_range: float = 35.0
    max_pair_distance: float = 30.0
    min_matches: int = 8
    gps_noise: float = 0.0
    heading_noise: float = 0.0
    pixel_noise: float = 0.0
    outlier_rate: float = 0.0
    view_size: tuple[int, int] = (640, 640)
    origin: GeoPoint = DUBLIN
    seed: int = 0


@dataclass
class SyntheticScene:
    config: SynthConfig
    frame: LocalFrame
    true_cameras: list[CameraPose]
    cameras: list[CameraPose]
    objects: list[EnuPoint]
    landmarks: np.ndarray
    detections: list[Detection]
    correspondences: list[Correspondence]
    outlier_masks: list[np.ndarray] = field(default_factory=list)
    landmark_obs: dict = field(default_factory=dict)
    osm_xml: str = ""

    def landmark_tracks(self, min_views: int = 2) -> list[tuple[int, list[tuple[int, int, np.ndarray]]]]:
        """Per landmark: (landmark index, [(camera index, view index, pixel), ...])."""
        per: dict[int, list] = {}
        for i, cam in enumerate(self.true_cameras):
            for j, (vi, uv) in self.landmark_obs[cam.camera_id].items():
                per.setdefault(j, []).append((i, vi, uv))
        return [(j, obs) for j, obs in sorted(per.items()) if len(obs) >= min_views]

    @property
    def truth(self) -> list[GeoPoint]:
        return [self.frame.from_enu(o) for o in self.objects]


def _centered_view(views, heading: float, bearing: float):
    return min(views, key=lambda v: abs(angle_diff(bearing, heading + v.yaw_offset)))


def make_scene(config: SynthConfig = SynthConfig()) -> SyntheticScene:
    rng = np.random.default_rng(config.seed)
    c = config
    frame = LocalFrame(c.origin)
    w, h = c.view_size
    length = (c.n_cameras - 1) * c.spacing

    true_cams, noisy_cams = [], []
    for i in range(c.n_cameras):
        x = rng.uniform(-c.lateral_jitter, c.lateral_jitter)
        y = i * c.spacing - length / 2
        heading = normalize_bearing(rng.uniform(-c.heading_jitter, c.heading_jitter))
        cid = f"cam{i:03d}"
        true_cams.append(CameraPose(cid, frame.from_enu(EnuPoint(x, y)), heading, height=c.camera_height))
        nx = x + rng.normal(0.0, c.gps_noise) if c.gps_noise else x
        ny = y + rng.normal(0.0, c.gps_noise) if c.gps_noise else y
        nh = heading + rng.normal(0.0, c.heading_noise) if c.heading_noise else heading
        noisy_cams.append(CameraPose(cid, frame.from_enu(EnuPoint(nx, ny)), nh, height=c.camera_height))

    objects = []
    for k in range(c.n_objects):
        side = 1.0 if k % 2 == 0 else -1.0
        y = -length / 2 + (k + 0.5) * (length / max(c.n_objects, 1)) if c.n_objects > 1 else 0.0
        objects.append(EnuPoint(side * c.object_offset, y))

    sides = np.where(rng.random(c.n_landmarks) < 0.5, -1.0, 1.0)
    ly = rng.uniform(-length / 2 - 10, length / 2 + 10, c.n_landmarks)
    lx = sides * (c.facade_offset + rng.uniform(0.0, 1.0, c.n_landmarks))
    lz = rng.uniform(*c.facade_height, c.n_landmarks)
    landmarks = np.column_stack([lx, ly, lz])

    views = {cam.camera_id: split_panorama(cam.camera_id, w, h) for cam in true_cams}
    centers = {cam.camera_id: cam.center(frame) for cam in true_cams}

    detections = []
    for cam in true_cams:
        cc = centers[cam.camera_id]
        for obj in objects:
            dx, dy = obj.x - cc[0], obj.y - cc[1]
            depth = math.hypot(dx, dy)
            if depth > c.max_detection_range:
                continue
            b = direction_to_bearing((dx, dy))
            view = _centered_view(views[cam.camera_id], cam.heading, b)
            vc = ViewCamera.from_body(body_rotation(cam.heading), cc, view)
            u, v = vc.project(np.array([obj.x, obj.y, c.object_height]))
            detections.append(Detection(cam.camera_id, depth, view.view_index, PixelCoord(float(u), float(v))))

    # landmark observations: the most centered view of each camera
    seen: dict[str, dict[int, tuple[int, np.ndarray]]] = {}
    for cam in true_cams:
        cc = centers[cam.camera_id]
        R = body_rotation(cam.heading)
        obs = {}
        for j, X in enumerate(landmarks):
            d = np.hypot(*(X[:2] - cc[:2]))
            if d > c.max_landmark_range or d < 1.0:
                continue
            b = direction_to_bearing(X[:2] - cc[:2])
            view = _centered_view(views[cam.camera_id], cam.heading, b)
            vc = ViewCamera.from_body(R, cc, view)
            if vc.to_camera(X)[2] < 0.5:
                continue
            uv = vc.project(X)
            if not (0 <= uv[0] < w and 0 <= uv[1] < h):
                continue
            if c.pixel_noise:
                uv = uv + rng.normal(0.0, c.pixel_noise, 2)
            obs[j] = (view.view_index, uv)
        seen[cam.camera_id] = obs

    corrs, masks = [], []
    for a in range(c.n_cameras):
        for b in range(a + 1, c.n_cameras):
            ca, cb = true_cams[a], true_cams[b]
            if np.linalg.norm(centers[ca.camera_id][:2] - centers[cb.camera_id][:2]) > c.max_pair_distance:
                continue
            common = sorted(set(seen[ca.camera_id]) & set(seen[cb.camera_id]))
            by_views: dict[tuple[int, int], list] = {}
            for j in common:
                va, uva = seen[ca.camera_id][j]
                vb, uvb = seen[cb.camera_id][j]
                by_views.setdefault((va, vb), []).append([*uva, *uvb])
            for (va, vb), pts in sorted(by_views.items()):
                if len(pts) < c.min_matches:
                    continue
                pts = np.array(pts)
                outl = np.zeros(len(pts), dtype=bool)
                if c.outlier_rate:
                    n_out = int(round(c.outlier_rate * len(pts)))
                    pts, outl = _inject_outliers(
                        pts, n_out, rng, ca, cb, views[ca.camera_id][va], views[cb.camera_id][vb], frame
                    )
                corrs.append(Correspondence((ca.camera_id, va), (cb.camera_id, vb), pts))
                masks.append(outl)

    scene = SyntheticScene(c, frame, true_cams, noisy_cams, objects, landmarks, detections, corrs, masks, seen)
    scene.osm_xml = scene_osm_xml(scene)
    return scene


def relative_pose(cam_a: CameraPose, view_a, cam_b: CameraPose, view_b, frame: LocalFrame) -> PoseTransform:
    """Transform from view-a camera coordinates to view-b camera coordinates."""
    A = ViewCamera.from_body(body_rotation(cam_a.heading), cam_a.center(frame), view_a)
    B = ViewCamera.from_body(body_rotation(cam_b.heading), cam_b.center(frame), view_b)
    Ta = PoseTransform.from_center(A.R, A.center)
    Tb = PoseTransform.from_center(B.R, B.center)
    return Tb @ Ta.inverse()


def _inject_outliers(pts, n_out, rng, cam_a, cam_b, view_a, view_b, frame, min_px: float = 10.0):
    """Replace ``n_out`` matches by random pairs far from their epipolar lines."""
    pts = pts.copy()
    mask = np.zeros(len(pts), dtype=bool)
    rel = relative_pose(cam_a, view_a, cam_b, view_b, frame)
    E = skew(rel.t) @ rel.R
    w, h = view_a.width, view_a.height
    idx = rng.choice(len(pts), n_out, replace=False)
    for i in idx:
        while True:
            cand = rng.uniform([0, 0, 0, 0], [w, h, w, h])
            xa = normalize_pixels(cand[None, :2], view_a.K)
            xb = normalize_pixels(cand[None, 2:], view_b.K)
            if sampson_distance(E, xa, xb)[0] * view_a.focal_px > min_px:
                break
        pts[i] = cand
        mask[i] = True
    return pts, mask


def scene_osm_xml(scene: SyntheticScene) -> str:
    """Street centerline plus facade-aligned building blocks as OSM XML."""
    c = scene.config
    frame = scene.frame
    length = (c.n_cameras - 1) * c.spacing
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6" generator="geotagger-synth">']
    nid = [0]

    def node(x, y):
        nid[0] += 1
        g = frame.from_enu(EnuPoint(x, y))
        lines.append(f'  <node id="{nid[0]}" lat="{g.lat:.9f}" lon="{g.lon:.9f}"/>')
        return nid[0]

    y0, y1 = -length / 2 - 30.0, length / 2 + 30.0
    road = [node(0.0, y) for y in np.linspace(y0, y1, 4)]
    ways = [("1", road, {"highway": "primary", "name": "Synthetic Street"})]
    k = 2
    for side in (-1.0, 1.0):
        x0 = side * c.facade_offset
        x1 = side * (c.facade_offset + 12.0)
        y = y0
        while y < y1:
            ya, yb = y, min(y + 18.0, y1)
            ring = [node(x0, ya), node(x1, ya), node(x1, yb), node(x0, yb)]
            ring.append(ring[0])
            ways.append((str(k), ring, {"building": "yes"}))
            k += 1
            y = yb + 2.0
    for wid, refs, tags in ways:
        lines.append(f'  <way id="{wid}">')
        lines += [f'    <nd ref="{r}"/>' for r in refs]
        lines += [f'    <tag k="{key}" v="{val}"/>' for key, val in tags.items()]
        lines.append("  </way>")
    lines.append("</osm>")
    return "\n".join(lines) + "\n"


def landmark_bundle(scene: SyntheticScene, n_tracks: int = 60, min_views: int = 3, seed: int = 0):
    """Bundle-adjustment inputs built straight from the landmark observations.

    Tracks are triangulated from the noisy metadata poses and filtered like
    the pose refinement does; ``n_tracks`` of them are drawn in seeded random
    order. Returns ``(states, tracks, true_states)``.
    """
    from .sfm.bundle import Observation, Track
    from .sfm.poses import RefineOptions, camera_states, initialize_tracks

    w, h = scene.config.view_size
    views = {c.camera_id: split_panorama(c.camera_id, w, h) for c in scene.cameras}
    ids = [c.camera_id for c in scene.cameras]
    states = camera_states(scene.cameras, scene.frame)
    tracks = [
        Track(np.zeros(3), [Observation(i, views[ids[i]][vi], PixelCoord(*uv)) for i, vi, uv in obs])
        for _, obs in scene.landmark_tracks(min_views)
    ]
    order = np.random.default_rng(seed).permutation(len(tracks))
    kept = initialize_tracks([tracks[k] for k in order], states, RefineOptions())
    return states, kept[:n_tracks], camera_states(scene.true_cameras, scene.frame)
