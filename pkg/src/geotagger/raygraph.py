"""Ray-intersection graph and binary occupancy MRF.

Each detection becomes a 2D ray from its camera along the detection's
bearing. Every pair of rays whose forward half-lines cross gives a node, and
each node is labelled occupied (1) or empty (0) by minimizing

    E(z) = sum_{i: z_i = 1} u_i
           + pairwise_penalty * sum_rays max(0, occupied(r) - 1)
           + occupancy_bias   * sum_rays [occupied(r) == 0]

with u_i = sum over the node's two rays of
(distance along ray - detection depth)^2 / (2 depth_sigma^2).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geodesy import EnuPoint, LocalFrame, bearing_to_direction, normalize_bearing
from .panorama import PixelCoord, RectilinearView, pixel_to_bearing, split_panorama


class UnknownCamera(KeyError):
    pass


class LabelMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    """One detected object instance: pixel-form (view + pixel) or bearing-form."""

    camera_id: str
    depth_m: float
    view_index: int | None = None
    pixel: PixelCoord | None = None
    bearing_deg: float | None = None
    class_tag: str | None = None

    def __post_init__(self):
        if not self.depth_m > 0:
            raise ValueError(f"detection depth must be positive, got {self.depth_m}")
        if self.bearing_deg is None and (self.pixel is None or self.view_index is None):
            raise ValueError("detection needs either a bearing or a view index and pixel")


@dataclass(frozen=True)
class ObservationRay:
    ray_id: str
    camera_id: str
    origin: EnuPoint
    bearing: float
    depth_estimate: float

    @property
    def direction(self) -> np.ndarray:
        return bearing_to_direction(self.bearing)


@dataclass(frozen=True)
class IntersectionNode:
    node_id: int
    position: EnuPoint
    ray_ids: tuple[str, str]
    distances: tuple[float, float]
    angle: float


@dataclass
class RayGraph:
    rays: list[ObservationRay]
    nodes: list[IntersectionNode]
    per_ray: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.per_ray:
            lists: dict[str, list[tuple[float, int]]] = {r.ray_id: [] for r in self.rays}
            for k, n in enumerate(self.nodes):
                for rid, d in zip(n.ray_ids, n.distances):
                    lists[rid].append((d, k))
            self.per_ray = {rid: [k for _, k in sorted(v)] for rid, v in lists.items()}


@dataclass(frozen=True)
class EnergyParams:
    depth_sigma: float = 2.0
    pairwise_penalty: float = 2.0
    occupancy_bias: float = 1.0
    min_angle: float = 10.0
    max_depth: float = 25.0
    seed: int = 0
    restarts: int = 50
    exhaustive_limit: int = 20


def cast_rays(
    detections: Sequence[Detection],
    cameras: Mapping[str, "object"],
    frame: LocalFrame,
    views: Mapping[str, Sequence[RectilinearView]] | None = None,
) -> list[ObservationRay]:
    """One ray per detection.

    ``cameras`` maps camera_id to a CameraPose; ``views`` maps camera_id to its
    split views (default: eight 640x640 views).
    """
    rays = []
    for k, det in enumerate(detections):
        cam = cameras.get(det.camera_id)
        if cam is None:
            raise UnknownCamera(det.camera_id)
        if det.bearing_deg is not None:
            b = normalize_bearing(det.bearing_deg)
        else:
            pano_views = views[det.camera_id] if views is not None else split_panorama(det.camera_id)
            if not 0 <= det.view_index < len(pano_views):
                raise ValueError(f"camera {det.camera_id} has no view {det.view_index}")
            b = pixel_to_bearing(pano_views[det.view_index], cam.heading, det.pixel)
        rays.append(ObservationRay(f"r{k}", det.camera_id, frame.to_enu(cam.position), b, det.depth_m))
    return rays


def _cross(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


def intersect_rays(a: ObservationRay, b: ObservationRay) -> tuple[float, float] | None:
    """Distances along ``a`` and ``b`` to their crossing point, or None if parallel."""
    ua, ub = a.direction, b.direction
    den = _cross(ua, ub)
    if abs(den) < 1e-12:
        return None
    w = (b.origin.x - a.origin.x, b.origin.y - a.origin.y)
    return _cross(w, ub) / den, _cross(w, ua) / den


def build_intersection_graph(rays: Sequence[ObservationRay], params: EnergyParams = EnergyParams()) -> RayGraph:
    """Nodes for all forward ray crossings within ``max_depth`` and angle limits.

    Rays are ordered by id first, so the result does not depend on input order.
    """
    rays = sorted(rays, key=lambda r: r.ray_id)
    nodes = []
    for a, b in itertools.combinations(rays, 2):
        if a.camera_id == b.camera_id:
            continue
        dd = intersect_rays(a, b)
        if dd is None:
            continue
        d1, d2 = dd
        if not (0.0 < d1 <= params.max_depth and 0.0 < d2 <= params.max_depth):
            continue
        cosang = float(np.clip(a.direction @ b.direction, -1.0, 1.0))
        angle = math.degrees(math.acos(cosang))
        if angle < params.min_angle or angle > 180.0 - params.min_angle:
            continue
        ux, uy = a.direction
        pos = EnuPoint(a.origin.x + d1 * ux, a.origin.y + d1 * uy)
        nodes.append(IntersectionNode(len(nodes), pos, (a.ray_id, b.ray_id), (d1, d2), angle))
    return RayGraph(list(rays), nodes)


# -- energy --------------------------------------------------------------


class _Model:
    """Dense arrays for a graph: unaries and node-to-ray incidence."""

    def __init__(self, graph: RayGraph, params: EnergyParams):
        self.params = params
        self.n = len(graph.nodes)
        self.n_rays = len(graph.rays)
        ray_index = {r.ray_id: k for k, r in enumerate(graph.rays)}
        depth = np.array([r.depth_estimate for r in graph.rays])
        s2 = 2.0 * params.depth_sigma**2
        self.node_rays = np.zeros((self.n, 2), dtype=int)
        self.unary = np.zeros(self.n)
        for i, nd in enumerate(graph.nodes):
            for k, (rid, d) in enumerate(zip(nd.ray_ids, nd.distances)):
                r = ray_index[rid]
                self.node_rays[i, k] = r
                self.unary[i] += (d - depth[r]) ** 2 / s2

    def ray_cost(self, occ):
        p = self.params
        return p.pairwise_penalty * np.maximum(0, occ - 1) + p.occupancy_bias * (occ == 0)

    def occupancy(self, z: np.ndarray) -> np.ndarray:
        occ = np.zeros(self.n_rays, dtype=int)
        np.add.at(occ, self.node_rays[z.astype(bool)].ravel(), 1)
        return occ

    def energy(self, z: np.ndarray) -> float:
        z = np.asarray(z)
        return float(self.unary[z.astype(bool)].sum() + self.ray_cost(self.occupancy(z)).sum())


def energy(graph: RayGraph, labeling: Sequence[int], params: EnergyParams = EnergyParams()) -> float:
    z = np.asarray(labeling, dtype=int)
    if z.shape != (len(graph.nodes),):
        raise LabelMismatch(f"{z.size} labels for {len(graph.nodes)} nodes")
    if np.any((z != 0) & (z != 1)):
        raise LabelMismatch("labels must be 0 or 1")
    return _Model(graph, params).energy(z)


def _subgraph(graph: RayGraph, node_idx: Sequence[int]) -> RayGraph:
    nodes = [graph.nodes[i] for i in node_idx]
    used = {rid for n in nodes for rid in n.ray_ids}
    rays = [r for r in graph.rays if r.ray_id in used]
    return RayGraph(rays, nodes)


def solve_exhaustive(graph: RayGraph, params: EnergyParams = EnergyParams(), chunk: int = 1 << 16) -> np.ndarray:
    """Global minimum by enumeration; ties go to the lexicographically smallest labeling."""
    m = _Model(graph, params)
    n = m.n
    if n == 0:
        return np.zeros(0, dtype=int)
    if n > 26:
        raise ValueError(f"exhaustive search over {n} nodes is infeasible")
    inc = np.zeros((n, m.n_rays))
    for i, (a, b) in enumerate(m.node_rays):
        inc[i, a] += 1
        inc[i, b] += 1
    shifts = np.arange(n - 1, -1, -1)  # node 0 is the most significant bit
    best_e, best_k = math.inf, -1
    total = 1 << n
    for start in range(0, total, chunk):
        ks = np.arange(start, min(total, start + chunk), dtype=np.int64)
        L = ((ks[:, None] >> shifts[None, :]) & 1).astype(float)
        occ = L @ inc
        E = L @ m.unary + m.ray_cost(occ).sum(axis=1)
        cmin = E.min()
        tol = 1e-12 * max(1.0, abs(cmin))
        if cmin < best_e - tol:
            best_e = cmin
            best_k = int(ks[np.flatnonzero(E <= cmin + tol)[0]])
    return ((best_k >> shifts) & 1).astype(int)


class _LocalSearch:
    def __init__(self, m: _Model):
        self.m = m
        self.ray_nodes: list[list[int]] = [[] for _ in range(m.n_rays)]
        for i, (a, b) in enumerate(m.node_rays):
            self.ray_nodes[a].append(i)
            if b != a:
                self.ray_nodes[b].append(i)
        self.neighbors = [
            sorted({j for r in m.node_rays[i] for j in self.ray_nodes[r] if j > i}) for i in range(m.n)
        ]

    def _ray_f(self, o: int) -> float:
        p = self.m.params
        return p.pairwise_penalty * max(0, o - 1) + p.occupancy_bias * (o == 0)

    def delta(self, z, occ, flips) -> float:
        d = 0.0
        change: dict[int, int] = {}
        for i in flips:
            s = -1 if z[i] else 1
            d += s * self.m.unary[i]
            for r in self.m.node_rays[i]:
                change[r] = change.get(r, 0) + s
        for r, c in change.items():
            d += self._ray_f(occ[r] + c) - self._ray_f(occ[r])
        return d

    def apply(self, z, occ, flips):
        for i in flips:
            s = -1 if z[i] else 1
            z[i] = 1 - z[i]
            for r in self.m.node_rays[i]:
                occ[r] += s

    def descend(self, z: np.ndarray) -> np.ndarray:
        """Single flips and joint flips of two nodes on a shared ray until no move helps."""
        z = z.copy()
        occ = self.m.occupancy(z)
        eps = 1e-12
        improved = True
        while improved:
            improved = False
            for i in range(self.m.n):
                if self.delta(z, occ, (i,)) < -eps:
                    self.apply(z, occ, (i,))
                    improved = True
            for i in range(self.m.n):
                for j in self.neighbors[i]:
                    if self.delta(z, occ, (i, j)) < -eps:
                        self.apply(z, occ, (i, j))
                        improved = True
        return z

    def greedy(self) -> np.ndarray:
        z = np.zeros(self.m.n, dtype=int)
        occ = self.m.occupancy(z)
        for i in np.argsort(self.m.unary, kind="stable"):
            if self.delta(z, occ, (i,)) < 0:
                self.apply(z, occ, (i,))
        return z


def solve_icm(graph: RayGraph, params: EnergyParams = EnergyParams()) -> np.ndarray:
    """Iterated conditional modes from a greedy start plus seeded random restarts."""
    m = _Model(graph, params)
    if m.n == 0:
        return np.zeros(0, dtype=int)
    ls = _LocalSearch(m)
    rng = np.random.default_rng(params.seed)
    starts = [ls.greedy(), np.ones(m.n, dtype=int)]
    for _ in range(params.restarts):
        starts.append((rng.random(m.n) < 0.3).astype(int))
    best, best_e = None, math.inf
    for z0 in starts:
        z = ls.descend(z0)
        e = m.energy(z)
        if e < best_e - 1e-12:
            best, best_e = z, e
    return best


def graph_components(graph: RayGraph) -> list[list[int]]:
    """Node index sets that share no ray with each other, ordered by first node."""
    n = len(graph.nodes)
    if n == 0:
        return []
    ray_index = {r.ray_id: k for k, r in enumerate(graph.rays)}
    rows, cols = [], []
    for i, nd in enumerate(graph.nodes):
        for rid in nd.ray_ids:
            rows.append(i)
            cols.append(n + ray_index[rid])
    size = n + len(graph.rays)
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(size, size))
    _, labels = connected_components(adj, directed=False)
    comps: dict[int, list[int]] = {}
    for i in range(n):
        comps.setdefault(labels[i], []).append(i)
    return sorted(comps.values(), key=lambda c: c[0])


def solve_mrf(graph: RayGraph, params: EnergyParams = EnergyParams()) -> np.ndarray:
    """Minimize the occupancy energy.

    The energy separates over groups of nodes linked through shared rays; each
    group of at most ``exhaustive_limit`` nodes is solved exactly, larger ones
    by ICM with restarts.
    """
    z = np.zeros(len(graph.nodes), dtype=int)
    for comp in graph_components(graph):
        sub = _subgraph(graph, comp)
        if len(comp) <= params.exhaustive_limit:
            zc = solve_exhaustive(sub, params)
        else:
            zc = solve_icm(sub, params)
        z[comp] = zc
    return z
