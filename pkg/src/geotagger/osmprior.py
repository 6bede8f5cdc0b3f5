"""OpenStreetMap context prior.

Road centerlines and building outlines are densified to one node every few
meters; each node carries an isotropic Gaussian kernel. The weight of a site
is

    W(x) = 1 - min(1, sum_{kernels within 3 sigma} exp(-|x - mu|^2 / (2 sigma^2)))

so sites on a road centerline or a building edge get weights near zero.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geodesy import EnuPoint, GeoPoint, LocalFrame, haversine_distance

ROAD_SIGMA_M = 2.0
BUILDING_SIGMA_M = 1.0
INTERPOLATION_SPACING_M = 5.0
GRID_RESOLUTION_M = 0.25
TRUNCATION_SIGMAS = 3.0
DEDUP_TOLERANCE_M = 0.01


class MalformedXml(ValueError):
    pass


class DanglingNodeRef(ValueError):
    pass


class OpenBuildingRing(ValueError):
    pass


@dataclass(frozen=True)
class OsmWay:
    way_id: str
    node_ids: tuple[str, ...]
    tags: dict = field(default_factory=dict, hash=False)

    @property
    def is_road(self) -> bool:
        return "highway" in self.tags

    @property
    def is_building(self) -> bool:
        return "building" in self.tags


@dataclass
class OsmData:
    nodes: dict[str, GeoPoint] = field(default_factory=dict)
    ways: dict[str, OsmWay] = field(default_factory=dict)

    def geometry(self, way: OsmWay) -> list[GeoPoint]:
        return [self.nodes[n] for n in way.node_ids]

    @property
    def roads(self) -> list[list[GeoPoint]]:
        return [self.geometry(w) for w in self.ways.values() if w.is_road]

    @property
    def buildings(self) -> list[list[GeoPoint]]:
        return [self.geometry(w) for w in self.ways.values() if w.is_building and not w.is_road]


def polyline_length(points: Sequence[GeoPoint]) -> float:
    return sum(haversine_distance(a, b) for a, b in zip(points, points[1:]))


def parse_osm_xml(document: str | bytes | Path) -> OsmData:
    """Read nodes and highway/building ways from an OSM XML document.

    ``document`` is XML text or a path to an ``.osm`` file.
    """
    try:
        if isinstance(document, Path):
            root = ET.parse(document).getroot()
        else:
            root = ET.fromstring(document)
    except ET.ParseError as e:
        raise MalformedXml(str(e)) from e

    data = OsmData()
    for el in root.iter("node"):
        try:
            data.nodes[el.attrib["id"]] = GeoPoint(float(el.attrib["lat"]), float(el.attrib["lon"]))
        except (KeyError, ValueError) as e:
            raise MalformedXml(f"bad node element {el.attrib}: {e}") from e
    for el in root.iter("way"):
        wid = el.attrib.get("id")
        if wid is None:
            raise MalformedXml("way element without id")
        tags = {t.attrib["k"]: t.attrib.get("v", "") for t in el.findall("tag") if "k" in t.attrib}
        if "highway" not in tags and "building" not in tags:
            continue
        refs = tuple(nd.attrib["ref"] for nd in el.findall("nd") if "ref" in nd.attrib)
        for r in refs:
            if r not in data.nodes:
                raise DanglingNodeRef(f"way {wid} references missing node {r}")
        if len(refs) < 2:
            continue
        way = OsmWay(wid, refs, tags)
        if way.is_building and not way.is_road and refs[0] != refs[-1]:
            raise OpenBuildingRing(f"building way {wid} is not closed")
        data.ways[wid] = way
    return data


def interpolate_nodes(vertices: Sequence[EnuPoint], spacing: float = INTERPOLATION_SPACING_M) -> list[EnuPoint]:
    """Original vertices plus points every ``spacing`` meters of arc length.

    Output is ordered by arc length; points within 1 cm of their predecessor
    (or of the first point, for closed rings) are dropped.
    """
    if len(vertices) < 2:
        raise ValueError("need at least two vertices")
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    P = np.array([[v.x, v.y] for v in vertices], dtype=float)
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    n_steps = int(math.floor(total / spacing + 1e-9))
    samples = [(s, None) for s in spacing * np.arange(n_steps + 1)]
    samples += [(float(c), k) for k, c in enumerate(cum)]
    samples.sort(key=lambda t: (t[0], t[1] is None))

    out: list[np.ndarray] = []
    for s, k in samples:
        if k is not None:
            p = P[k]
        else:
            i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
            while i > 0 and seg[i] == 0:
                i -= 1
            frac = 0.0 if seg[i] == 0 else (s - cum[i]) / seg[i]
            p = P[i] + frac * (P[i + 1] - P[i])
        if out and np.linalg.norm(p - out[-1]) < DEDUP_TOLERANCE_M:
            continue
        if len(out) > 1 and np.linalg.norm(p - out[0]) < DEDUP_TOLERANCE_M:
            continue
        out.append(p)
    return [EnuPoint(float(x), float(y)) for x, y in out]


@dataclass(frozen=True)
class KernelCenter:
    mu: EnuPoint
    sigma: float
    kind: str  # "road" or "building_edge"


class PriorField:
    """Gaussian kernels with a neighbor index; evaluates W(x)."""

    def __init__(self, kernels: Iterable[KernelCenter], resolution: float = GRID_RESOLUTION_M,
                 truncation: float = TRUNCATION_SIGMAS):
        self.kernels = list(kernels)
        self.resolution = resolution
        self.truncation = truncation
        self.mu = np.array([[k.mu.x, k.mu.y] for k in self.kernels], dtype=float).reshape(-1, 2)
        self.sigma = np.array([k.sigma for k in self.kernels], dtype=float)
        self.sigma_max = float(self.sigma.max()) if len(self.sigma) else 0.0
        self._tree = cKDTree(self.mu) if len(self.mu) else None

    def __len__(self):
        return len(self.kernels)

    def kernel_sum(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(2)
        if self._tree is None:
            return 0.0
        idx = self._tree.query_ball_point(x, self.truncation * self.sigma_max)
        if not idx:
            return 0.0
        idx = np.sort(np.asarray(idx))
        d2 = np.sum((self.mu[idx] - x) ** 2, axis=1)
        s = self.sigma[idx]
        near = d2 <= (self.truncation * s) ** 2
        return float(np.sum(np.exp(-d2[near] / (2.0 * s[near] ** 2))))

    def weight_at(self, x) -> float:
        if isinstance(x, EnuPoint):
            x = (x.x, x.y)
        return float(min(1.0, max(0.0, 1.0 - min(1.0, self.kernel_sum(x)))))

    def heatmap(self, bounds: tuple[float, float, float, float] | None = None, margin: float = 10.0):
        """Rasterize W at ``resolution`` over (xmin, ymin, xmax, ymax).

        Returns ``(grid, (xll, yll))`` with row 0 at the top (north), cell
        centers at xll + (j + 0.5) * resolution.
        """
        res = self.resolution
        if bounds is None:
            if len(self.mu) == 0:
                raise ValueError("empty prior field has no extent; pass bounds")
            lo = self.mu.min(axis=0) - margin
            hi = self.mu.max(axis=0) + margin
            bounds = (lo[0], lo[1], hi[0], hi[1])
        xmin, ymin, xmax, ymax = bounds
        xll = math.floor(xmin / res) * res
        yll = math.floor(ymin / res) * res
        ncols = int(math.ceil((xmax - xll) / res))
        nrows = int(math.ceil((ymax - yll) / res))
        acc = np.zeros((nrows, ncols))
        xs = xll + (np.arange(ncols) + 0.5) * res
        ys = yll + (np.arange(nrows) + 0.5) * res
        for (mx, my), s in zip(self.mu, self.sigma):
            r = self.truncation * s
            j0, j1 = np.searchsorted(xs, [mx - r, mx + r])
            i0, i1 = np.searchsorted(ys, [my - r, my + r])
            if j0 >= j1 or i0 >= i1:
                continue
            dx2 = (xs[j0:j1] - mx) ** 2
            dy2 = (ys[i0:i1] - my) ** 2
            d2 = dy2[:, None] + dx2[None, :]
            k = np.where(d2 <= r * r, np.exp(-d2 / (2 * s * s)), 0.0)
            acc[i0:i1, j0:j1] += k
        W = 1.0 - np.minimum(1.0, acc)
        return W[::-1], (xll, yll)


def build_prior_field(
    osm: OsmData,
    frame: LocalFrame,
    sigma_road: float = ROAD_SIGMA_M,
    sigma_building: float = BUILDING_SIGMA_M,
    spacing: float = INTERPOLATION_SPACING_M,
    resolution: float = GRID_RESOLUTION_M,
) -> PriorField:
    kernels = []
    for geom in osm.roads:
        pts = interpolate_nodes([frame.to_enu(p) for p in geom], spacing)
        kernels += [KernelCenter(p, sigma_road, "road") for p in pts]
    for geom in osm.buildings:
        pts = interpolate_nodes([frame.to_enu(p) for p in geom], spacing)
        kernels += [KernelCenter(p, sigma_building, "building_edge") for p in pts]
    return PriorField(kernels, resolution)


def weight_at(field: PriorField, x) -> float:
    return field.weight_at(x)


def write_ascii_grid(path: Path, grid: np.ndarray, xll: float, yll: float, cellsize: float, nodata: float = -9999.0):
    """ESRI ASCII grid; coordinates are local meters east/north of the frame origin."""
    nrows, ncols = grid.shape
    with open(path, "w") as fh:
        fh.write(f"ncols {ncols}\nnrows {nrows}\nxllcorner {xll:.3f}\nyllcorner {yll:.3f}\n")
        fh.write(f"cellsize {cellsize}\nNODATA_value {nodata:g}\n")
        for row in grid:
            fh.write(" ".join(f"{v:.4f}" for v in row) + "\n")
