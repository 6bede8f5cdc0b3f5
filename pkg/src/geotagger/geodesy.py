"""Spherical-earth geodesy: WGS84 points, a local east/north tangent plane,
Haversine distances and compass bearings.

All metric work in the package happens in the local frame (meters east and
north of an origin); geographic coordinates only appear at the I/O boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
MAX_FRAME_DISTANCE_M = 10_000.0


class DistanceExceeded(ValueError):
    """Point is too far from the frame origin for the tangent-plane model."""


def normalize_lon(lon: float) -> float:
    lon = math.fmod(lon + 180.0, 360.0)
    if lon < 0.0:
        lon += 360.0
    return lon - 180.0


def normalize_bearing(b: float) -> float:
    """Wrap a bearing in degrees to [0, 360)."""
    b = math.fmod(b, 360.0)
    if b < 0.0:
        b += 360.0
    # fmod of a tiny negative value can round up to exactly 360
    return 0.0 if b >= 360.0 else b


def angle_diff(a: float, b: float) -> float:
    """Signed difference a - b in degrees, wrapped to (-180, 180]."""
    d = math.fmod(a - b, 360.0)
    if d <= -180.0:
        d += 360.0
    elif d > 180.0:
        d -= 360.0
    return d


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinates ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        object.__setattr__(self, "lon", normalize_lon(self.lon))


@dataclass(frozen=True)
class EnuPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite local coordinates ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def distance(self, other: "EnuPoint") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


def haversine_distance(a: GeoPoint, b: GeoPoint, radius: float = EARTH_RADIUS_M) -> float:
    """Great-circle distance in meters between two points on a sphere."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    h = min(1.0, max(0.0, h))
    return 2.0 * radius * math.asin(math.sqrt(h))


@dataclass(frozen=True)
class LocalFrame:
    """Equidistant tangent plane about ``origin``.

    x = dlon * cos(lat0) * R * pi/180, y = dlat * R * pi/180.
    """

    origin: GeoPoint
    earth_radius: float = EARTH_RADIUS_M
    max_distance: float = field(default=MAX_FRAME_DISTANCE_M, compare=False)

    @property
    def _meters_per_degree(self) -> float:
        return self.earth_radius * math.pi / 180.0

    def to_enu(self, p: GeoPoint) -> EnuPoint:
        if p == self.origin:
            return EnuPoint(0.0, 0.0)
        d = haversine_distance(self.origin, p, self.earth_radius)
        if d > self.max_distance:
            raise DistanceExceeded(
                f"({p.lat}, {p.lon}) is {d:.0f} m from frame origin (limit {self.max_distance:.0f} m)"
            )
        k = self._meters_per_degree
        dlon = angle_diff(p.lon, self.origin.lon)
        x = dlon * math.cos(math.radians(self.origin.lat)) * k
        y = (p.lat - self.origin.lat) * k
        return EnuPoint(x, y)

    def from_enu(self, e: EnuPoint) -> GeoPoint:
        k = self._meters_per_degree
        lat = self.origin.lat + e.y / k
        lon = self.origin.lon + e.x / (k * math.cos(math.radians(self.origin.lat)))
        return GeoPoint(lat, lon)

    @classmethod
    def centered_on(cls, points: Iterable[GeoPoint], earth_radius: float = EARTH_RADIUS_M) -> "LocalFrame":
        """Frame whose origin is the mean of ``points`` (longitudes averaged on the circle)."""
        pts = list(points)
        if not pts:
            raise ValueError("cannot center a frame on zero points")
        lat = sum(p.lat for p in pts) / len(pts)
        ref = pts[0].lon
        lon = ref + sum(angle_diff(p.lon, ref) for p in pts) / len(pts)
        return cls(GeoPoint(lat, lon), earth_radius)


def to_enu(frame: LocalFrame, p: GeoPoint) -> EnuPoint:
    return frame.to_enu(p)


def from_enu(frame: LocalFrame, e: EnuPoint) -> GeoPoint:
    return frame.from_enu(e)


def bearing_to_direction(b: float) -> np.ndarray:
    """Unit vector (east, north) for a compass bearing in degrees."""
    r = math.radians(b)
    return np.array([math.sin(r), math.cos(r)])


def direction_to_bearing(v: Sequence[float]) -> float:
    return normalize_bearing(math.degrees(math.atan2(v[0], v[1])))
