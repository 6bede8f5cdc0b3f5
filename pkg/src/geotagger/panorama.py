"""Rectilinear views cut from a 360 degree equirectangular panorama.

A panorama is split into eight pinhole views with a 90 degree horizontal field
of view, stepped by 45 degrees of yaw, so adjacent views overlap by half.
Only the horizontal geometry matters for bearings; the vertical pixel
coordinate is carried along for the structure-from-motion stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geodesy import angle_diff, normalize_bearing

N_VIEWS = 8
VIEW_HFOV_DEG = 90.0
VIEW_STEP_DEG = 45.0
DEFAULT_VIEW_SIZE = (640, 640)


class OutOfView(ValueError):
    """Pixel lies outside the view's image bounds."""


@dataclass(frozen=True)
class PixelCoord:
    u: float
    v: float


@dataclass(frozen=True)
class RectilinearView:
    panorama_id: str
    view_index: int
    width: int = DEFAULT_VIEW_SIZE[0]
    height: int = DEFAULT_VIEW_SIZE[1]
    hfov: float = VIEW_HFOV_DEG
    step: float = VIEW_STEP_DEG

    @property
    def yaw_offset(self) -> float:
        return self.step * self.view_index

    @property
    def focal_px(self) -> float:
        return (self.width / 2.0) / math.tan(math.radians(self.hfov) / 2.0)

    @property
    def principal_point(self) -> tuple[float, float]:
        return self.width / 2.0, self.height / 2.0

    @property
    def K(self) -> np.ndarray:
        f = self.focal_px
        cx, cy = self.principal_point
        return np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])

    def contains(self, p: PixelCoord) -> bool:
        # continuous sub-pixel coordinates; both image borders belong to the view
        return 0.0 <= p.u <= self.width and 0.0 <= p.v <= self.height


def split_panorama(
    panorama_id: str,
    width: int = DEFAULT_VIEW_SIZE[0],
    height: int = DEFAULT_VIEW_SIZE[1],
    n_views: int = N_VIEWS,
    hfov: float = VIEW_HFOV_DEG,
) -> list[RectilinearView]:
    """View layout of one panorama: yaw offsets 0, 45, ..., 315."""
    if width <= 0 or height <= 0:
        raise ValueError("view dimensions must be positive")
    step = 360.0 / n_views
    return [RectilinearView(str(panorama_id), k, width, height, hfov, step) for k in range(n_views)]


def pixel_to_bearing(view: RectilinearView, camera_heading: float, p: PixelCoord) -> float:
    if not view.contains(p):
        raise OutOfView(f"pixel ({p.u}, {p.v}) outside {view.width}x{view.height} view")
    cx, _ = view.principal_point
    offset = math.degrees(math.atan((p.u - cx) / view.focal_px))
    return normalize_bearing(camera_heading + view.yaw_offset + offset)


def bearing_to_view_pixel(
    views: list[RectilinearView], camera_heading: float, b: float, v: float | None = None
) -> list[tuple[int, PixelCoord]]:
    """All (view_index, pixel) pairs whose column sees bearing ``b``.

    The pixel row is the principal row unless ``v`` is given.
    """
    out = []
    for view in views:
        delta = angle_diff(b, camera_heading + view.yaw_offset)
        half = view.hfov / 2.0
        if abs(delta) > half + 1e-12:
            continue
        cx, cy = view.principal_point
        u = cx + view.focal_px * math.tan(math.radians(delta))
        u = min(max(u, 0.0), float(view.width))
        p = PixelCoord(u, cy if v is None else v)
        if view.contains(p):
            out.append((view.view_index, p))
    return out


def render_view(
    panorama: np.ndarray, view: RectilinearView, pitch_deg: float = 0.0
) -> np.ndarray:
    """Resample a rectilinear view from an equirectangular image (bilinear).

    Column 0 of the panorama is taken to look along the camera heading minus
    180 degrees, i.e. the heading sits at the horizontal center of the image.
    """
    H, W = panorama.shape[:2]
    f = view.focal_px
    cx, cy = view.principal_point
    uu, vv = np.meshgrid(np.arange(view.width) + 0.5, np.arange(view.height) + 0.5)
    x = (uu - cx) / f
    y = (vv - cy) / f
    z = np.ones_like(x)
    pitch = math.radians(pitch_deg)
    # tilt about the camera x axis, positive looks up
    y, z = y * math.cos(pitch) - z * math.sin(pitch), y * math.sin(pitch) + z * math.cos(pitch)
    yaw = np.arctan2(x, z) + math.radians(view.yaw_offset)
    elev = np.arctan2(-y, np.hypot(x, z))
    px = ((yaw / (2 * math.pi) + 0.5) % 1.0) * W - 0.5
    py = (0.5 - elev / math.pi) * H - 0.5
    py = np.clip(py, 0.0, H - 1.0)
    x0 = np.floor(px).astype(int)
    y0 = np.floor(py).astype(int)
    fx = px - x0
    fy = py - y0
    x0 %= W
    x1 = (x0 + 1) % W
    y1 = np.minimum(y0 + 1, H - 1)
    img = panorama.astype(float)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy
