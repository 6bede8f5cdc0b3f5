"""Structure-from-motion pose denoising."""

from .bundle import BAOptions, BAReport, CameraState, Diverged, Observation, RankDeficient, Track, bundle_adjust
from .essential import (
    AmbiguousCheirality,
    Correspondence,
    Degenerate,
    PureRotation,
    RansacOptions,
    decompose_essential,
    estimate_essential,
)
from .geometry import CameraPose, PoseTransform, ViewCamera, body_rotation, heading_from_rotation
from .poses import DisconnectedGraph, PoseReport, RefineOptions, refine_poses
from .triangulate import ParallelRays, TriangulatedPoint, triangulate, triangulate_track

__all__ = [
    "AmbiguousCheirality",
    "BAOptions",
    "BAReport",
    "CameraPose",
    "CameraState",
    "Correspondence",
    "Degenerate",
    "DisconnectedGraph",
    "Diverged",
    "Observation",
    "ParallelRays",
    "PoseReport",
    "PoseTransform",
    "PureRotation",
    "RankDeficient",
    "RansacOptions",
    "RefineOptions",
    "Track",
    "TriangulatedPoint",
    "ViewCamera",
    "body_rotation",
    "bundle_adjust",
    "decompose_essential",
    "estimate_essential",
    "heading_from_rotation",
    "refine_poses",
    "triangulate",
    "triangulate_track",
]
