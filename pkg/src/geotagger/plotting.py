"""Report figures drawn from a stage directory."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import io  # noqa: E402
from .geodesy import bearing_to_direction  # noqa: E402

DPI = 150


def _enu(frame, cams):
    return np.array([frame.to_enu(c.position).as_array() for c in cams]).reshape(-1, 2)


def _heading_ticks(ax, xy, headings, color, length=3.0):
    for (x, y), h in zip(xy, headings):
        dx, dy = bearing_to_direction(h) * length
        ax.plot([x, x + dx], [y, y + dy], color=color, lw=0.8)


def scene_map(path: Path, frame, original, corrected, nodes, labels, clusters, predictions, truth, prior=None):
    fig, ax = plt.subplots(figsize=(7, 7))
    if prior is not None and len(prior):
        grid, (xll, yll) = prior.heatmap()
        nrows, ncols = grid.shape
        r = prior.resolution
        ax.imshow(grid, extent=(xll, xll + ncols * r, yll, yll + nrows * r), cmap="gray", vmin=0, vmax=1,
                  alpha=0.5, zorder=0)
    xy0 = _enu(frame, original)
    ax.scatter(xy0[:, 0], xy0[:, 1], marker="^", s=30, c="tab:gray", label="camera metadata", zorder=2)
    _heading_ticks(ax, xy0, [c.heading for c in original], "tab:gray")
    if corrected:
        xy1 = _enu(frame, corrected)
        ax.scatter(xy1[:, 0], xy1[:, 1], marker="^", s=30, c="tab:blue", label="corrected cameras", zorder=3)
        _heading_ticks(ax, xy1, [c.heading for c in corrected], "tab:blue")
        for a, b in zip(xy0, xy1):
            ax.plot([a[0], b[0]], [a[1], b[1]], color="tab:blue", lw=0.5, ls=":")
    pos = np.array([[n.position.x, n.position.y] for n in nodes if labels.get(n.node_id) == 1]).reshape(-1, 2)
    neg = np.array([[n.position.x, n.position.y] for n in nodes if labels.get(n.node_id) != 1]).reshape(-1, 2)
    if len(neg):
        ax.scatter(neg[:, 0], neg[:, 1], s=4, c="lightgray", label="intersections", zorder=1)
    if len(pos):
        ax.scatter(pos[:, 0], pos[:, 1], s=10, c="tab:orange", label="occupied", zorder=4)
    if clusters:
        xy = np.array([[c["x"], c["y"]] for c in clusters])
        ax.scatter(xy[:, 0], xy[:, 1], s=40, facecolors="none", edgecolors="tab:orange", label="cluster mean", zorder=5)
    if predictions:
        xy = np.array([[frame.to_enu(g).x, frame.to_enu(g).y] for g, _ in predictions])
        ax.scatter(xy[:, 0], xy[:, 1], marker="x", s=50, c="tab:red", label="prediction", zorder=6)
    if truth:
        xy = np.array([[frame.to_enu(g).x, frame.to_enu(g).y] for g in truth])
        ax.scatter(xy[:, 0], xy[:, 1], marker="*", s=80, c="tab:green", label="ground truth", zorder=6)
    ax.set_aspect("equal")
    ax.set_xlabel("east (m)")
    ax.set_ylabel("north (m)")
    ax.legend(loc="best", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def prior_heatmap(path: Path, prior):
    grid, (xll, yll) = prior.heatmap()
    nrows, ncols = grid.shape
    r = prior.resolution
    fig, ax = plt.subplots(figsize=(6, 6))
    im = ax.imshow(grid, extent=(xll, xll + ncols * r, yll, yll + nrows * r), cmap="viridis", vmin=0, vmax=1)
    fig.colorbar(im, ax=ax, label="prior weight")
    ax.set_xlabel("east (m)")
    ax.set_ylabel("north (m)")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def pose_corrections(path: Path, report: dict):
    rows = report.get("per_camera", [])
    ids = [r["camera_id"] for r in rows]
    fig, (a0, a1) = plt.subplots(2, 1, figsize=(7, 4.5), sharex=True)
    x = np.arange(len(ids))
    a0.bar(x, [r["position_shift_m"] for r in rows], color="tab:blue")
    a0.set_ylabel("position shift (m)")
    a1.bar(x, [r["bearing_shift_deg"] for r in rows], color="tab:orange")
    a1.set_ylabel("heading shift (deg)")
    a1.set_xticks(x)
    a1.set_xticklabels(ids, rotation=90, fontsize=6)
    a0.set_title(f"pose correction, mode {report.get('mode')}")
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def render_report(config, frame, st) -> list[Path]:
    """Draw whatever the stage directory holds; missing artifacts are skipped."""
    from .pipeline import load_prior

    d = st.dir
    original = io.read_cameras(st.need(config.path("cameras"), "camera metadata"))
    corrected = io.read_cameras(d / "poses.csv") if (d / "poses.csv").exists() else []
    nodes = io.read_nodes(d / "nodes.jsonl") if (d / "nodes.jsonl").exists() else []
    labels = io.read_labels(d / "labels.jsonl") if (d / "labels.jsonl").exists() else {}
    clusters = io.read_clusters(d / "clusters.jsonl") if (d / "clusters.jsonl").exists() else []
    preds = io.read_geojson_points(d / "predictions.geojson") if (d / "predictions.geojson").exists() else []
    truth_path = config.path("truth")
    truth = [g for _, g in io.read_truth(truth_path)] if truth_path is not None and truth_path.exists() else []
    prior = load_prior(config, frame, st.inputs)

    out = [scene_map(st.out("figures/scene_map.png"), frame, original, corrected, nodes, labels, clusters, preds,
                     truth, prior)]
    if prior is not None and len(prior):
        out.append(prior_heatmap(st.out("figures/prior_heatmap.png"), prior))
    if (d / "pose_report.json").exists():
        with open(d / "pose_report.json") as fh:
            out.append(pose_corrections(st.out("figures/pose_corrections.png"), json.load(fh)))
    return out
