"""Two-view epipolar geometry: RANSAC essential matrix estimation and its
decomposition into a relative rotation and translation direction.

Conventions: for normalized image points x_a, x_b (homogeneous, K^-1 applied)
of the same scene point, x_b^T E x_a = 0 with E = [t]_x R, where
X_b = R X_a + t maps camera-a coordinates into camera b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PoseTransform, skew


class Degenerate(ValueError):
    """Too few correspondences (or consensus) to estimate E."""


class PureRotation(ValueError):
    """Correspondences are explained by a rotation alone; no usable baseline."""


class AmbiguousCheirality(ValueError):
    """No decomposition candidate places a strict majority of points in front of both cameras."""


MIN_POINTS = 8
RANSAC_BATCH = 64


@dataclass(frozen=True)
class RansacOptions:
    iterations: int = 500
    threshold_px: float = 1.0
    seed: int = 0
    confidence: float = 0.999
    min_parallax_deg: float = 0.25


@dataclass
class Correspondence:
    """Matched pixels between two views; ``points`` rows are (u_a, v_a, u_b, v_b)."""

    view_a: tuple[str, int]
    view_b: tuple[str, int]
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    def __post_init__(self):
        self.view_a = (str(self.view_a[0]), int(self.view_a[1]))
        self.view_b = (str(self.view_b[0]), int(self.view_b[1]))
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 4)

    def __len__(self):
        return len(self.points)


def normalize_pixels(uv: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Pixels (n, 2) to homogeneous normalized image points (n, 3)."""
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    h = np.column_stack([uv, np.ones(len(uv))])
    return np.linalg.solve(K, h.T).T


def _hartley(x: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to 0 with mean distance sqrt(2)."""
    c = x[:, :2].mean(axis=0)
    d = np.linalg.norm(x[:, :2] - c, axis=1).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def project_to_essential(F: np.ndarray) -> np.ndarray:
    """Closest essential matrix: singular values (s, s, 0), unit Frobenius norm, fixed sign."""
    U, S, Vt = np.linalg.svd(F)
    s = (S[0] + S[1]) / 2.0
    E = U @ np.diag([s, s, 0.0]) @ Vt
    E /= np.linalg.norm(E)
    k = np.argmax(np.abs(E))
    if E.flat[k] < 0:
        E = -E
    return E


def fit_essential(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Normalized linear (eight-point) estimate of E from >= 8 normalized point pairs."""
    if len(xa) < MIN_POINTS:
        raise Degenerate(f"need at least {MIN_POINTS} pairs, got {len(xa)}")
    Ta = _hartley(xa)
    Tb = _hartley(xb)
    a = xa @ Ta.T
    b = xb @ Tb.T
    A = np.einsum("ni,nj->nij", b, a).reshape(len(a), 9)
    _, _, Vt = np.linalg.svd(A)
    F = Vt[-1].reshape(3, 3)
    return project_to_essential(Tb.T @ F @ Ta)


def sampson_distance(E: np.ndarray, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """First-order geometric epipolar error, in normalized image units."""
    Ea = xa @ E.T
    Etb = xb @ E
    num = np.einsum("ni,ni->n", xb, Ea)
    den = Ea[:, 0] ** 2 + Ea[:, 1] ** 2 + Etb[:, 0] ** 2 + Etb[:, 1] ** 2
    return np.abs(num) / np.sqrt(np.maximum(den, 1e-300))


def _hartley_batch(x: np.ndarray) -> np.ndarray:
    c = x[:, :, :2].mean(axis=1)
    d = np.linalg.norm(x[:, :, :2] - c[:, None], axis=2).mean(axis=1)
    s = np.where(d > 0, math.sqrt(2.0) / np.where(d > 0, d, 1.0), 1.0)
    T = np.zeros((len(x), 3, 3))
    T[:, 0, 0] = T[:, 1, 1] = s
    T[:, 0, 2] = -s * c[:, 0]
    T[:, 1, 2] = -s * c[:, 1]
    T[:, 2, 2] = 1.0
    return T


def _fit_essential_batch(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """fit_essential over a stack of samples, shape (k, m, 3) -> (k, 3, 3)."""
    Ta, Tb = _hartley_batch(xa), _hartley_batch(xb)
    a = np.einsum("kmj,kij->kmi", xa, Ta)
    b = np.einsum("kmj,kij->kmi", xb, Tb)
    A = np.einsum("kmi,kmj->kmij", b, a).reshape(len(a), a.shape[1], 9)
    _, _, Vt = np.linalg.svd(A)
    F = Vt[:, -1].reshape(-1, 3, 3)
    F = np.einsum("kji,kjl,klm->kim", Tb, F, Ta)
    U, S, Vt = np.linalg.svd(F)
    s = (S[:, 0] + S[:, 1]) / 2.0
    E = U @ (np.stack([s, s, np.zeros_like(s)], axis=1)[:, :, None] * Vt)
    E /= np.linalg.norm(E, axis=(1, 2), keepdims=True)
    flat = E.reshape(len(E), 9)
    k = np.argmax(np.abs(flat), axis=1)
    E *= np.where(flat[np.arange(len(E)), k] < 0, -1.0, 1.0)[:, None, None]
    return E


def _fit_or_nan(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    try:
        return fit_essential(xa, xb)
    except np.linalg.LinAlgError:
        return np.full((3, 3), np.nan)


def _sampson_batch(E: np.ndarray, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    Ea = np.einsum("kij,nj->kni", E, xa)
    Etb = np.einsum("kji,nj->kni", E, xb)
    num = np.einsum("ni,kni->kn", xb, Ea)
    den = Ea[..., 0] ** 2 + Ea[..., 1] ** 2 + Etb[..., 0] ** 2 + Etb[..., 1] ** 2
    return np.abs(num) / np.sqrt(np.maximum(den, 1e-300))


def _best_rotation(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    a = xa / np.linalg.norm(xa, axis=1, keepdims=True)
    b = xb / np.linalg.norm(xb, axis=1, keepdims=True)
    U, _, Vt = np.linalg.svd(b.T @ a)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotation_parallax(xa: np.ndarray, xb: np.ndarray) -> float:
    """Median angle (degrees) left unexplained by the best pure-rotation fit."""
    R = _best_rotation(xa, xb)
    a = xa @ R.T
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = xb / np.linalg.norm(xb, axis=1, keepdims=True)
    cos = np.clip(np.einsum("ni,ni->n", a, b), -1.0, 1.0)
    return float(np.degrees(np.median(np.arccos(cos))))


def estimate_essential(
    c: Correspondence,
    intrinsics: tuple[np.ndarray, np.ndarray],
    ransac: RansacOptions = RansacOptions(),
) -> tuple[np.ndarray, np.ndarray]:
    """RANSAC over eight-point samples, refit on the consensus set.

    Returns ``(E, inlier_mask)``. The threshold is a Sampson distance in
    pixels, converted with the mean focal length of the two views.
    """
    n = len(c)
    if n < MIN_POINTS:
        raise Degenerate(f"{c.view_a}-{c.view_b}: {n} pairs, need {MIN_POINTS}")
    Ka, Kb = intrinsics
    xa = normalize_pixels(c.points[:, :2], Ka)
    xb = normalize_pixels(c.points[:, 2:], Kb)
    f = 0.5 * (Ka[0, 0] + Kb[0, 0])
    thresh = ransac.threshold_px / f

    rng = np.random.default_rng(ransac.seed)
    best_mask = None
    best_key = (-1, math.inf)
    needed = ransac.iterations
    it = 0
    while it < min(needed, ransac.iterations):
        batch = min(RANSAC_BATCH, ransac.iterations - it)
        samples = np.stack([rng.choice(n, MIN_POINTS, replace=False) for _ in range(batch)])
        try:
            Es = _fit_essential_batch(xa[samples], xb[samples])
        except np.linalg.LinAlgError:
            Es = np.stack([_fit_or_nan(xa[k], xb[k]) for k in samples])
        errs = _sampson_batch(Es, xa, xb)
        for E, err in zip(Es, errs):
            if it >= min(needed, ransac.iterations):
                break
            it += 1
            if not np.all(np.isfinite(E)):
                continue
            mask = err < thresh
            key = (int(mask.sum()), float(err[mask].sum()))
            if key[0] > best_key[0] or (key[0] == best_key[0] and key[1] < best_key[1]):
                best_key = key
                best_mask = mask
                w = key[0] / n
                if w >= 1.0:
                    needed = 0
                    break
                p_good = w**MIN_POINTS
                if p_good > 0:
                    needed = math.ceil(math.log(1 - ransac.confidence) / math.log(1 - p_good))

    if best_mask is None or best_mask.sum() < MIN_POINTS:
        raise Degenerate(f"{c.view_a}-{c.view_b}: consensus below {MIN_POINTS} pairs")

    mask = best_mask
    for _ in range(5):
        E = fit_essential(xa[mask], xb[mask])
        new_mask = sampson_distance(E, xa, xb) < thresh
        if new_mask.sum() < MIN_POINTS:
            break
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    E = fit_essential(xa[mask], xb[mask])

    if rotation_parallax(xa[mask], xb[mask]) < ransac.min_parallax_deg:
        raise PureRotation(f"{c.view_a}-{c.view_b}: parallax below {ransac.min_parallax_deg} deg")
    return E, mask


def _triangulate_pair(R: np.ndarray, t: np.ndarray, xa: np.ndarray, xb: np.ndarray):
    """Midpoint triangulation in camera-a coordinates; returns depths in a and b."""
    cb = -R.T @ t
    da = xa / np.linalg.norm(xa, axis=1, keepdims=True)
    db = xb @ R
    db /= np.linalg.norm(db, axis=1, keepdims=True)
    # solve s*da - r*db = cb for each pair in least squares
    aa = np.einsum("ni,ni->n", da, da)
    bb = np.einsum("ni,ni->n", db, db)
    ab = np.einsum("ni,ni->n", da, db)
    ac = da @ cb
    bc = db @ cb
    den = aa * bb - ab**2
    ok = den > 1e-12
    den = np.where(ok, den, 1.0)
    s = (ac * bb - ab * bc) / den
    r = (ab * ac - aa * bc) / den
    X = 0.5 * (s[:, None] * da + (cb + r[:, None] * db))
    depth_a = X[:, 2]
    depth_b = (X @ R.T + t)[:, 2]
    return depth_a, depth_b, ok


def decomposition_candidates(E: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2]
    out = []
    for R in (U @ W @ Vt, U @ W.T @ Vt):
        for sign in (1.0, -1.0):
            out.append((R, sign * t))
    return out


def decompose_essential(E: np.ndarray, xa: np.ndarray, xb: np.ndarray) -> PoseTransform:
    """Pick the (R, t) candidate passing the cheirality test; t has unit length.

    ``xa``, ``xb`` are normalized homogeneous points of the inlier pairs.
    """
    xa = np.asarray(xa, dtype=float).reshape(-1, 3)
    xb = np.asarray(xb, dtype=float).reshape(-1, 3)
    if len(xa) == 0:
        raise ValueError("decomposition needs at least one inlier pair")
    votes = []
    for R, t in decomposition_candidates(E):
        da, db, ok = _triangulate_pair(R, t, xa, xb)
        votes.append(int(np.sum(ok & (da > 0) & (db > 0))))
    best = int(np.argmax(votes))
    n = len(xa)
    if votes[best] * 2 <= n or votes.count(votes[best]) > 1:
        raise AmbiguousCheirality(f"cheirality votes {votes} over {n} pairs")
    R, t = decomposition_candidates(E)[best]
    return PoseTransform(R, t / np.linalg.norm(t))


def essential_from_pose(pose: PoseTransform) -> np.ndarray:
    return skew(pose.t) @ pose.R
