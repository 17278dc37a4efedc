"""Similarity registration of normalized-frame points into metric scenes.

Closed-form least-squares alignment (rotation, translation, scale) over
point correspondences, robustified with RANSAC, plus inlier-count based
hypothesis selection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .camera import Camera, Sim3Transform
from .errors import DegeneracyError, RegistrationFailedError, UsageError

RANSAC_ITERATIONS = 512
RANSAC_MIN_SAMPLE = 3


@dataclass
class CorrespondenceSet:
    norf_points: np.ndarray  # (N, 3) in [-0.5, 0.5]^3
    scene_points: np.ndarray  # (N, 3) metric

    def __post_init__(self):
        self.norf_points = np.asarray(self.norf_points, dtype=np.float64)
        self.scene_points = np.asarray(self.scene_points, dtype=np.float64)
        if len(self.norf_points) != len(self.scene_points):
            raise UsageError("correspondence arrays must have equal length")

    def __len__(self):
        return len(self.norf_points)


def umeyama(src, dst):
    """Least-squares similarity: minimize sum ||s R src + t - dst||^2.

    Reflections are excluded by the determinant sign correction.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 3:
        raise UsageError("need at least 3 correspondences")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    var_s = (xs**2).sum() / len(src)
    if var_s < 1e-18:
        raise DegeneracyError("source points are coincident")
    cov = xd.T @ xs / len(src)
    u, d, vt = np.linalg.svd(cov)
    if d[1] < 1e-12 * max(d[0], 1e-30):
        raise DegeneracyError("correspondences are collinear")
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    rot = u @ s @ vt
    scale = (d * np.diag(s)).sum() / var_s
    if scale <= 0:
        raise DegeneracyError("non-positive recovered scale")
    trans = mu_d - scale * rot @ mu_s
    return Sim3Transform(rotation=rot, translation=trans, scale=scale)


def _residuals(tf: Sim3Transform, corr: CorrespondenceSet):
    return np.linalg.norm(tf.apply(corr.norf_points) - corr.scene_points, axis=1)


def ransac_register(corr: CorrespondenceSet, threshold, iterations=RANSAC_ITERATIONS, rng=None):
    """Best similarity by inlier count, refit on inliers.

    Ties on inlier count break toward lower mean inlier residual. Raises
    RegistrationFailedError when no model reaches 3 inliers.
    """
    if len(corr) < RANSAC_MIN_SAMPLE:
        raise UsageError("need at least 3 correspondences")
    if threshold <= 0:
        raise UsageError("threshold must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    best = None  # (count, mean_residual, transform)
    n = len(corr)
    for _ in range(iterations):
        idx = rng.choice(n, size=RANSAC_MIN_SAMPLE, replace=False)
        try:
            tf = umeyama(corr.norf_points[idx], corr.scene_points[idx])
        except DegeneracyError:
            continue
        res = _residuals(tf, corr)
        inl = res < threshold
        count = int(inl.sum())
        if count < RANSAC_MIN_SAMPLE:
            continue
        mean_res = float(res[inl].mean())
        if best is None or count > best[0] or (count == best[0] and mean_res < best[1]):
            best = (count, mean_res, tf, inl)
    if best is None:
        raise RegistrationFailedError("no model with at least 3 inliers")
    # refit on the inlier set, then recount
    try:
        tf = umeyama(corr.norf_points[best[3]], corr.scene_points[best[3]])
    except DegeneracyError:
        tf = best[2]
    res = _residuals(tf, corr)
    inl = res < threshold
    if int(inl.sum()) < RANSAC_MIN_SAMPLE:
        tf, inl = best[2], best[3]
        res = _residuals(tf, corr)
    return tf, int(inl.sum())


def select_hypothesis(hyps):
    """Index of the hypothesis with the most inliers.

    Each entry carries (inlier_count, mean_residual). Ties break toward
    lower mean residual, then lower index.
    """
    if not hyps:
        raise UsageError("empty hypothesis list")
    best_idx = 0
    for i, (count, res) in enumerate(hyps[1:], start=1):
        bc, br = hyps[best_idx]
        if count > bc or (count == bc and res < br):
            best_idx = i
    return best_idx


def back_project(depth, mask, cam: Camera):
    """Pinhole inverse projection of masked pixels to camera-frame points.

    Nonpositive depths at masked pixels are skipped; returns (points,
    pixel_indices, skipped_count). Pixel indices are (row, col) pairs.
    """
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    z = depth[rows, cols]
    good = z > 0
    skipped = int((~good).sum())
    rows, cols, z = rows[good], cols[good], z[good]
    u = cols + 0.5
    v = rows + 0.5
    x = (u - cam.cx) / cam.fx * z
    y = (v - cam.cy) / cam.fy * z
    pts = np.stack([x, y, z], axis=1)
    return pts, np.stack([rows, cols], axis=1), skipped


def registration_report(tf: Sim3Transform, inlier_count, mean_residual, threshold):
    return {
        "transform": tf.to_dict(),
        "inlier_count": int(inlier_count),
        "mean_residual": float(mean_residual),
        "threshold": float(threshold),
    }


def save_registration_report(path, report):
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
