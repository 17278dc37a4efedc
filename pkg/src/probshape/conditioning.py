"""Triplane-aligned conditioning built from normalized coordinate maps.

Pipeline: filter noisy map pixels -> voxelize into a 2^(p+1) occupancy grid
keeping mean normals -> orthographic projection onto the three axis planes
-> pixel unshuffle down to the 2^p triplane resolution, giving a
(2^p, 2^p, 48) conditioning tensor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientEvidenceError, ShapeMismatchError
from .render import NorfMap

FILTER_SLACK = 0.55
FILTER_KNN = 5
FILTER_RATIO = 3.0
MIN_POINTS = 8


@dataclass
class VoxelGrid:
    occupancy: np.ndarray  # (side, side, side) bool
    mean_normal: np.ndarray  # (side, side, side, 3), zero where empty

    @property
    def side(self):
        return self.occupancy.shape[0]


def filter_points(m: NorfMap):
    """Valid map pixels as (coords, normals) with outliers removed.

    Keeps masked-on pixels whose coords lie within the slack cube, clamps
    them back to the unit cube, renormalizes normals, then drops points
    whose mean distance to their 5 nearest neighbors exceeds 3x the median
    of that statistic.
    """
    on = m.mask & np.all(np.abs(m.coords) <= FILTER_SLACK, axis=2)
    pts = np.clip(m.coords[on], -0.5, 0.5)
    nrm = m.normals[on]
    lens = np.linalg.norm(nrm, axis=1, keepdims=True)
    nrm = np.where(lens > 1e-8, nrm / np.maximum(lens, 1e-30), 0.0)
    if len(pts) < MIN_POINTS:
        raise InsufficientEvidenceError(
            f"only {len(pts)} valid points after range filtering"
        )
    k = min(FILTER_KNN + 1, len(pts))
    dists, _ = cKDTree(pts).query(pts, k=k)
    knn_mean = dists[:, 1:].mean(axis=1)
    keep = knn_mean <= FILTER_RATIO * np.median(knn_mean)
    if keep.sum() < MIN_POINTS:
        raise InsufficientEvidenceError(
            f"only {int(keep.sum())} points survive the outlier filter"
        )
    return pts[keep], nrm[keep]


def voxelize(points, normals, p):
    """Bin unit-cube points into a 2^(p+1) grid with mean member normals."""
    side = 2 ** (p + 1)
    points = np.asarray(points, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    idx = np.clip(((points + 0.5) * side).astype(np.int64), 0, side - 1)
    occupancy = np.zeros((side, side, side), dtype=bool)
    sums = np.zeros((side, side, side, 3))
    counts = np.zeros((side, side, side))
    flat = (idx[:, 0] * side + idx[:, 1]) * side + idx[:, 2]
    np.add.at(counts.reshape(-1), flat, 1.0)
    np.add.at(sums.reshape(-1, 3), flat, normals)
    occupancy = counts > 0
    mean_normal = np.where(
        occupancy[..., None], sums / np.maximum(counts[..., None], 1.0), 0.0
    )
    return VoxelGrid(occupancy=occupancy, mean_normal=mean_normal)


def ortho_project(grid: VoxelGrid):
    """Project occupancy and mean normals onto the XY, XZ and YZ planes.

    Per plane: channel 0 is any-occupied along the projection axis, channels
    1-3 the mean of member-cell mean normals (zero where the column is
    empty). Returns a list of three (side, side, 4) arrays.
    """
    planes = []
    for axis in (2, 1, 0):  # XY drops z, XZ drops y, YZ drops x
        occ_any = grid.occupancy.any(axis=axis)
        count = grid.occupancy.sum(axis=axis)
        nsum = np.where(grid.occupancy[..., None], grid.mean_normal, 0.0).sum(axis=axis)
        nmean = nsum / np.maximum(count[..., None], 1.0)
        planes.append(
            np.concatenate([occ_any[..., None].astype(np.float64), nmean], axis=2)
        )
    return planes


def pixel_unshuffle(planes, factor=2):
    """Space-to-depth on each plane, concatenated channel-wise.

    Each factor x factor block of a (S, S, c) plane becomes factor^2
    channels in row-major block order: output channel index is
    c_in * factor^2 + dr * factor + dc, planes concatenated in (XY, XZ, YZ)
    order. For the standard 4-channel planes at factor 2 this yields
    (S/2, S/2, 48).
    """
    outs = []
    for plane in planes:
        s, s2, c = plane.shape
        if s % factor or s2 % factor:
            raise ShapeMismatchError(f"plane side {s} not divisible by {factor}")
        blocks = plane.reshape(s // factor, factor, s2 // factor, factor, c)
        # (rows, cols, c, dr, dc) -> channels c*f^2 + dr*f + dc
        blocks = blocks.transpose(0, 2, 4, 1, 3)
        outs.append(blocks.reshape(s // factor, s2 // factor, c * factor * factor))
    return np.concatenate(outs, axis=2)


def pixel_shuffle(ortho, channels=4, factor=2):
    """Inverse of pixel_unshuffle; returns the list of three planes."""
    s, _, total = ortho.shape
    per_plane = channels * factor * factor
    if total != 3 * per_plane:
        raise ShapeMismatchError(f"expected {3 * per_plane} channels, got {total}")
    planes = []
    for k in range(3):
        part = ortho[:, :, k * per_plane : (k + 1) * per_plane]
        blocks = part.reshape(s, s, channels, factor, factor)
        blocks = blocks.transpose(0, 3, 1, 4, 2)
        planes.append(blocks.reshape(s * factor, s * factor, channels))
    return planes


def ortho_norf(m: NorfMap, p):
    """Full conditioning pipeline from a coordinate map."""
    pts, nrm = filter_points(m)
    grid = voxelize(pts, nrm, p)
    return pixel_unshuffle(ortho_project(grid))


def save_ortho_norf(path_prefix, arr):
    meta = {"shape": list(arr.shape)}
    with open(str(path_prefix) + ".json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    np.ascontiguousarray(arr).astype("<f4").tofile(str(path_prefix) + ".bin")


def load_ortho_norf(path_prefix):
    with open(str(path_prefix) + ".json") as f:
        meta = json.load(f)
    raw = np.fromfile(str(path_prefix) + ".bin", dtype="<f4").astype(np.float64)
    return raw.reshape(meta["shape"])
