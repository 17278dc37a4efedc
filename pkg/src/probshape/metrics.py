"""Point-cloud evaluation: Chamfer-L1, F-score, best-of-N, rotation sweep.

Chamfer-L1 here means the un-squared Euclidean nearest-neighbor distance
averaged over both directions (0.5 * (mean_A min_B + mean_B min_A));
"L1" refers to the aggregation, not the point-distance kernel.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import UsageError


def _check(a, b):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise UsageError("point sets must be nonempty")
    return a, b


def _nn_dists(a, b):
    return cKDTree(b).query(a)[0]


def chamfer_l1(a, b):
    """Symmetric mean nearest-neighbor distance."""
    a, b = _check(a, b)
    return 0.5 * (float(_nn_dists(a, b).mean()) + float(_nn_dists(b, a).mean()))


def fscore(a, b, tau):
    """Harmonic mean of precision (A within tau of B) and recall."""
    if tau <= 0:
        raise UsageError("threshold must be positive")
    a, b = _check(a, b)
    precision = float((_nn_dists(a, b) <= tau).mean())
    recall = float((_nn_dists(b, a) <= tau).mean())
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def best_of_n(hypotheses, gt, metric=chamfer_l1):
    """(best value, argmin index) of metric(hyp, gt) over hypotheses."""
    if not hypotheses:
        raise UsageError("empty hypothesis list")
    values = [metric(h, gt) for h in hypotheses]
    idx = int(np.argmin(values))
    return values[idx], idx


def cube_rotations():
    """The 24 axis-aligned rotations of the cube (identity first)."""
    rots = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            r = np.zeros((3, 3))
            for row, (col, s) in enumerate(zip(perm, signs)):
                r[row, col] = s
            if np.linalg.det(r) > 0:
                rots.append(r)
    rots.sort(key=lambda r: np.abs(r - np.eye(3)).sum())
    return rots


@dataclass
class EvalProtocol:
    n_points: int = 10000
    f_threshold: float = 0.02
    rotation_set: list = field(default_factory=cube_rotations)
    # reduction: per-scene mean, then mean +- std over scenes

    def __post_init__(self):
        if self.n_points <= 0:
            raise UsageError("n_points must be positive")
        if not self.rotation_set:
            raise UsageError("rotation_set must be nonempty")
        if not any(np.allclose(r, np.eye(3)) for r in self.rotation_set):
            raise UsageError("rotation_set must contain the identity")


def aligned_chamfer(a, b, protocol: EvalProtocol):
    """Lowest Chamfer over the protocol's discrete rotation set applied
    to the first cloud."""
    a, b = _check(a, b)
    return min(chamfer_l1(a @ r.T, b) for r in protocol.rotation_set)


def scene_aggregate(per_scene_means):
    """Mean and standard deviation over per-scene means."""
    arr = np.asarray(per_scene_means, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}
