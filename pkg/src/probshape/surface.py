"""Octree-guided marching cubes over decoded signed-distance fields.

The unit cube is subdivided to a fixed level of detail, refining every cell
that might cross the surface (corner sign change, or center value smaller
than the cell half-diagonal). Leaf cells at the target depth are
polygonized with the standard 256-case table and linear edge interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .mc_tables import CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE
from .triplane import decode_batch


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3)
    normals: np.ndarray | None = None

    def surface_area(self):
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1).sum()

    def signed_volume(self):
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0

    def sample_points(self, count, rng):
        """Area-weighted uniform surface samples."""
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        probs = areas / areas.sum()
        tri = rng.choice(len(areas), size=count, p=probs)
        r1 = np.sqrt(rng.random(count))
        r2 = rng.random(count)
        return (
            (1 - r1)[:, None] * a[tri]
            + (r1 * (1 - r2))[:, None] * b[tri]
            + (r1 * r2)[:, None] * c[tri]
        )


_CORNERS = np.array(CORNER_OFFSETS, dtype=np.int64)


def _lattice_values(field_fn, cache, lattice_points, side):
    """Evaluate field at integer lattice points (scaled to the cube),
    memoizing values across octree levels that share a lattice."""
    missing = [tuple(p) for p in lattice_points if tuple(p) not in cache]
    if missing:
        arr = np.array(missing, dtype=np.float64) / side - 0.5
        vals = field_fn(arr)
        for key, v in zip(missing, vals):
            cache[key] = float(v)
    return np.array([cache[tuple(p)] for p in lattice_points])


def extract_isosurface(field_fn, lod):
    """Mesh of the zero level set of field_fn over [-0.5, 0.5]^3.

    field_fn maps (N, 3) points to (N,) values, negative inside. Returns a
    Mesh; an all-positive or all-negative field yields an empty mesh.
    """
    if lod < 2:
        raise UsageError("level of detail must be at least 2")
    side_final = 2**lod
    cells = np.zeros((1, 3), dtype=np.int64)  # depth-0 cell
    cache = {}
    for depth in range(lod):
        stride = side_final // 2**depth  # lattice units per cell at this depth
        corner_pts = (cells[:, None, :] * stride + _CORNERS[None] * stride).reshape(-1, 3)
        uniq, inv = np.unique(corner_pts, axis=0, return_inverse=True)
        vals = _lattice_values(field_fn, cache, uniq, side_final)[inv].reshape(-1, 8)
        centers = (cells + 0.5) * stride / side_final - 0.5
        cvals = field_fn(centers)
        half_diag = np.sqrt(3.0) / 2.0 * stride / side_final
        sign_change = (vals.min(axis=1) < 0) & (vals.max(axis=1) >= 0)
        keep = sign_change | (np.abs(cvals) < half_diag)
        cells = cells[keep]
        if len(cells) == 0:
            return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        # subdivide into 8 children
        cells = (cells[:, None, :] * 2 + _CORNERS[None]).reshape(-1, 3)
    # leaf polygonization
    corner_pts = (cells[:, None, :] + _CORNERS[None]).reshape(-1, 3)
    uniq, inv = np.unique(corner_pts, axis=0, return_inverse=True)
    vals = _lattice_values(field_fn, cache, uniq, side_final)[inv].reshape(-1, 8)
    sign_change = (vals.min(axis=1) < 0) & (vals.max(axis=1) >= 0)
    cells = cells[sign_change]
    vals = vals[sign_change]

    verts = []
    faces = []
    edge_vertex = {}
    for cell, cv in zip(cells, vals):
        case = 0
        for k in range(8):
            if cv[k] < 0:
                case |= 1 << k
        if EDGE_TABLE[case] == 0:
            continue
        local = {}
        for e in range(12):
            if not EDGE_TABLE[case] & (1 << e):
                continue
            ca, cb = EDGE_CORNERS[e]
            pa = tuple(cell + _CORNERS[ca])
            pb = tuple(cell + _CORNERS[cb])
            key = (pa, pb) if pa < pb else (pb, pa)
            if key not in edge_vertex:
                va, vb = cv[ca], cv[cb]
                t = va / (va - vb) if va != vb else 0.5
                pos = (
                    np.array(pa, dtype=np.float64)
                    + t * (np.array(pb, dtype=np.float64) - np.array(pa))
                ) / side_final - 0.5
                edge_vertex[key] = len(verts)
                verts.append(pos)
            local[e] = edge_vertex[key]
        tri = TRI_TABLE[case]
        for i in range(0, len(tri), 3):
            faces.append((local[tri[i]], local[tri[i + 2]], local[tri[i + 1]]))
    if not verts:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    vertices = np.array(verts)
    faces = np.array(faces, dtype=np.int64)
    normals = _field_normals(field_fn, vertices, 0.5 / side_final)
    return Mesh(vertices=vertices, faces=faces, normals=normals)


def _field_normals(field_fn, points, h):
    g = np.empty_like(points)
    for a in range(3):
        dp = np.zeros(3)
        dp[a] = h
        g[:, a] = field_fn(np.clip(points + dp, -0.5, 0.5)) - field_fn(
            np.clip(points - dp, -0.5, 0.5)
        )
    norm = np.linalg.norm(g, axis=1, keepdims=True)
    return g / np.maximum(norm, 1e-30)


def extract_surface(lib, z, lod=6):
    """Mesh of the decoded triplane field at the given level of detail."""
    return extract_isosurface(lambda pts: decode_batch(lib, z, pts), lod)
