"""Procedural shape families with signed distance evaluation.

All shapes live in a normalized frame: after ``normalize_to_unit_cube`` the
shape is centered at the origin and its largest bounding-box axis spans
exactly 1. Analytic kinds evaluate distances in closed form; triangle
meshes use point-triangle minimization with sign from the generalized
winding number.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError, UsageError


class Shape:
    """Base class; subclasses implement sdf_batch and bounds."""

    kind = "abstract"

    def sdf_batch(self, points):
        raise NotImplementedError

    def sdf(self, point):
        return float(self.sdf_batch(np.asarray(point, dtype=np.float64)[None])[0])

    def bounds(self):
        """(lo, hi) axis-aligned bounding box, each a 3-vector."""
        raise NotImplementedError

    def normal_batch(self, points, h=1e-5):
        """Outward normals from central differences of the sdf."""
        points = np.asarray(points, dtype=np.float64)
        g = np.empty_like(points)
        for a in range(3):
            dp = np.zeros(3)
            dp[a] = h
            g[:, a] = self.sdf_batch(points + dp) - self.sdf_batch(points - dp)
        norm = np.linalg.norm(g, axis=1, keepdims=True)
        return g / np.maximum(norm, 1e-30)


@dataclass
class SphereShape(Shape):
    radius: float
    kind = "sphere"

    def sdf_batch(self, points):
        return np.linalg.norm(points, axis=1) - self.radius

    def bounds(self):
        r = self.radius
        return -np.full(3, r), np.full(3, r)

    def normal_batch(self, points, h=None):
        points = np.asarray(points, dtype=np.float64)
        norm = np.linalg.norm(points, axis=1, keepdims=True)
        return points / np.maximum(norm, 1e-30)


@dataclass
class BoxShape(Shape):
    half_extents: np.ndarray
    kind = "box"

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64)

    def sdf_batch(self, points):
        q = np.abs(points) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def bounds(self):
        return -self.half_extents.copy(), self.half_extents.copy()


def _polyline_sdf_2d(verts, closed_region, pts2d):
    """Signed distance in the (rho, y) half-plane to a revolved profile.

    ``verts`` is the open surface polyline; ``closed_region`` the closed
    polygon (polyline plus axis closure) used only for the inside test.
    """
    p = pts2d
    d2 = np.full(len(p), np.inf)
    for a, b in zip(verts[:-1], verts[1:]):
        e = b - a
        w = p - a
        t = np.clip((w @ e) / max(e @ e, 1e-30), 0.0, 1.0)
        proj = a + t[:, None] * e
        d2 = np.minimum(d2, ((p - proj) ** 2).sum(axis=1))
    inside = np.zeros(len(p), dtype=bool)
    poly = closed_region
    j = len(poly) - 1
    for i in range(len(poly)):
        xi, yi = poly[i]
        xj, yj = poly[j]
        crosses = (yi > p[:, 1]) != (yj > p[:, 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = xi + (p[:, 1] - yi) * (xj - xi) / (yj - yi)
        inside ^= crosses & (p[:, 0] < xint)
        j = i
    return np.sqrt(d2) * np.where(inside, -1.0, 1.0)


@dataclass
class CupShape(Shape):
    """Open cylindrical cup (optionally with a torus handle on +x).

    Canonical orientation: opening along +y.
    """

    outer_radius: float = 0.35
    height: float = 0.9
    wall: float = 0.07
    with_handle: bool = False
    handle_radius: float = 0.16
    handle_tube: float = 0.045
    kind = "cylinder-cup"

    def _profile(self):
        r, h, w = self.outer_radius, self.height, self.wall
        verts = np.array(
            [
                [0.0, -h / 2],
                [r, -h / 2],
                [r, h / 2],
                [r - w, h / 2],
                [r - w, -h / 2 + w],
                [0.0, -h / 2 + w],
            ]
        )
        region = np.vstack([verts, verts[0]])
        return verts, region

    def sdf_batch(self, points):
        points = np.asarray(points, dtype=np.float64)
        rho = np.linalg.norm(points[:, [0, 2]], axis=1)
        verts, region = self._profile()
        d = _polyline_sdf_2d(verts, region, np.stack([rho, points[:, 1]], axis=1))
        if self.with_handle:
            c = np.array([self.outer_radius, 0.0, 0.0])
            q = points - c
            ring = np.sqrt(q[:, 0] ** 2 + q[:, 1] ** 2) - self.handle_radius
            d_handle = np.sqrt(ring**2 + q[:, 2] ** 2) - self.handle_tube
            d = np.minimum(d, d_handle)
        return d

    def bounds(self):
        r, h = self.outer_radius, self.height
        lo = np.array([-r, -h / 2, -r])
        hi = np.array([r, h / 2, r])
        if self.with_handle:
            hi[0] = self.outer_radius + self.handle_radius + self.handle_tube
        return lo, hi


@dataclass
class EllShape(Shape):
    """L-shaped solid: union of two axis-aligned boxes sharing a corner."""

    leg: float = 0.5
    thickness: float = 0.22
    depth: float = 0.3
    kind = "ell-solid"

    def _boxes(self):
        t, L, d = self.thickness, self.leg, self.depth
        # vertical leg spans y in [0, L]; horizontal leg spans x in [0, L]
        b1 = (np.array([t / 2, L / 2, d / 2]), np.array([t / 2, L / 2, 0.0]))
        b2 = (np.array([L / 2, t / 2, d / 2]), np.array([L / 2, t / 2, 0.0]))
        return b1, b2

    def sdf_batch(self, points):
        points = np.asarray(points, dtype=np.float64)
        d = np.full(len(points), np.inf)
        for half, center in self._boxes():
            q = np.abs(points - center) - half
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            d = np.minimum(d, outside + inside)
        return d

    def bounds(self):
        t, L, d = self.thickness, self.leg, self.depth
        return np.array([-t / 2, -t / 2, -d / 2]), np.array([L, L, d / 2])


@dataclass
class MeshShape(Shape):
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    kind = "triangle-mesh"
    _warned: bool = field(default=False, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.watertight = self._check_watertight()

    def _check_watertight(self):
        edges = {}
        for tri in self.faces:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                edges[key] = edges.get(key, 0) + 1
        return all(c == 2 for c in edges.values())

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def unsigned_distance_batch(self, points):
        points = np.asarray(points, dtype=np.float64)
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        best = np.full(len(points), np.inf)
        for i in range(len(points)):
            best[i] = np.sqrt(_point_tri_dist2(points[i], a, b, c).min())
        return best

    def winding_number_batch(self, points):
        """Generalized winding number via summed signed solid angles."""
        points = np.asarray(points, dtype=np.float64)
        out = np.empty(len(points))
        va = self.vertices[self.faces[:, 0]]
        vb = self.vertices[self.faces[:, 1]]
        vc = self.vertices[self.faces[:, 2]]
        for i, pnt in enumerate(points):
            a = va - pnt
            b = vb - pnt
            c = vc - pnt
            la = np.linalg.norm(a, axis=1)
            lb = np.linalg.norm(b, axis=1)
            lc = np.linalg.norm(c, axis=1)
            num = np.einsum("ij,ij->i", a, np.cross(b, c))
            den = (
                la * lb * lc
                + np.einsum("ij,ij->i", a, b) * lc
                + np.einsum("ij,ij->i", b, c) * la
                + np.einsum("ij,ij->i", a, c) * lb
            )
            out[i] = np.arctan2(num, den).sum() / (2.0 * np.pi)
        return out

    def sdf_batch(self, points):
        if not self.watertight and not self._warned:
            warnings.warn("mesh is not watertight; sdf sign may be unreliable")
            self._warned = True
        d = self.unsigned_distance_batch(points)
        wind = self.winding_number_batch(points)
        return np.where(wind > 0.5, -d, d)


def _point_tri_dist2(p, a, b, c):
    """Squared distances from point p to each triangle (a, b, c) row."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = np.maximum(va + vb + vc, 1e-30)
    v = np.clip(vb / denom, 0.0, 1.0)
    w = np.clip(vc / denom, 0.0, 1.0)
    closest = a + v[:, None] * ab + w[:, None] * ac
    # vertex regions
    closest = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, closest)
    closest = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, closest)
    closest = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, closest)
    # edge regions
    e1 = (d1 / np.where(d1 - d3 == 0, 1e-30, d1 - d3))[:, None]
    on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    closest = np.where(on_ab[:, None], a + np.clip(e1, 0, 1) * ab, closest)
    e2 = (d2 / np.where(d2 - d6 == 0, 1e-30, d2 - d6))[:, None]
    on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    closest = np.where(on_ac[:, None], a + np.clip(e2, 0, 1) * ac, closest)
    e3 = ((d4 - d3) / np.where((d4 - d3) + (d5 - d6) == 0, 1e-30, (d4 - d3) + (d5 - d6)))[
        :, None
    ]
    on_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    closest = np.where(on_bc[:, None], b + np.clip(e3, 0, 1) * (c - b), closest)
    diff = p - closest
    return np.einsum("ij,ij->i", diff, diff)


@dataclass
class NormalizedShape(Shape):
    """A base shape recentered and scaled so its bbox fits the unit cube."""

    base: Shape
    center: np.ndarray
    scale: float  # normalized = (base_point - center) * scale

    @property
    def kind(self):
        return self.base.kind

    def sdf_batch(self, points):
        points = np.asarray(points, dtype=np.float64)
        return self.base.sdf_batch(points / self.scale + self.center) * self.scale

    def normal_batch(self, points, h=1e-5):
        points = np.asarray(points, dtype=np.float64)
        return self.base.normal_batch(points / self.scale + self.center)

    def bounds(self):
        lo, hi = self.base.bounds()
        return (lo - self.center) * self.scale, (hi - self.center) * self.scale


def normalize_to_unit_cube(shape: Shape):
    """Center the shape and scale its largest bbox axis to exactly 1."""
    lo, hi = shape.bounds()
    extent = hi - lo
    if np.max(extent) <= 0:
        raise DegeneracyError("shape has zero extent")
    center = (lo + hi) / 2.0
    scale = 1.0 / np.max(extent)
    if isinstance(shape, MeshShape):
        return MeshShape((shape.vertices - center) * scale, shape.faces)
    return NormalizedShape(shape, center, scale)


def surface_points(shape: Shape, count, rng, iters=8):
    """Approximate surface samples by Newton projection of random points."""
    pts = rng.uniform(-0.5, 0.5, size=(count * 2, 3))
    for _ in range(iters):
        d = shape.sdf_batch(pts)
        n = shape.normal_batch(pts)
        pts = pts - d[:, None] * n
        pts = np.clip(pts, -0.5, 0.5)
    d = np.abs(shape.sdf_batch(pts))
    order = np.argsort(d)
    return pts[order[:count]]


def sample_sdf_points(shape: Shape, count, mix, rng, sigma=0.02):
    """Supervision samples: a ``mix`` fraction uniform in the cube, the rest
    near-surface (surface point plus isotropic Gaussian)."""
    if count <= 0:
        raise UsageError("count must be positive")
    n_uniform = int(round(count * mix))
    n_near = count - n_uniform
    parts = []
    if n_uniform:
        parts.append(rng.uniform(-0.5, 0.5, size=(n_uniform, 3)))
    if n_near:
        surf = surface_points(shape, n_near, rng)
        near = np.clip(surf + rng.normal(0.0, sigma, size=surf.shape), -0.5, 0.5)
        parts.append(near)
    pts = np.concatenate(parts)
    from .triplane import SdfSampleSet

    return SdfSampleSet(points=pts, distances=shape.sdf_batch(pts))


def icosphere(subdivisions=2, radius=1.0):
    """Triangle mesh approximating a sphere (icosahedron subdivision)."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    cache = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            v = (verts[i] + verts[j]) / 2.0
            v = v / np.linalg.norm(v)
            cache[key] = len(verts)
            verts.append(v)
        return cache[key]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return MeshShape(np.array(verts) * radius, np.array(faces))
