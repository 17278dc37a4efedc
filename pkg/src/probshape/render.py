"""Ray-cast rendering of normalized-frame coordinate maps and observations.

A scene is a normalized shape placed by a similarity transform. Rays are
traced in the shape's normalized frame; hits are recorded as normalized
coordinates plus surface normals (NorfMap) or as shaded intensities plus
camera-frame normals (Observation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .camera import Camera, Sim3Transform
from .errors import UsageError

SENTINEL = -1.0
COORD_SLACK = 0.55  # validity slack for diffusion-sampled maps
_BOUND_RADIUS = 0.87  # circumscribed sphere of the unit cube

STATE_CHANNELS = 6  # coords (3) then normals (3)


@dataclass
class NorfMap:
    coords: np.ndarray  # (d, d, 3) normalized coords, SENTINEL off-mask
    normals: np.ndarray  # (d, d, 3) unit normals in the normalized frame
    mask: np.ndarray  # (d, d) bool
    depth: np.ndarray  # (d, d) metric z-depth, 0 off-mask

    @property
    def resolution(self):
        return self.coords.shape[0]

    @property
    def empty(self):
        return not bool(self.mask.any())

    def validate(self):
        if self.mask.any():
            on = self.mask
            if np.abs(self.coords[on]).max() > 0.5 + 1e-6:
                raise UsageError("masked-on coords outside the unit cube")
            norms = np.linalg.norm(self.normals[on], axis=-1)
            if np.abs(norms - 1.0).max() > 1e-4:
                raise UsageError("masked-on normals are not unit length")
        off = ~self.mask
        if off.any() and np.abs(self.coords[off] - SENTINEL).max() > 1e-6:
            raise UsageError("masked-off pixels must carry the sentinel")

    def to_state(self):
        """(6, d, d) diffusion state: coords then normals, channels first."""
        return np.concatenate([self.coords, self.normals], axis=2).transpose(2, 0, 1)

    @classmethod
    def from_state(cls, state, depth=None):
        """Rebuild a map from a sampled state; validity from coord range."""
        img = np.transpose(state, (1, 2, 0))
        coords = img[:, :, :3].copy()
        normals = img[:, :, 3:6].copy()
        mask = np.all(np.abs(coords) <= COORD_SLACK, axis=2)
        coords[~mask] = SENTINEL
        normals[~mask] = 0.0
        d = coords.shape[0]
        return cls(
            coords=coords,
            normals=normals,
            mask=mask,
            depth=np.zeros((d, d)) if depth is None else depth,
        )


@dataclass
class Observation:
    image: np.ndarray  # (d, d, 1) shaded intensity in [0, 1]
    normals: np.ndarray  # (d, d, 3) camera-frame unit normals, 0 off-mask

    def conditioning(self):
        """(4, d, d) conditioning stack: intensity then normals."""
        return np.concatenate([self.image, self.normals], axis=2).transpose(2, 0, 1)


def _trace(shape, origins, dirs, max_steps=256, tol=1e-6):
    """Sphere-trace rays given in the normalized frame.

    origins/dirs are (N, 3) with unit dirs. Returns (t, hit) where t is the
    ray parameter of the surface hit.
    """
    n = len(dirs)
    # restrict to the bounding-sphere interval
    b = np.einsum("ij,ij->i", origins, dirs)
    c = np.einsum("ij,ij->i", origins, origins) - _BOUND_RADIUS**2
    disc = b * b - c
    enters = disc > 0
    t0 = np.where(enters, -b - np.sqrt(np.maximum(disc, 0.0)), 0.0)
    t1 = np.where(enters, -b + np.sqrt(np.maximum(disc, 0.0)), 0.0)
    t = np.maximum(t0, 0.0)
    hit = np.zeros(n, dtype=bool)
    active = enters & (t1 > 0)
    for _ in range(max_steps):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        pts = origins[idx] + t[idx, None] * dirs[idx]
        d = shape.sdf_batch(pts)
        newly_hit = d < tol
        hit[idx[newly_hit]] = True
        t[idx] += np.maximum(d, 0.0) * 0.95 + 1e-7
        active[idx] = ~newly_hit & (t[idx] < t1[idx])
    return t, hit


def render_norf(shape, cam: Camera, pose: Sim3Transform | None = None):
    """Ray-cast the posed shape and record first hits in normalized coords."""
    pose = pose or Sim3Transform.identity()
    origin_w, dirs_w = cam.pixel_rays()
    d = cam.resolution
    dirs = dirs_w.reshape(-1, 3)
    # move rays into the normalized frame; metric length scales by 1/scale
    origin_n = pose.inverse_apply(origin_w[None])[0]
    dirs_n = dirs @ pose.rotation
    if shape.sdf(origin_n) <= 0:
        raise UsageError("camera must be outside the shape")
    t, hit = _trace(shape, np.broadcast_to(origin_n, dirs.shape).copy(), dirs_n)
    coords = np.full((d * d, 3), SENTINEL)
    normals = np.zeros((d * d, 3))
    depth = np.zeros(d * d)
    if hit.any():
        pts_n = origin_n + t[hit, None] * dirs_n[hit]
        pts_n = np.clip(pts_n, -0.5, 0.5)
        coords[hit] = pts_n
        normals[hit] = shape.normal_batch(pts_n)
        pts_w = pose.apply(pts_n)
        depth[hit] = cam.to_camera(pts_w)[:, 2]
    return NorfMap(
        coords=coords.reshape(d, d, 3),
        normals=normals.reshape(d, d, 3),
        mask=hit.reshape(d, d),
        depth=depth.reshape(d, d),
    )


def render_observation(shape, cam: Camera, light_dir, pose: Sim3Transform | None = None):
    """Lambertian-shaded intensity plus camera-frame normals.

    Shading is max(0, n . l) * 0.9 + 0.1 ambient, clamped to [0, 1].
    """
    pose = pose or Sim3Transform.identity()
    m = render_norf(shape, cam, pose)
    d = m.resolution
    light = np.asarray(light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)
    image = np.zeros((d, d, 1))
    normals_cam = np.zeros((d, d, 3))
    if m.mask.any():
        n_world = m.normals[m.mask] @ pose.rotation.T
        lambert = np.maximum(0.0, n_world @ light)
        image[m.mask, 0] = np.clip(lambert * 0.9 + 0.1, 0.0, 1.0)
        normals_cam[m.mask] = n_world @ cam.rotation.T
    return Observation(image=image, normals=normals_cam)


# -- file format -----------------------------------------------------------
# JSON sidecar {d, channels, sentinel, camera} next to a raw little-endian
# float32 blob holding the planes back to back.


def save_norf_map(path_prefix, m: NorfMap, cam: Camera | None = None):
    d = m.resolution
    meta = {
        "d": d,
        "channels": {"coords": 3, "normals": 3, "mask": 1, "depth": 1},
        "sentinel": SENTINEL,
        "camera": cam.to_dict() if cam else None,
    }
    with open(str(path_prefix) + ".json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    blob = np.concatenate(
        [
            m.coords.reshape(-1),
            m.normals.reshape(-1),
            m.mask.astype(np.float64).reshape(-1),
            m.depth.reshape(-1),
        ]
    )
    blob.astype("<f4").tofile(str(path_prefix) + ".bin")


def load_norf_map(path_prefix):
    with open(str(path_prefix) + ".json") as f:
        meta = json.load(f)
    d = meta["d"]
    raw = np.fromfile(str(path_prefix) + ".bin", dtype="<f4").astype(np.float64)
    k = d * d
    coords = raw[: 3 * k].reshape(d, d, 3)
    normals = raw[3 * k : 6 * k].reshape(d, d, 3)
    mask = raw[6 * k : 7 * k].reshape(d, d) > 0.5
    depth = raw[7 * k :].reshape(d, d)
    cam = Camera.from_dict(meta["camera"]) if meta.get("camera") else None
    return NorfMap(coords=coords, normals=normals, mask=mask, depth=depth), cam


def save_observation(path_prefix, obs: Observation):
    d = obs.image.shape[0]
    meta = {"d": d, "channels": {"image": 1, "normals": 3}, "sentinel": 0.0, "camera": None}
    with open(str(path_prefix) + ".json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    blob = np.concatenate([obs.image.reshape(-1), obs.normals.reshape(-1)])
    blob.astype("<f4").tofile(str(path_prefix) + ".bin")


def load_observation(path_prefix):
    with open(str(path_prefix) + ".json") as f:
        meta = json.load(f)
    d = meta["d"]
    raw = np.fromfile(str(path_prefix) + ".bin", dtype="<f4").astype(np.float64)
    k = d * d
    return Observation(
        image=raw[:k].reshape(d, d, 1), normals=raw[k:].reshape(d, d, 3)
    )
