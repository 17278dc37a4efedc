"""Triplanar latent fields: interpolation, decoding, fitting, layout.

A field is three orthogonal 2^p x 2^p feature planes (XY, XZ, YZ order). A
3D point's latent is the concatenation of the bilinear interpolations of its
axis-aligned projections; a shared dense decoder maps that latent to a
signed distance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError, DomainError, UsageError
from .nn import Adam, Mlp, TrainConfig

TARGET_STD = 0.2
PLANE_AXES = ((0, 1), (0, 2), (1, 2))  # XY, XZ, YZ
_EPS = 1e-9


@dataclass
class Triplane:
    p: int
    n: int
    planes: list  # three (2^p, 2^p, n) float arrays

    def __post_init__(self):
        side = 2**self.p
        if len(self.planes) != 3:
            raise UsageError("a triplane has exactly 3 planes")
        for pl in self.planes:
            if pl.shape != (side, side, self.n):
                raise UsageError(f"plane shape {pl.shape} != {(side, side, self.n)}")

    def copy(self):
        return Triplane(self.p, self.n, [pl.copy() for pl in self.planes])


@dataclass
class SdfSampleSet:
    points: np.ndarray  # (M, 3) in [-0.5, 0.5]^3
    distances: np.ndarray  # (M,)


@dataclass
class FieldLibrary:
    triplanes: list
    decoder: Mlp
    ref_std: np.ndarray | None = None
    final_loss: float | None = None
    loss_history: list = field(default_factory=list)


def grid_coords(p):
    """Cell-center coordinates of the 2^p grid along one axis."""
    side = 2**p
    return (np.arange(side) + 0.5) / side - 0.5


def _bilinear(p, u, v):
    """Bilinear stencil for plane coords u, v in [-0.5, 0.5].

    Returns flat cell indices (4, N) into a 2^p x 2^p grid plus weights
    (4, N). Cell centers sit at (i + 0.5)/2^p - 0.5; queries are clamped to
    the center lattice so boundary cells extend to the cube faces.
    """
    side = 2**p
    gu = np.clip((u + 0.5) * side - 0.5, 0.0, side - 1.0)
    gv = np.clip((v + 0.5) * side - 0.5, 0.0, side - 1.0)
    i0 = np.minimum(np.floor(gu).astype(np.int64), side - 2) if side > 1 else np.zeros_like(gu, dtype=np.int64)
    j0 = np.minimum(np.floor(gv).astype(np.int64), side - 2) if side > 1 else np.zeros_like(gv, dtype=np.int64)
    fu = gu - i0
    fv = gv - j0
    idx = np.stack(
        [
            i0 * side + j0,
            i0 * side + (j0 + 1) % side,
            (i0 + 1) % side * side + j0,
            (i0 + 1) % side * side + (j0 + 1) % side,
        ]
    )
    w = np.stack([(1 - fu) * (1 - fv), (1 - fu) * fv, fu * (1 - fv), fu * fv])
    return idx, w


def _check_domain(points):
    if np.any(np.abs(points) > 0.5 + 1e-12):
        raise DomainError("query point outside the unit cube [-0.5, 0.5]^3")


def interpolate_batch(z: Triplane, points):
    """Latents for (N, 3) points; returns (N, 3n)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    _check_domain(points)
    feats = []
    for plane, (au, av) in zip(z.planes, PLANE_AXES):
        idx, w = _bilinear(z.p, points[:, au], points[:, av])
        flat = plane.reshape(-1, z.n)
        feats.append(np.einsum("kn,knc->nc", w, flat[idx]))
    return np.concatenate(feats, axis=1)


def interpolate(z: Triplane, point):
    """Latent vector of length 3n for one point in [-0.5, 0.5]^3."""
    return interpolate_batch(z, np.asarray(point, dtype=np.float64)[None])[0]


def interpolate_graph(plane_tensors, p, n, points):
    """Autodiff interpolation through a list of three plane Tensors."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    _check_domain(points)
    feats = []
    for plane, (au, av) in zip(plane_tensors, PLANE_AXES):
        idx, w = _bilinear(p, points[:, au], points[:, av])
        flat = ad.reshape(plane, (-1, n))
        acc = None
        for k in range(4):
            term = ad.mul(ad.getitem(flat, (idx[k],)), w[k][:, None])
            acc = term if acc is None else ad.add(acc, term)
        feats.append(acc)
    return ad.concat(feats, axis=1)


def decode_batch(lib: FieldLibrary, z: Triplane, points):
    """Signed distances for (N, 3) points via the library decoder."""
    return lib.decoder.forward_np(interpolate_batch(z, points))[:, 0]


def decode_sdf(lib: FieldLibrary, z: Triplane, point):
    return float(decode_batch(lib, z, np.asarray(point)[None])[0])


def tv_graph(plane_tensor):
    """Anisotropic total variation: L1 of forward differences on both axes,
    summed over channels."""
    dv = ad.getitem(plane_tensor, (slice(None), slice(1, None))) - ad.getitem(
        plane_tensor, (slice(None), slice(None, -1))
    )
    du = ad.getitem(plane_tensor, (slice(1, None),)) - ad.getitem(
        plane_tensor, (slice(None, -1),)
    )
    return ad.tsum(ad.tabs(du)) + ad.tsum(ad.tabs(dv))


def total_variation(plane):
    """Numpy evaluation of the same TV definition."""
    return float(
        np.abs(np.diff(plane, axis=0)).sum() + np.abs(np.diff(plane, axis=1)).sum()
    )


def fit_loss_graph(plane_tensors, decoder, p, n, points, distances, alpha_tv):
    """One object's L1 reconstruction + TV loss as an autodiff graph."""
    latents = interpolate_graph(plane_tensors, p, n, points)
    pred = decoder.forward(latents)
    loss = ad.tsum(ad.tabs(pred - distances[:, None]))
    if alpha_tv:
        for pl in plane_tensors:
            loss = loss + alpha_tv * tv_graph(pl)
    return loss


def fit_triplanes(
    samples,
    cfg: TrainConfig,
    alpha_tv=0.01,
    p=4,
    n=8,
    decoder_widths=None,
    points_per_epoch=5000,
    init_std=0.05,
    callback=None,
):
    """Jointly optimize per-object planes and a shared decoder.

    One optimizer step per epoch on a fresh random subsample of each
    object's supervision points. The recorded loss is the per-point mean of
    the L1 term plus the TV penalty.
    """
    if not samples:
        raise UsageError("need at least one SdfSampleSet")
    side = 2**p
    rng = np.random.default_rng(cfg.seed)
    widths = decoder_widths or (3 * n, 128, 128, 1)
    if widths[0] != 3 * n:
        raise UsageError("decoder input width must equal 3n")
    decoder = Mlp(widths, rng=rng)
    plane_params = [
        [
            ad.Tensor(rng.normal(0.0, init_std, size=(side, side, n)), requires_grad=True)
            for _ in range(3)
        ]
        for _ in samples
    ]
    params = [t for obj in plane_params for t in obj] + decoder.parameters()
    opt = Adam(params, cfg)
    history = []
    for epoch in range(cfg.total_steps):
        opt.zero_grad()
        total = None
        count = 0
        for sample, planes in zip(samples, plane_params):
            m = len(sample.points)
            take = min(points_per_epoch, m)
            sel = rng.choice(m, size=take, replace=False)
            loss = fit_loss_graph(
                planes, decoder, p, n, sample.points[sel], sample.distances[sel], alpha_tv
            )
            total = loss if total is None else total + loss
            count += take
        mean_loss = float(total.data) / count
        if not np.isfinite(mean_loss):
            raise DivergenceError("non-finite fitting loss", step=epoch)
        total.backward()
        opt.step()
        history.append(mean_loss)
        if callback:
            callback(epoch, mean_loss)
    triplanes = [
        Triplane(p, n, [t.data.copy() for t in planes]) for planes in plane_params
    ]
    return FieldLibrary(
        triplanes=triplanes,
        decoder=decoder,
        final_loss=history[-1] if history else None,
        loss_history=history,
    )


# -- normalization ---------------------------------------------------------


def compute_ref_std(triplanes):
    """Per-channel std over the library; channel order (XY, XZ, YZ)."""
    stacks = [
        np.concatenate([z.planes[k].reshape(-1, z.n) for z in triplanes])
        for k in range(3)
    ]
    return np.concatenate([s.std(axis=0) for s in stacks])


def normalize_triplane(z: Triplane, ref_std):
    """Scale each channel toward std 0.2 and clip to [-1, 1].

    Channels whose reference std is below 1e-8 are left unscaled.
    """
    ref_std = np.asarray(ref_std, dtype=np.float64)
    planes = []
    for k, plane in enumerate(z.planes):
        std = ref_std[k * z.n : (k + 1) * z.n]
        scale = np.where(std < 1e-8, 1.0, TARGET_STD / np.maximum(std, 1e-30))
        planes.append(np.clip(plane * scale, -1.0, 1.0))
    return Triplane(z.p, z.n, planes)


def denormalize_triplane(z: Triplane, ref_std):
    """Inverse scaling (clipping is not undone)."""
    ref_std = np.asarray(ref_std, dtype=np.float64)
    planes = []
    for k, plane in enumerate(z.planes):
        std = ref_std[k * z.n : (k + 1) * z.n]
        scale = np.where(std < 1e-8, 1.0, TARGET_STD / np.maximum(std, 1e-30))
        planes.append(plane / scale)
    return Triplane(z.p, z.n, planes)


# -- image layout ----------------------------------------------------------


def to_image_layout(z: Triplane):
    """Stack the three planes channel-wise into a (2^p, 2^p, 3n) image."""
    return np.concatenate(z.planes, axis=2)


def from_image_layout(img, p, n):
    side = 2**p
    img = np.asarray(img)
    if img.shape != (side, side, 3 * n):
        raise UsageError(f"image layout shape {img.shape} != {(side, side, 3 * n)}")
    return Triplane(p, n, [img[:, :, k * n : (k + 1) * n].copy() for k in range(3)])


# -- file format -----------------------------------------------------------
# magic "TPL1", uint32 p, uint32 n, float32 ref_std x 3n, then the three
# planes as float32 little-endian row-major.

TPL_MAGIC = b"TPL1"


def save_triplane(path, z: Triplane, ref_std=None):
    side = 2**z.p
    ref = np.zeros(3 * z.n) if ref_std is None else np.asarray(ref_std)
    if ref.shape != (3 * z.n,):
        raise UsageError("ref_std must have 3n entries")
    with open(path, "wb") as f:
        f.write(TPL_MAGIC)
        f.write(struct.pack("<II", z.p, z.n))
        f.write(ref.astype("<f4").tobytes())
        for plane in z.planes:
            f.write(np.ascontiguousarray(plane).astype("<f4").tobytes())


def load_triplane(path):
    with open(path, "rb") as f:
        if f.read(4) != TPL_MAGIC:
            raise UsageError(f"{path} is not a triplane file")
        p, n = struct.unpack("<II", f.read(8))
        side = 2**p
        ref = np.frombuffer(f.read(4 * 3 * n), dtype="<f4").astype(np.float64)
        planes = []
        for _ in range(3):
            raw = np.frombuffer(f.read(4 * side * side * n), dtype="<f4")
            planes.append(raw.astype(np.float64).reshape(side, side, n))
    return Triplane(p, n, planes), ref
