"""Trainable convolutional denoisers and their training loop.

Two tiny architectures cover the desk-scale stages: an encoder-decoder with
one downsampling level for image-like coordinate maps, and a plain three-
layer net for triplane images. Conditioning and a sinusoidal timestep
embedding enter via channel concatenation; the null conditioning token is
all zeros.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .diffusion import Denoiser, NoiseSchedule, forward_sample
from .errors import DivergenceError, UsageError
from .nn import Adam, TrainConfig

TIME_FREQS = (1.0, 2.0, 4.0, 8.0)
TIME_CHANNELS = 2 * len(TIME_FREQS)


def time_embedding(t, T, h, w):
    """(TIME_CHANNELS, h, w) constant planes encoding t/T sinusoidally."""
    tau = 2.0 * np.pi * (t / T)
    vals = []
    for f in TIME_FREQS:
        vals += [np.sin(tau * f), np.cos(tau * f)]
    return np.broadcast_to(np.array(vals)[:, None, None], (TIME_CHANNELS, h, w)).copy()


def _conv_param(rng, f, c, k):
    scale = np.sqrt(2.0 / (c * k * k))
    return ad.Tensor(rng.normal(0.0, scale, size=(f, c, k, k)), requires_grad=True)


def _bias(f):
    return ad.Tensor(np.zeros((1, f, 1, 1)), requires_grad=True)


class ConvDenoiser(Denoiser):
    """Small conv net predicting noise from (state, conditioning, t)."""

    def __init__(self, state_channels, cond_channels, T, kind="down-up", hidden=32, seed=0):
        if kind not in ("down-up", "plain"):
            raise UsageError(f"unknown denoiser kind {kind!r}")
        self.flavor = "trained-conv"
        self.state_channels = state_channels
        self.cond_channels = cond_channels
        self.T = T
        self.kind = kind
        self.hidden = hidden
        rng = np.random.default_rng(seed)
        c_in = state_channels + cond_channels + TIME_CHANNELS
        h = hidden
        self.params = {}
        if kind == "down-up":
            spec = [
                ("c1", h, c_in), ("c2", h + h // 2, h), ("c3", h + h // 2, h + h // 2),
                ("c4", h, h + h // 2 + h), ("c5", state_channels, h),
            ]
        else:
            spec = [
                ("c1", h, c_in), ("c2", h, h), ("c3", state_channels, h),
            ]
        for name, f, c in spec:
            self.params[name + "_w"] = _conv_param(rng, f, c, 3)
            self.params[name + "_b"] = _bias(f)
        # zero-init the output layer so the initial prediction is zero noise
        self.params[spec[-1][0] + "_w"].data[:] = 0.0

    def parameters(self):
        return list(self.params.values())

    def null_conditioning(self):
        return 0.0  # broadcastable zeros

    def _assemble(self, u_t, t, cond):
        """Stack state, conditioning and time planes into (N, C, H, W)."""
        u = np.asarray(u_t, dtype=np.float64)
        batched = u.ndim == 4
        if not batched:
            u = u[None]
        n, _, hh, ww = u.shape
        if cond is None:
            cond = 0.0
        if np.isscalar(cond) or np.asarray(cond).ndim == 0:
            cond_arr = np.zeros((n, self.cond_channels, hh, ww))
        else:
            cond_arr = np.asarray(cond, dtype=np.float64)
            if cond_arr.ndim == 3:
                cond_arr = np.broadcast_to(cond_arr[None], (n,) + cond_arr.shape).copy()
        ts = np.broadcast_to(np.asarray(t), (n,))
        temb = np.stack([time_embedding(tt, self.T, hh, ww) for tt in ts])
        return np.concatenate([u, cond_arr, temb], axis=1), batched

    def forward(self, x):
        """Graph-recording forward on an assembled (N, C, H, W) Tensor."""
        p = self.params
        act = lambda v: ad.leaky_relu(v, 0.01)
        if self.kind == "down-up":
            h1 = act(ad.conv2d(x, p["c1_w"], padding=1) + p["c1_b"])
            h2 = act(ad.conv2d(h1, p["c2_w"], stride=2, padding=1) + p["c2_b"])
            h3 = act(ad.conv2d(h2, p["c3_w"], padding=1) + p["c3_b"])
            up = upsampled = ad.upsample_nearest2x(h3)
            cat = ad.concat([up, h1], axis=1)
            h4 = act(ad.conv2d(cat, p["c4_w"], padding=1) + p["c4_b"])
            return ad.conv2d(h4, p["c5_w"], padding=1) + p["c5_b"]
        h1 = act(ad.conv2d(x, p["c1_w"], padding=1) + p["c1_b"])
        h2 = act(ad.conv2d(h1, p["c2_w"], padding=1) + p["c2_b"])
        return ad.conv2d(h2, p["c3_w"], padding=1) + p["c3_b"]

    def epsilon(self, u_t, t, cond=None):
        x, batched = self._assemble(u_t, t, cond)
        with ad.no_grad():
            out = self.forward(ad.Tensor(x)).data
        return out if batched else out[0]

    # -- persistence -------------------------------------------------------

    def save(self, path):
        arrays = {k: v.data for k, v in self.params.items()}
        np.savez(
            path,
            __meta__=np.frombuffer(
                json.dumps(
                    {
                        "state_channels": self.state_channels,
                        "cond_channels": self.cond_channels,
                        "T": self.T,
                        "kind": self.kind,
                        "hidden": self.hidden,
                    }
                ).encode(),
                dtype=np.uint8,
            ),
            **arrays,
        )

    @classmethod
    def load(cls, path):
        data = np.load(path)
        meta = json.loads(bytes(data["__meta__"]).decode())
        net = cls(
            meta["state_channels"], meta["cond_channels"], meta["T"],
            kind=meta["kind"], hidden=meta["hidden"],
        )
        for k in net.params:
            net.params[k].data = data[k].astype(np.float64)
        return net


def _apply_dropout(cond_batch, rng, drop_all_prob, drop_slice, drop_slice_prob):
    """Zero conditioning per sample; returns a modified copy."""
    out = cond_batch.copy()
    for i in range(len(out)):
        if drop_all_prob > 0 and rng.random() < drop_all_prob:
            out[i] = 0.0
        elif drop_slice is not None and rng.random() < drop_slice_prob:
            lo, hi = drop_slice
            out[i, lo:hi] = 0.0
    return out


def train_denoiser(
    model: ConvDenoiser,
    states,
    conds,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    drop_all_prob=0.0,
    drop_slice=None,
    drop_slice_prob=0.0,
    callback=None,
    opt=None,
    rng=None,
    start_step=0,
):
    """Noise-matching training over (state, conditioning) pairs.

    states: (N, C, H, W); conds: (N, Cc, H, W). One optimizer step per
    training step on a random batch; returns (loss_history, optimizer, rng)
    so callers can checkpoint and resume exactly.
    """
    states = np.asarray(states, dtype=np.float64)
    conds = np.asarray(conds, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if opt is None:
        opt = Adam(model.parameters(), cfg)
    history = []
    n = len(states)
    for step in range(start_step, cfg.total_steps):
        idx = rng.integers(0, n, size=cfg.batch_size)
        u0 = states[idx]
        cond = _apply_dropout(conds[idx], rng, drop_all_prob, drop_slice, drop_slice_prob)
        t = rng.integers(1, sched.T + 1, size=cfg.batch_size)
        eps = rng.standard_normal(u0.shape)
        ab = sched.alpha_bars[t - 1][:, None, None, None]
        u_t = np.sqrt(ab) * u0 + np.sqrt(1.0 - ab) * eps
        x, _ = model._assemble(u_t, t, cond)
        opt.zero_grad()
        pred = model.forward(ad.Tensor(x))
        loss = ad.tmean((pred - eps) ** 2)
        val = float(loss.data)
        if not np.isfinite(val):
            raise DivergenceError("non-finite training loss", step=step)
        loss.backward()
        opt.step()
        history.append(val)
        if callback:
            callback(step, val)
    return history, opt, rng


def save_training_state(path, model, opt, rng, step):
    """Checkpoint model + optimizer + RNG so resume is bit-exact."""
    arrays = {f"p_{k}": v.data for k, v in model.params.items()}
    for i, a in enumerate(opt.state.m):
        arrays[f"m_{i}"] = a
    for i, a in enumerate(opt.state.v):
        arrays[f"v_{i}"] = a
    meta = {
        "step": step,
        "opt_step": opt.state.step,
        "rng_state": rng.bit_generator.state,
        "model": {
            "state_channels": model.state_channels,
            "cond_channels": model.cond_channels,
            "T": model.T,
            "kind": model.kind,
            "hidden": model.hidden,
        },
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_training_state(path, cfg: TrainConfig):
    data = np.load(path)
    meta = json.loads(bytes(data["__meta__"]).decode())
    m = meta["model"]
    model = ConvDenoiser(
        m["state_channels"], m["cond_channels"], m["T"], kind=m["kind"], hidden=m["hidden"]
    )
    for k in model.params:
        model.params[k].data = data[f"p_{k}"].astype(np.float64)
    opt = Adam(model.parameters(), cfg)
    nparams = len(model.parameters())
    names = list(model.params.keys())
    opt.state.m = [data[f"m_{i}"].astype(np.float64) for i in range(nparams)]
    opt.state.v = [data[f"v_{i}"].astype(np.float64) for i in range(nparams)]
    opt.state.step = meta["opt_step"]
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    return model, opt, rng, meta["step"]
