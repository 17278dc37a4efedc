"""Multilayer perceptron, Adam with warmup-plus-cosine decay, checkpoints."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatchError, UsageError

LEAKY_SLOPE = 0.01


@dataclass
class TrainConfig:
    peak_lr: float
    warmup_steps: int
    total_steps: int
    batch_size: int
    seed: int

    def __post_init__(self):
        if self.peak_lr <= 0:
            raise UsageError("peak_lr must be positive")
        if self.warmup_steps > self.total_steps:
            raise UsageError("warmup_steps must not exceed total_steps")


def lr_at(step, cfg: TrainConfig):
    """Linear warmup to peak_lr, then cosine decay to 0 at total_steps."""
    if step < cfg.warmup_steps:
        return cfg.peak_lr * step / cfg.warmup_steps
    span = max(cfg.total_steps - cfg.warmup_steps, 1)
    frac = (step - cfg.warmup_steps) / span
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


class Mlp:
    """Dense net with leaky-rectifier activations between layers.

    The final layer is a plain affine map. Weights are float64 Tensors;
    ``forward`` accepts a single vector or an (N, in_width) batch.
    """

    def __init__(self, layer_widths, rng=None, init_scale=None):
        if len(layer_widths) < 2:
            raise UsageError("need at least an input and an output width")
        self.layer_widths = list(layer_widths)
        self.weights = []
        self.biases = []
        rng = rng if rng is not None else np.random.default_rng(0)
        for fan_in, fan_out in zip(layer_widths[:-1], layer_widths[1:]):
            scale = init_scale if init_scale is not None else math.sqrt(2.0 / fan_in)
            w = ad.Tensor(rng.normal(0.0, scale, size=(fan_in, fan_out)), requires_grad=True)
            b = ad.Tensor(np.zeros(fan_out), requires_grad=True)
            self.weights.append(w)
            self.biases.append(b)

    def parameters(self):
        return self.weights + self.biases

    def forward(self, x):
        """Graph-recording forward; x may be a Tensor or ndarray."""
        h = ad.astensor(x)
        expect = self.layer_widths[0]
        if h.data.shape[-1] != expect:
            raise ShapeMismatchError(
                f"input width {h.data.shape[-1]} != layer width {expect}"
            )
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.matmul(h, w) + b
            if i != last:
                h = ad.leaky_relu(h, LEAKY_SLOPE)
        return h

    def forward_np(self, x):
        """Plain numpy forward for inference on (N, in_width) batches."""
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i != last:
                h = np.where(h > 0, h, LEAKY_SLOPE * h)
        return h


def mlp_forward(net: Mlp, x):
    """Evaluate the net on one input vector, returning an output vector."""
    return net.forward_np(np.asarray(x, dtype=np.float64))


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0


class Adam:
    """Adam with the package-wide warmup + cosine learning-rate schedule."""

    def __init__(self, params, cfg: TrainConfig, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.cfg = cfg
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState(
            m=[np.zeros_like(p.data) for p in self.params],
            v=[np.zeros_like(p.data) for p in self.params],
        )

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        st = self.state
        st.step += 1
        lr = lr_at(st.step, self.cfg)
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**st.step
        c2 = 1.0 - b2**st.step
        for p, m, v in zip(self.params, st.m, st.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeMismatchError("gradient shape mismatch in Adam step")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        """Flat list of state arrays for checkpointing."""
        return self.state.m + self.state.v

    def load_state_arrays(self, arrays, step):
        n = len(self.params)
        self.state.m = [np.array(a, dtype=np.float64) for a in arrays[:n]]
        self.state.v = [np.array(a, dtype=np.float64) for a in arrays[n:]]
        self.state.step = step


# -- checkpoint format ------------------------------------------------------
# magic "NNC1", uint32 layer count L, L uint32 widths, then float32
# little-endian weights and biases in layer order.

MAGIC = b"NNC1"


def save_mlp(path, net: Mlp):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(net.layer_widths)))
        f.write(struct.pack(f"<{len(net.layer_widths)}I", *net.layer_widths))
        for w, b in zip(net.weights, net.biases):
            f.write(w.data.astype("<f4").tobytes())
            f.write(b.data.astype("<f4").tobytes())


def load_mlp(path):
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise UsageError(f"{path} is not a parameter checkpoint")
        (count,) = struct.unpack("<I", f.read(4))
        widths = struct.unpack(f"<{count}I", f.read(4 * count))
        net = Mlp(widths)
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = np.frombuffer(f.read(4 * fan_in * fan_out), dtype="<f4")
            b = np.frombuffer(f.read(4 * fan_out), dtype="<f4")
            net.weights[i].data = w.astype(np.float64).reshape(fan_in, fan_out)
            net.biases[i].data = b.astype(np.float64)
    return net
