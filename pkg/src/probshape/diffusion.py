"""Noise schedules, diffusion objectives and samplers.

Both generative stages share a linear variance schedule. Sampling supports
the stochastic ancestral reverse chain and a deterministic second-order
multistep solver on the probability-flow ODE in log-SNR time, with optional
classifier-free guidance. An analytic Gaussian-mixture denoiser provides a
closed-form oracle for validating the samplers.

For a mixture p_0 = sum_k w_k N(mu_k, s_k^2 I), the noised marginal at step
t is p_t = sum_k w_k N(a_t mu_k, (a_t^2 s_k^2 + 1 - a_t^2) I) with
a_t = sqrt(alpha_bar_t). The score is the responsibility-weighted sum of
per-component Gaussian scores, and the ideal noise prediction is
eps* = -sqrt(1 - alpha_bar_t) * grad log p_t(u).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ShapeMismatchError, UsageError


@dataclass
class NoiseSchedule:
    """Linear beta schedule with cached cumulative products.

    Index convention: arrays are 0-based, entry t-1 belongs to timestep t in
    1..T.
    """

    T: int = 1000
    beta_start: float = 0.0001
    beta_end: float = 0.02
    betas: np.ndarray = field(init=False)
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        self.betas = np.linspace(self.beta_start, self.beta_end, self.T)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)

    def alpha_bar(self, t):
        self._check_t(t)
        return self.alpha_bars[t - 1]

    def beta(self, t):
        self._check_t(t)
        return self.betas[t - 1]

    def _check_t(self, t):
        if np.any(t < 1) or np.any(t > self.T):
            raise UsageError(f"timestep must be in [1, {self.T}]")

    def log_snr(self, t):
        ab = self.alpha_bar(t)
        return 0.5 * (np.log(ab) - np.log1p(-ab))


def forward_sample(u0, t, eps, sched: NoiseSchedule):
    """Closed-form marginal u_t = sqrt(ab) u0 + sqrt(1 - ab) eps."""
    u0 = np.asarray(u0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if u0.shape != eps.shape:
        raise ShapeMismatchError("u0 and eps must share a shape")
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * u0 + np.sqrt(1.0 - ab) * eps


def cfg_epsilon(eps_cond, eps_uncond, w):
    """Classifier-free guidance: eps_uncond + w (eps_cond - eps_uncond)."""
    eps_cond = np.asarray(eps_cond)
    eps_uncond = np.asarray(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise ShapeMismatchError("guidance operands must share a shape")
    if w == 0:
        return eps_uncond.copy()
    if w == 1:
        return eps_cond.copy()
    return eps_uncond + w * (eps_cond - eps_uncond)


class Denoiser:
    """Interface: predict the unscaled noise in u_t at timestep t."""

    flavor = "abstract"

    def epsilon(self, u_t, t, cond=None):
        raise NotImplementedError

    def null_conditioning(self):
        """Conditioning payload representing 'no conditioning' (zeros)."""
        return None


@dataclass
class GaussianMixture:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    sigmas: np.ndarray  # (K,) isotropic std per component

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.sigmas = np.maximum(np.asarray(self.sigmas, dtype=np.float64), 0.0)

    def sample(self, count, rng):
        comp = rng.choice(len(self.weights), size=count, p=self.weights / self.weights.sum())
        return self.means[comp] + rng.standard_normal((count, self.means.shape[1])) * self.sigmas[
            comp, None
        ]


def mixture_score(u_t, t, mixture: GaussianMixture, sched: NoiseSchedule):
    """grad_u log p_t(u) for the noised mixture; u_t is (..., D)."""
    u = np.atleast_2d(np.asarray(u_t, dtype=np.float64))
    ab = sched.alpha_bar(t)
    a = np.sqrt(ab)
    var = np.maximum(ab * mixture.sigmas**2 + 1.0 - ab, 1e-12)  # (K,)
    diff = u[:, None, :] - a * mixture.means[None]  # (N, K, D)
    d = u.shape[-1]
    logw = (
        np.log(mixture.weights / mixture.weights.sum())[None]
        - 0.5 * (diff**2).sum(axis=2) / var[None]
        - 0.5 * d * np.log(2 * np.pi * var)[None]
    )
    logw -= logw.max(axis=1, keepdims=True)
    resp = np.exp(logw)
    resp /= resp.sum(axis=1, keepdims=True)
    score = -(resp[..., None] * diff / var[None, :, None]).sum(axis=1)
    return score.reshape(np.shape(u_t))


def analytic_mixture_epsilon(u_t, t, mixture: GaussianMixture, sched: NoiseSchedule):
    """Ideal noise prediction eps* = -sqrt(1 - ab) * score."""
    ab = sched.alpha_bar(t)
    return -np.sqrt(1.0 - ab) * mixture_score(u_t, t, mixture, sched)


class AnalyticMixtureDenoiser(Denoiser):
    """Oracle denoiser for data drawn from an isotropic Gaussian mixture."""

    flavor = "analytic-oracle"

    def __init__(self, mixture: GaussianMixture, sched: NoiseSchedule):
        self.mixture = mixture
        self.sched = sched

    def epsilon(self, u_t, t, cond=None):
        return analytic_mixture_epsilon(u_t, t, self.mixture, self.sched)


def training_loss(den, batch, sched: NoiseSchedule, rng, drop_prob=0.0):
    """Mean squared noise-matching error over a batch of (u0, cond) pairs.

    Each element draws its own uniform timestep and noise; with probability
    drop_prob the conditioning is replaced by the denoiser's null token.
    """
    total = 0.0
    count = 0
    for u0, cond in batch:
        u0 = np.asarray(u0, dtype=np.float64)
        t = int(rng.integers(1, sched.T + 1))
        eps = rng.standard_normal(u0.shape)
        if drop_prob > 0 and rng.random() < drop_prob:
            cond = den.null_conditioning()
        u_t = forward_sample(u0, t, eps, sched)
        pred = den.epsilon(u_t, t, cond)
        total += float(((pred - eps) ** 2).mean())
        count += 1
    return total / count


def _guided(den, u, t, cond, cfg_weight):
    if cfg_weight is None or cfg_weight == 1 or cond is None:
        return den.epsilon(u, t, cond)
    e_cond = den.epsilon(u, t, cond)
    e_unc = den.epsilon(u, t, den.null_conditioning())
    return cfg_epsilon(e_cond, e_unc, cfg_weight)


def ddpm_sample(den, cond, sched: NoiseSchedule, rng, shape=None, u_init=None, cfg_weight=None):
    """Ancestral reverse chain with the fixed-small variance choice
    sigma_t^2 = beta_t."""
    if u_init is None:
        if shape is None:
            raise UsageError("need shape or u_init")
        u = rng.standard_normal(shape)
    else:
        u = np.array(u_init, dtype=np.float64)
    for t in range(sched.T, 0, -1):
        eps = _guided(den, u, t, cond, cfg_weight)
        ab = sched.alpha_bar(t)
        alpha = sched.alphas[t - 1]
        beta = sched.betas[t - 1]
        u = (u - beta / np.sqrt(1.0 - ab) * eps) / np.sqrt(alpha)
        if t > 1:
            u = u + np.sqrt(beta) * rng.standard_normal(u.shape)
        if not np.all(np.isfinite(u)):
            raise DivergenceError("non-finite state during ancestral sampling", step=t)
    return u


def solver_timesteps(sched: NoiseSchedule, steps):
    """Discrete timesteps with near-uniform log-SNR spacing, T down to 1."""
    lam = 0.5 * (np.log(sched.alpha_bars) - np.log1p(-sched.alpha_bars))
    targets = np.linspace(lam[-1], lam[0], steps + 1)
    ts = []
    for target in targets:
        t = int(np.argmin(np.abs(lam - target))) + 1
        if ts and t >= ts[-1]:
            t = ts[-1] - 1
        if t < 1:
            break
        ts.append(t)
    if ts[-1] != 1:
        ts.append(1)
    return ts


def dpm_solver_pp_sample(
    den, cond, sched: NoiseSchedule, steps, rng=None, shape=None, u_init=None,
    cfg_weight=None, denoise_final=True,
):
    """Second-order multistep data-prediction solver (DPM-Solver++ 2M).

    Deterministic given the initial noise; timesteps are placed uniformly in
    log-SNR and snapped to the discrete schedule grid.
    """
    if steps < 2:
        raise UsageError("solver needs at least 2 steps")
    if u_init is None:
        if shape is None or rng is None:
            raise UsageError("need u_init, or shape plus rng")
        u = rng.standard_normal(shape)
    else:
        u = np.array(u_init, dtype=np.float64)

    ts = solver_timesteps(sched, steps)

    def x0_pred(u, t):
        eps = _guided(den, u, t, cond, cfg_weight)
        ab = sched.alpha_bar(t)
        return (u - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)

    lam = lambda t: sched.log_snr(t)
    alpha = lambda t: np.sqrt(sched.alpha_bar(t))
    sigma = lambda t: np.sqrt(1.0 - sched.alpha_bar(t))

    prev_x0 = None
    prev_h = None
    for i in range(1, len(ts)):
        s, t = ts[i - 1], ts[i]
        h = lam(t) - lam(s)
        x0 = x0_pred(u, s)
        if prev_x0 is None:
            d = x0
        else:
            r = prev_h / h
            d = (1.0 + 1.0 / (2.0 * r)) * x0 - (1.0 / (2.0 * r)) * prev_x0
        u = (sigma(t) / sigma(s)) * u - alpha(t) * np.expm1(-h) * d
        if not np.all(np.isfinite(u)):
            raise DivergenceError("non-finite state during ODE sampling", step=i)
        prev_x0, prev_h = x0, h
    if denoise_final:
        u = x0_pred(u, ts[-1])
    return u


@dataclass
class SampleRun:
    """Manifest describing one sampling invocation."""

    seed: int
    solver: str  # "ddpm" or "dpm-solver++"
    steps: int
    cfg_weight: float = 0.0
    conditioning_path: str | None = None

    def __post_init__(self):
        if self.solver not in ("ddpm", "dpm-solver++"):
            raise UsageError(f"unknown solver {self.solver!r}")
        if self.cfg_weight < 0:
            raise UsageError("cfg_weight must be nonnegative")

    def to_dict(self):
        return {
            "seed": self.seed,
            "solver": self.solver,
            "steps": self.steps,
            "cfg_weight": self.cfg_weight,
            "conditioning_path": self.conditioning_path,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def run_sampler(den, cond, sched, run: SampleRun, shape):
    """Dispatch on the manifest's solver choice."""
    rng = np.random.default_rng(run.seed)
    w = run.cfg_weight if run.cfg_weight > 0 else None
    if run.solver == "ddpm":
        if run.steps != sched.T:
            raise UsageError("ancestral sampling uses the full schedule")
        return ddpm_sample(den, cond, sched, rng, shape=shape, cfg_weight=w)
    return dpm_solver_pp_sample(
        den, cond, sched, run.steps, rng=rng, shape=shape, cfg_weight=w
    )
