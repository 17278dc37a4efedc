"""Trainable conv denoisers: wiring, dropout, overfit, exact resume."""

import numpy as np
import pytest

from probshape.denoisers import (
    TIME_CHANNELS,
    ConvDenoiser,
    _apply_dropout,
    load_training_state,
    save_training_state,
    time_embedding,
    train_denoiser,
)
from probshape.diffusion import NoiseSchedule, dpm_solver_pp_sample
from probshape.errors import UsageError
from probshape.nn import Adam, TrainConfig


def small_sched():
    return NoiseSchedule(T=50)


def test_time_embedding_shape_and_range():
    emb = time_embedding(7, 50, 4, 4)
    assert emb.shape == (TIME_CHANNELS, 4, 4)
    assert np.abs(emb).max() <= 1.0
    # constant over space, distinct over time
    assert np.all(emb == emb[:, :1, :1])
    assert not np.allclose(time_embedding(7, 50, 4, 4), time_embedding(8, 50, 4, 4))


def test_unknown_kind_rejected():
    with pytest.raises(UsageError):
        ConvDenoiser(6, 4, 100, kind="transformer")


def test_zero_init_predicts_zero_noise():
    net = ConvDenoiser(6, 4, 50, kind="down-up", hidden=8, seed=0)
    rng = np.random.default_rng(0)
    u = rng.standard_normal((6, 8, 8))
    cond = rng.standard_normal((4, 8, 8))
    assert np.all(net.epsilon(u, 10, cond) == 0.0)


def test_epsilon_shapes_single_and_batch():
    net = ConvDenoiser(6, 4, 50, kind="plain", hidden=8, seed=1)
    rng = np.random.default_rng(1)
    single = net.epsilon(rng.standard_normal((6, 8, 8)), 5, rng.standard_normal((4, 8, 8)))
    assert single.shape == (6, 8, 8)
    batch = net.epsilon(
        rng.standard_normal((3, 6, 8, 8)), [5, 9, 2], rng.standard_normal((3, 4, 8, 8))
    )
    assert batch.shape == (3, 6, 8, 8)


def test_null_conditioning_equals_zero_cond():
    net = ConvDenoiser(6, 4, 50, kind="plain", hidden=8, seed=2)
    # give the net nonzero output weights
    rng = np.random.default_rng(2)
    for p in net.parameters():
        p.data += rng.normal(0, 0.05, size=p.data.shape)
    u = rng.standard_normal((6, 8, 8))
    a = net.epsilon(u, 3, net.null_conditioning())
    b = net.epsilon(u, 3, np.zeros((4, 8, 8)))
    assert np.allclose(a, b)


def test_dropout_all_and_slice():
    rng = np.random.default_rng(3)
    cond = np.ones((2000, 4, 2, 2))
    out = _apply_dropout(cond, rng, drop_all_prob=0.2, drop_slice=None, drop_slice_prob=0)
    frac = (out.reshape(2000, -1).max(axis=1) == 0).mean()
    assert abs(frac - 0.2) < 0.03
    out = _apply_dropout(cond, rng, 0.0, (1, 4), 0.5)
    zeroed = (out[:, 1:].reshape(2000, -1).max(axis=1) == 0)
    untouched = (out[:, 0].reshape(2000, -1).min(axis=1) == 1.0)
    assert np.all(untouched)
    assert abs(zeroed.mean() - 0.5) < 0.04


def test_training_reduces_loss():
    sched = small_sched()
    rng = np.random.default_rng(4)
    states = np.tile(rng.standard_normal((1, 4, 8, 8)), (8, 1, 1, 1)) * 0.5
    conds = np.zeros((8, 2, 8, 8))
    net = ConvDenoiser(4, 2, sched.T, kind="plain", hidden=12, seed=4)
    cfg = TrainConfig(peak_lr=0.005, warmup_steps=10, total_steps=120, batch_size=4, seed=4)
    history, _, _ = train_denoiser(net, states, conds, sched, cfg)
    assert np.mean(history[-20:]) < np.mean(history[:20]) * 0.7


def test_save_load_roundtrip(tmp_path):
    net = ConvDenoiser(6, 4, 50, kind="down-up", hidden=8, seed=5)
    rng = np.random.default_rng(5)
    for p in net.parameters():
        p.data += rng.normal(0, 0.05, size=p.data.shape)
    path = tmp_path / "net.npz"
    net.save(path)
    back = ConvDenoiser.load(path)
    u = rng.standard_normal((6, 8, 8))
    cond = rng.standard_normal((4, 8, 8))
    assert np.array_equal(back.epsilon(u, 9, cond), net.epsilon(u, 9, cond))
    assert back.kind == "down-up" and back.hidden == 8


def test_resume_is_bit_exact(tmp_path):
    """Train 40 steps straight vs 20 + checkpoint + 20: same weights."""
    sched = small_sched()
    rng_data = np.random.default_rng(6)
    states = rng_data.standard_normal((10, 4, 8, 8))
    conds = rng_data.standard_normal((10, 2, 8, 8))
    cfg = TrainConfig(peak_lr=0.003, warmup_steps=5, total_steps=40, batch_size=4, seed=6)

    net_a = ConvDenoiser(4, 2, sched.T, kind="plain", hidden=8, seed=6)
    train_denoiser(net_a, states, conds, sched, cfg)

    net_b = ConvDenoiser(4, 2, sched.T, kind="plain", hidden=8, seed=6)
    opt = Adam(net_b.parameters(), cfg)
    rng = np.random.default_rng(cfg.seed)
    half = TrainConfig(peak_lr=0.003, warmup_steps=5, total_steps=20, batch_size=4, seed=6)
    _, opt, rng = train_denoiser(net_b, states, conds, sched, half, opt=opt, rng=rng)
    save_training_state(tmp_path / "ck.npz", net_b, opt, rng, 20)

    net_c, opt_c, rng_c, step = load_training_state(tmp_path / "ck.npz", cfg)
    assert step == 20
    train_denoiser(net_c, states, conds, sched, cfg, opt=opt_c, rng=rng_c, start_step=20)

    for ka, kc in zip(net_a.params, net_c.params):
        assert np.array_equal(net_a.params[ka].data, net_c.params[kc].data)


def test_sampling_with_trained_denoiser_runs():
    sched = small_sched()
    net = ConvDenoiser(4, 2, sched.T, kind="plain", hidden=8, seed=7)
    rng = np.random.default_rng(7)
    out = dpm_solver_pp_sample(
        net, rng.standard_normal((2, 8, 8)), sched, 8, rng=rng, shape=(4, 8, 8)
    )
    assert out.shape == (4, 8, 8)
    assert np.all(np.isfinite(out))
