"""Finite-difference checks for the reverse-mode engine."""

import numpy as np
import pytest

from probshape import autodiff as ad
from probshape.errors import ShapeMismatchError, UsageError


def numeric_grad(fn, x, eps=1e-6):
    """Central differences of a scalar-valued fn at x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = fn(x)
        flat[i] = old - eps
        lo = fn(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2 * eps)
    return g


def check_op(build, x0, tol=1e-6):
    """Compare autodiff gradient of build(Tensor) against finite differences."""
    t = ad.Tensor(x0.copy(), requires_grad=True)
    loss = build(t)
    loss.backward()
    num = numeric_grad(lambda x: float(build(ad.Tensor(x)).data), x0.copy())
    assert np.abs(t.grad - num).max() < tol, np.abs(t.grad - num).max()


def test_add_mul_broadcast():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 4))
    b = rng.standard_normal(4)
    check_op(lambda t: ad.tsum(ad.mul(ad.add(t, b), 2.5) ** 2.0), x)


def test_broadcast_gradient_reduces():
    # a (1, 4) tensor broadcast against (3, 4) must get a summed gradient
    a = ad.Tensor(np.ones((1, 4)), requires_grad=True)
    b = ad.Tensor(np.ones((3, 4)), requires_grad=True)
    ad.tsum(a * b).backward()
    assert a.grad.shape == (1, 4)
    assert np.allclose(a.grad, 3.0)
    assert np.allclose(b.grad, 1.0)


def test_power_exp_abs():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(7) + 2.0  # keep away from 0 for |.| and powers
    check_op(lambda t: ad.tsum(ad.power(t, 3.0)), x)
    check_op(lambda t: ad.tsum(ad.texp(ad.mul(t, 0.3))), x)
    check_op(lambda t: ad.tsum(ad.tabs(t - 1.0)), x)


def test_abs_subgradient_at_zero():
    t = ad.Tensor(np.zeros(3), requires_grad=True)
    ad.tsum(ad.tabs(t)).backward()
    assert np.allclose(t.grad, 0.0)


def test_leaky_relu():
    x = np.array([-2.0, -0.5, 0.3, 1.7])
    t = ad.Tensor(x, requires_grad=True)
    out = ad.leaky_relu(t, 0.01)
    assert np.allclose(out.data, np.where(x > 0, x, 0.01 * x))
    ad.tsum(out).backward()
    assert np.allclose(t.grad, np.where(x > 0, 1.0, 0.01))


def test_reductions_and_axis():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 3, 4))
    check_op(lambda t: ad.tsum(ad.tmean(t, axis=1) ** 2.0), x)
    check_op(lambda t: ad.tsum(ad.tmean(t, axis=(0, 2)) ** 2.0), x)
    check_op(lambda t: ad.tmean(t ** 2.0), x)


def test_mean_tuple_axis_value():
    x = np.arange(24.0).reshape(2, 3, 4)
    out = ad.tmean(ad.Tensor(x), axis=(0, 2))
    assert np.allclose(out.data, x.mean(axis=(0, 2)))


def test_reshape_transpose_concat():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 6))
    check_op(lambda t: ad.tsum(ad.reshape(t, (3, 4)) ** 2.0), x)
    check_op(lambda t: ad.tsum(ad.transpose(t, (1, 0)) ** 2.0), x)
    check_op(
        lambda t: ad.tsum(ad.concat([t, ad.mul(t, 2.0)], axis=1) ** 2.0), x
    )


def test_getitem_take_flat_scatter():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 3))
    idx = np.array([0, 2, 2, 4])  # repeated row: gradients must accumulate
    check_op(lambda t: ad.tsum(ad.getitem(t, (idx,)) ** 2.0), x)
    flat_idx = np.array([1, 7, 7, 14])
    check_op(lambda t: ad.tsum(ad.take_flat(t, flat_idx) ** 2.0), x)


def test_matmul_variants():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    v = rng.standard_normal(4)
    check_op(lambda t: ad.tsum(ad.matmul(t, b) ** 2.0), a)
    tb = ad.Tensor(b.copy(), requires_grad=True)
    loss = ad.tsum(ad.matmul(ad.Tensor(a), tb) ** 2.0)
    loss.backward()
    num = numeric_grad(
        lambda x: float(ad.tsum(ad.matmul(ad.Tensor(a), ad.Tensor(x)) ** 2.0).data),
        b.copy(),
    )
    assert np.abs(tb.grad - num).max() < 1e-6
    check_op(lambda t: ad.tsum(ad.matmul(t, ad.Tensor(v)) ** 2.0), a)


def test_conv2d_forward_oracle():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), stride=1, padding=1).data
    # direct loop oracle
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 5, 5))
    for n in range(2):
        for f in range(4):
            for i in range(5):
                for j in range(5):
                    ref[n, f, i, j] = (xp[n, :, i : i + 3, j : j + 3] * w[f]).sum()
    assert np.abs(out - ref).max() < 1e-12


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_gradients(stride, padding):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 2, 6, 6))
    w = rng.standard_normal((3, 2, 3, 3))

    def loss_x(xx):
        return ad.tsum(ad.conv2d(ad.Tensor(xx), ad.Tensor(w), stride, padding) ** 2.0)

    tx = ad.Tensor(x.copy(), requires_grad=True)
    tw = ad.Tensor(w.copy(), requires_grad=True)
    ad.tsum(ad.conv2d(tx, tw, stride, padding) ** 2.0).backward()
    num_x = numeric_grad(lambda xx: float(loss_x(xx).data), x.copy())
    assert np.abs(tx.grad - num_x).max() < 1e-5

    def loss_w(ww):
        return ad.tsum(ad.conv2d(ad.Tensor(x), ad.Tensor(ww), stride, padding) ** 2.0)

    num_w = numeric_grad(lambda ww: float(loss_w(ww).data), w.copy())
    assert np.abs(tw.grad - num_w).max() < 1e-5


def test_upsample_nearest2x():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((1, 2, 3, 3))
    out = ad.upsample_nearest2x(ad.Tensor(x)).data
    assert out.shape == (1, 2, 6, 6)
    assert np.allclose(out[0, 0, :2, :2], x[0, 0, 0, 0])
    check_op(lambda t: ad.tsum(ad.upsample_nearest2x(t) ** 2.0), x)


def test_no_grad_blocks_graph():
    t = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        out = ad.tsum(t * 2.0)
    assert out._backward is None
    assert out._parents == ()


def test_backward_needs_scalar():
    t = ad.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        (t * 2.0).backward()


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeMismatchError):
        ad.conv2d(ad.Tensor(np.zeros((1, 2, 4, 4))), ad.Tensor(np.zeros((1, 3, 3, 3))))


def test_diamond_graph_accumulation():
    # y = x*x + x*x reuses the same node twice
    t = ad.Tensor(np.array([3.0]), requires_grad=True)
    sq = t * t
    ad.tsum(sq + sq).backward()
    assert np.allclose(t.grad, 12.0)
