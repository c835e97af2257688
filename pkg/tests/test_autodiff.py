import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fourierpet.autodiff import AdamW, Tensor, backward, cosine_lr, no_grad, ops
from fourierpet.autodiff.optim import adamw_step
from oracles import adamw_reference, finite_difference_check

rng = np.random.default_rng(0)


def _r(*shape):
    return rng.standard_normal(shape)


def _pos(*shape):
    return np.abs(rng.standard_normal(shape)) + 0.5


def _sum_pair(pair, wim=2.0):
    re, im = pair
    return re + wim * im


# (name, function over a list of tensors, input arrays)
OP_CASES = [
    ("add", lambda t: t[0] + t[1], [_r(3, 4), _r(4)]),
    ("sub", lambda t: t[0] - t[1], [_r(3, 4), _r(3, 1)]),
    ("mul", lambda t: t[0] * t[1], [_r(3, 4), _r(4)]),
    ("div", lambda t: t[0] / t[1], [_r(3, 4), _pos(3, 4)]),
    ("power", lambda t: t[0] ** 3, [_r(5)]),
    ("matmul", lambda t: t[0] @ t[1], [_r(2, 3, 4), _r(4, 5)]),
    ("sum_axis", lambda t: t[0].sum(axis=1, keepdims=True), [_r(2, 3, 4)]),
    ("mean", lambda t: t[0].mean(axis=(0, 2)), [_r(2, 3, 4)]),
    ("reshape_transpose", lambda t: ops.transpose(t[0].reshape(4, 6), (1, 0)), [_r(2, 3, 4)]),
    ("getitem_fancy", lambda t: t[0][:, [0, 0, 2]], [_r(2, 3)]),
    ("getitem_slice", lambda t: t[0][1:, ::2], [_r(3, 5)]),
    ("concat", lambda t: ops.concat([t[0], t[1]], axis=1), [_r(2, 3), _r(2, 2)]),
    ("stack", lambda t: ops.stack([t[0], t[1]], axis=1), [_r(2, 3), _r(2, 3)]),
    ("where", lambda t: ops.where(np.array([True, False, True]), t[0], t[1]), [_r(3), _r(3)]),
    ("exp", lambda t: ops.exp(t[0]), [_r(5)]),
    ("log", lambda t: ops.log(t[0]), [_pos(5)]),
    ("log1p", lambda t: ops.log1p(t[0]), [_pos(5)]),
    ("sqrt", lambda t: ops.sqrt(t[0]), [_pos(5)]),
    ("abs", lambda t: ops.abs(t[0]), [_pos(5) * np.array([1, -1, 1, -1, 1])]),
    ("relu", lambda t: ops.relu(t[0]), [_pos(5) * np.array([1, -1, 1, -1, 1])]),
    ("sigmoid", lambda t: ops.sigmoid(t[0]), [_r(6)]),
    ("gelu", lambda t: ops.gelu(t[0]), [_r(6)]),
    ("cos", lambda t: ops.cos(t[0]), [_r(6)]),
    ("sin", lambda t: ops.sin(t[0]), [_r(6)]),
    ("atan2", lambda t: ops.atan2(t[0], t[1]), [_r(6), _pos(6)]),
    ("complex_abs", lambda t: ops.complex_abs(t[0], t[1]), [_r(6), _r(6)]),
    ("conv_depthwise_d1_k3", lambda t: ops.conv2d_depthwise(t[0], t[1], 1), [_r(2, 3, 6, 7), _r(3, 3, 3)]),
    ("conv_depthwise_d2", lambda t: ops.conv2d_depthwise(t[0], t[1], 2), [_r(1, 2, 7, 6), _r(2, 3, 3)]),
    ("conv_depthwise_k5", lambda t: ops.conv2d_depthwise(t[0], t[1], 1), [_r(1, 2, 6, 6), _r(2, 5, 5)]),
    ("conv_depthwise_d4", lambda t: ops.conv2d_depthwise(t[0], t[1], 4), [_r(1, 1, 9, 10), _r(1, 3, 3)]),
    ("conv_pointwise", lambda t: ops.conv2d_pointwise(t[0], t[1], t[2]), [_r(2, 3, 3, 4), _r(5, 3), _r(5)]),
    ("conv_pointwise_grouped", lambda t: ops.conv2d_pointwise(t[0], t[1], t[2], groups=2),
     [_r(2, 4, 3, 3), _r(6, 2), _r(6)]),
    ("instance_norm", lambda t: ops.instance_norm(t[0], t[1], t[2]), [_r(2, 3, 4, 4), _r(3), _r(3)]),
    ("fft2_complex", lambda t: _sum_pair(ops.fft2(t[0], t[1])), [_r(2, 4, 6), _r(2, 4, 6)]),
    ("fft2_real", lambda t: _sum_pair(ops.fft2(t[0]), -1.0), [_r(4, 6)]),
    ("ifft2", lambda t: _sum_pair(ops.ifft2(t[0], t[1]), 3.0), [_r(4, 6), _r(4, 6)]),
    ("dwt2_haar", lambda t: ops.dwt2_haar(t[0]), [_r(2, 4, 6)]),
    ("idwt2_haar", lambda t: ops.idwt2_haar(t[0]), [_r(4, 2, 3, 2)]),
    ("linear_scan", lambda t: ops.linear_scan(t[0], ops.sigmoid(t[1]), t[2]), [_r(2, 3, 7), _r(3), _r(2, 3)]),
    ("smooth_l1", lambda t: ops.smooth_l1(t[0] * 3, t[1]), [_r(4, 5), _r(4, 5)]),
    ("l1", lambda t: ops.l1(t[0], t[1]), [_r(4, 5), _r(4, 5)]),
    ("ssim_loss", lambda t: ops.ssim_loss(t[0], t[1]), [_r(1, 1, 13, 12), _r(1, 1, 13, 12)]),
]


@pytest.mark.parametrize("name,fn,arrays", OP_CASES, ids=[c[0] for c in OP_CASES])
def test_finite_difference(name, fn, arrays):
    assert finite_difference_check(fn, arrays) < 1e-4


def _transpose_gap(fn, in_shape, seed=1):
    """Dot-product test for a linear map given as a tensor function."""
    r = np.random.default_rng(seed)
    u = r.standard_normal(in_shape)
    Ju = fn(Tensor(u)).data
    v = r.standard_normal(Ju.shape)
    t = Tensor(np.zeros(in_shape), requires_grad=True)
    backward(ops.sum(fn(t) * Tensor(v)))
    lhs, rhs = np.sum(Ju * v), np.sum(u * t.grad)
    return abs(lhs - rhs) / (np.linalg.norm(Ju) * np.linalg.norm(v))


W3 = _r(2, 3, 3)
W5 = _r(2, 5, 5)
WP = _r(4, 2)
LINEAR_CASES = [
    ("fft2", lambda t: ops.stack(list(ops.fft2(t)), 0), (2, 6, 8)),
    ("ifft2", lambda t: ops.stack(list(ops.ifft2(t, t * 0.5)), 0), (6, 8)),
    ("dwt2_haar", ops.dwt2_haar, (2, 6, 8)),
    ("idwt2_haar", ops.idwt2_haar, (4, 2, 3, 4)),
    ("depthwise_3x3_d2", lambda t: ops.conv2d_depthwise(t, Tensor(W3), 2), (2, 2, 8, 9)),
    ("depthwise_5x5", lambda t: ops.conv2d_depthwise(t, Tensor(W5), 1), (1, 2, 8, 8)),
    ("pointwise", lambda t: ops.conv2d_pointwise(t, Tensor(WP)), (2, 2, 5, 5)),
    ("scan", lambda t: ops.linear_scan(t, np.array([0.3, 0.9])), (2, 2, 11)),
]


@pytest.mark.parametrize("name,fn,shape", LINEAR_CASES, ids=[c[0] for c in LINEAR_CASES])
def test_linear_transpose(name, fn, shape):
    assert _transpose_gap(fn, shape) < 1e-9


def test_quadratic_gradient():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    backward(ops.sum(x * x))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_gelu_slope_at_zero():
    x = Tensor(np.zeros(1), requires_grad=True)
    backward(ops.sum(ops.gelu(x)))
    assert x.grad[0] == pytest.approx(0.5, abs=1e-15)


def test_gradients_accumulate():
    x = Tensor(np.array([0.3, -1.2]), requires_grad=True)
    backward(ops.sum(ops.sin(x) * x))
    once = x.grad.copy()
    backward(ops.sum(ops.sin(x) * x))
    np.testing.assert_allclose(x.grad, 2 * once)


def test_shared_node_visited_once():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    backward(ops.sum(y + y))
    assert x.grad[0] == pytest.approx(8.0)


def test_non_scalar_root_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(x * 2)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2
    assert not y.requires_grad


def test_atan2_zero_origin_is_finite():
    y = Tensor(np.zeros(1), requires_grad=True)
    x = Tensor(np.zeros(1), requires_grad=True)
    backward(ops.sum(ops.atan2(y, x)))
    assert np.isfinite(y.grad).all() and np.isfinite(x.grad).all()


def test_scan_matches_loop():
    u = rng.standard_normal((2, 3, 9))
    a = rng.uniform(0, 1, 3)
    h0 = rng.standard_normal((2, 3))
    h, out = h0.copy(), []
    for t in range(9):
        h = a[None] * h + u[..., t]
        out.append(h)
    np.testing.assert_allclose(ops.linear_scan(u, a, h0).data, np.stack(out, -1), atol=1e-12)


def test_smooth_l1_branches():
    x = Tensor(np.array([0.1, 2.5]))
    y = Tensor(np.zeros(2))
    # |d| < delta: 0.5 d^2 / delta; otherwise |d| - 0.5 delta
    expected = np.mean([0.5 * 0.1**2, 2.5 - 0.5])
    assert float(ops.smooth_l1(x, y, 1.0).data) == pytest.approx(expected)


def test_ssim_loss_matches_metric():
    from fourierpet.analysis import ssim

    a, b = rng.random((2, 16, 16))
    got = float(ops.ssim_loss(Tensor(a[None, None]), Tensor(b[None, None])).data)
    assert got == pytest.approx(1 - ssim(a, b, data_range=1.0), abs=1e-12)


# ---------------------------------------------------------------- optimizer
def test_cosine_endpoints():
    assert cosine_lr(0, 100) == pytest.approx(1e-3)
    assert cosine_lr(100, 100) == pytest.approx(1e-5)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 500))
def test_cosine_non_increasing(T):
    lrs = [cosine_lr(t, T) for t in range(T + 1)]
    assert np.all(np.diff(lrs) <= 1e-18)


def test_adamw_matches_hand_recurrence():
    p = Tensor(np.array([0.7]), requires_grad=True)
    opt = AdamW({"p": p}, total_steps=3, weight_decay=0.0)
    for _ in range(3):
        p.grad = np.array([1.0])
        adamw_step(opt)
    ref = adamw_reference(0.7, [1.0] * 3, [cosine_lr(t, 3) for t in range(3)])
    assert p.data[0] == pytest.approx(ref[-1], abs=1e-15)


def test_adamw_weight_decay_recurrence():
    p = Tensor(np.array([1.3]), requires_grad=True)
    opt = AdamW({"p": p}, total_steps=10, weight_decay=0.01)
    grads = [0.5, -0.2, 0.9]
    for g in grads:
        p.grad = np.array([g])
        opt.step()
    ref = adamw_reference(1.3, grads, [cosine_lr(t, 10) for t in range(3)], wd=0.01)
    assert p.data[0] == pytest.approx(ref[-1], abs=1e-15)


def test_zero_grad_zero_decay_leaves_params():
    p = Tensor(np.array([0.4, -2.0]), requires_grad=True)
    opt = AdamW({"p": p}, total_steps=5, weight_decay=0.0)
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p.data, [0.4, -2.0])


def test_step_before_backward_rejected():
    p = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(RuntimeError, match="before any backward"):
        AdamW({"p": p}, total_steps=5).step()
