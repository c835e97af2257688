"""Differentiable operations.

Every op takes tensors (or array-likes, treated as constants) and returns a
tensor built with :func:`make_node`. The backward closure receives the output
cotangent and returns one cotangent per parent, in parent order; ``None``
marks a parent that needs nothing.

Image ops use the ``(B, C, H, W)`` layout. Complex values travel as separate
real and imaginary tensors.
"""

import numpy as np
from scipy.special import erf

from .tensor import Tensor, as_tensor, make_node

_SQRT2 = np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_node(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make_node(out, (a, b),
                     lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def power(a, p):
    """Elementwise ``a ** p`` for a constant scalar exponent."""
    a = as_tensor(a)
    p = float(p)
    return make_node(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 dims")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(a.data @ b.data, (a, b), bw)


# ---------------------------------------------------------------- reductions and shape
def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return sum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a, idx):
    a = as_tensor(a)

    def bw(g):
        out = np.zeros_like(a.data)
        if _is_basic_index(idx):
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return make_node(a.data[idx], (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                     lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    return make_node(np.stack([t.data for t in tensors], axis=axis), tensors,
                     lambda g: tuple(np.moveaxis(g, axis, 0)))


def where(cond, a, b):
    """Select from ``a`` where the constant mask ``cond`` holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return make_node(np.where(cond, a.data, b.data), (a, b),
                     lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                                _unbroadcast(np.where(cond, 0.0, g), b.shape)))


# ---------------------------------------------------------------- elementwise
def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,))


def log1p(a):
    a = as_tensor(a)
    return make_node(np.log1p(a.data), (a,), lambda g: (g / (1.0 + a.data),))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,))


def abs(a):  # noqa: A001
    a = as_tensor(a)
    return make_node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a):
    a = as_tensor(a)
    return make_node(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))  # overflow-free logistic
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),))


def gelu(a):
    """Exact GELU ``x * Phi(x)`` with the Gaussian CDF written via erf."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return make_node(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def cos(a):
    a = as_tensor(a)
    return make_node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def sin(a):
    a = as_tensor(a)
    return make_node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def atan2(y, x):
    """Principal argument in (-pi, pi]; ``-pi`` is mapped to ``pi`` and the
    gradient is taken as zero at the origin."""
    y, x = as_tensor(y), as_tensor(x)
    out = np.arctan2(y.data, x.data)
    out = np.where(out == -np.pi, np.pi, out)
    r2 = x.data * x.data + y.data * y.data
    safe = np.where(r2 > 0, r2, 1.0)

    def bw(g):
        gy = np.where(r2 > 0, g * x.data / safe, 0.0)
        gx = np.where(r2 > 0, -g * y.data / safe, 0.0)
        return _unbroadcast(gy, y.shape), _unbroadcast(gx, x.shape)

    return make_node(out, (y, x), bw)


def complex_abs(re, im):
    """Modulus ``sqrt(re^2 + im^2)``; the gradient at the origin is zero."""
    re, im = as_tensor(re), as_tensor(im)
    out = np.hypot(re.data, im.data)
    safe = np.where(out > 0, out, 1.0)

    def bw(g):
        s = np.where(out > 0, g / safe, 0.0)
        return _unbroadcast(s * re.data, re.shape), _unbroadcast(s * im.data, im.shape)

    return make_node(out, (re, im), bw)


# ---------------------------------------------------------------- convolutions and norms
def _reflect_pad_adjoint(gp, pad):
    """Adjoint of ``np.pad(x, pad, mode='reflect')`` over the last two axes."""
    if pad == 0:
        return gp
    g = gp
    for axis in (-2, -1):
        n = g.shape[axis] - 2 * pad
        g = np.moveaxis(g, axis, 0)
        out = g[pad:pad + n].copy()
        out[1:pad + 1] += g[:pad][::-1]
        out[n - 1 - pad:n - 1] += g[pad + n:][::-1]
        g = np.moveaxis(out, 0, axis)
    return g


def conv2d_depthwise(x, w, dilation=1):
    """Per-channel ``k x k`` correlation with reflect padding ('same' output).

    Parameters
    ----------
    x : Tensor, shape (B, C, H, W)
    w : Tensor, shape (C, k, k), k odd
    dilation : int
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 3 or w.shape[0] != x.shape[1] or w.shape[1] != w.shape[2] or w.shape[1] % 2 == 0:
        raise ValueError(f"depthwise conv: bad shapes x{x.shape}, w{w.shape}")
    k = w.shape[1]
    d = int(dilation)
    pad = d * (k - 1) // 2
    h, wd = x.shape[2:]
    if pad >= min(h, wd):
        raise ValueError(f"reflect padding {pad} too large for {h}x{wd} input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
    out = np.zeros_like(x.data)
    taps = [(i, j) for i in range(k) for j in range(k)]
    for i, j in taps:
        out += w.data[None, :, i, j, None, None] * xp[:, :, i * d:i * d + h, j * d:j * d + wd]

    def bw(g):
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp)
        for i, j in taps:
            sl = (slice(None), slice(None), slice(i * d, i * d + h), slice(j * d, j * d + wd))
            gw[:, i, j] = np.einsum("bchw,bchw->c", g, xp[sl])
            gxp[sl] += w.data[None, :, i, j, None, None] * g
        return _reflect_pad_adjoint(gxp, pad), gw

    return make_node(out, (x, w), bw)


def conv2d_pointwise(x, w, b=None, groups=1):
    """Grouped 1x1 convolution.

    ``x`` is (B, Cin, H, W) and ``w`` is (Cout, Cin // groups); output
    channel ``o`` reads only the input channels of its group.
    """
    x, w = as_tensor(x), as_tensor(w)
    bsz, cin, h, wd = x.shape
    cout = w.shape[0]
    if cin % groups or cout % groups or w.shape[1] != cin // groups:
        raise ValueError(f"pointwise conv: x{x.shape} incompatible with w{w.shape}, groups={groups}")
    xg = x.data.reshape(bsz, groups, cin // groups, h * wd)
    wg = w.data.reshape(groups, cout // groups, cin // groups)
    out = (wg[None] @ xg).reshape(bsz, cout, h, wd)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]
        parents.append(b)

    def bw(g):
        gg = g.reshape(bsz, groups, cout // groups, h * wd)
        gx = (np.swapaxes(wg, -1, -2)[None] @ gg).reshape(x.shape)
        gw = (gg @ np.swapaxes(xg, -1, -2)).sum(axis=0).reshape(w.shape)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_node(out, parents, bw)


def instance_norm(x, gamma, beta, eps=1e-5):
    """Per-sample, per-channel normalization over (H, W) with affine (C,) params."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    var = x.data.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    gm = gamma.data[None, :, None, None]
    out = gm * xhat + beta.data[None, :, None, None]

    def bw(g):
        dxhat = g * gm
        gx = inv * (dxhat - dxhat.mean(axis=(2, 3), keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=(2, 3), keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_node(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------- spectral
def fft2(re, im=None):
    """Unnormalized 2D DFT over the last two axes; returns ``(re, im)``.

    With ``im=None`` the input is real. The adjoint of the unnormalized DFT
    is ``H*W`` times the inverse DFT.
    """
    re = as_tensor(re)
    parents = [re]
    z = re.data.astype(np.complex128)
    if im is not None:
        im = as_tensor(im)
        z = z + 1j * im.data
        parents.append(im)
    spec = np.fft.fft2(z)
    n = z.shape[-1] * z.shape[-2]

    def bw(g):
        back = n * np.fft.ifft2(g[0] + 1j * g[1])
        return (back.real, back.imag) if im is not None else (back.real,)

    pair = make_node(np.stack([spec.real, spec.imag]), parents, bw)
    return pair[0], pair[1]


def ifft2(re, im):
    """Inverse 2D DFT (carries ``1/(H*W)``); returns ``(re, im)``."""
    re, im = as_tensor(re), as_tensor(im)
    out = np.fft.ifft2(re.data + 1j * im.data)
    n = out.shape[-1] * out.shape[-2]

    def bw(g):
        back = np.fft.fft2(g[0] + 1j * g[1]) / n
        return back.real, back.imag

    pair = make_node(np.stack([out.real, out.imag]), (re, im), bw)
    return pair[0], pair[1]


def _haar_analysis(x):
    a, b = x[..., 0::2, 0::2], x[..., 0::2, 1::2]
    c, d = x[..., 1::2, 0::2], x[..., 1::2, 1::2]
    return np.stack([a + b + c + d, a - b + c - d, a + b - c - d, a - b - c + d]) * 0.5


def _haar_synthesis(bands):
    ll, hl, lh, hh = bands
    out = np.empty(ll.shape[:-2] + (2 * ll.shape[-2], 2 * ll.shape[-1]), dtype=ll.dtype)
    out[..., 0::2, 0::2] = ll + hl + lh + hh
    out[..., 0::2, 1::2] = ll - hl + lh - hh
    out[..., 1::2, 0::2] = ll + hl - lh - hh
    out[..., 1::2, 1::2] = ll - hl - lh + hh
    return out * 0.5


def dwt2_haar(x):
    """Orthonormal single-level Haar analysis of the last two (even) axes.

    Returns one tensor with a new leading axis holding LL, HL, LH, HH. The
    transform is orthogonal, so its adjoint is :func:`idwt2_haar`.
    """
    x = as_tensor(x)
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ValueError(f"dwt2_haar needs even spatial dims, got {x.shape[-2:]}")
    return make_node(_haar_analysis(x.data), (x,), lambda g: (_haar_synthesis(g),))


def idwt2_haar(bands):
    """Inverse of :func:`dwt2_haar`; ``bands`` has a leading axis of length 4."""
    bands = as_tensor(bands)
    if bands.shape[0] != 4:
        raise ValueError(f"idwt2_haar expects 4 stacked bands, got leading dim {bands.shape[0]}")
    return make_node(_haar_synthesis(bands.data), (bands,), lambda g: (_haar_analysis(g),))


# ---------------------------------------------------------------- recurrence
def _causal_conv(u, k):
    """``out[..., t] = sum_{j<=t} k[..., j] * u[..., t-j]`` via zero-padded FFT."""
    t = u.shape[-1]
    n = 1 << int(np.ceil(np.log2(2 * t)))
    return np.fft.irfft(np.fft.rfft(u, n) * np.fft.rfft(k, n), n)[..., :t]


def linear_scan(u, a, h0=None):
    """Diagonal linear recurrence ``h_t = a * h_{t-1} + u_t``.

    Parameters
    ----------
    u : Tensor, shape (B, C, T)
        Driving inputs.
    a : Tensor, shape (C,)
        Per-channel decay, expected in [0, 1).
    h0 : Tensor, shape (B, C), optional
        State before the first step (zero by default).

    Returns
    -------
    Tensor, shape (B, C, T)
        All states ``h_0 .. h_{T-1}``.
    """
    u, a = as_tensor(u), as_tensor(a)
    t = u.shape[-1]
    powers = np.power(a.data[:, None], np.arange(t + 1))  # (C, T+1)
    kern = powers[:, :t]
    states = _causal_conv(u.data, kern)
    parents = [u, a]
    if h0 is not None:
        h0 = as_tensor(h0)
        states = states + h0.data[..., None] * powers[:, 1:]
        parents.append(h0)
        prev0 = h0.data
    else:
        prev0 = np.zeros(u.shape[:-1], dtype=u.data.dtype)

    def bw(g):
        # adjoint recurrence lam_t = g_t + a * lam_{t+1}, run backwards
        lam = _causal_conv(g[..., ::-1], kern)[..., ::-1]
        prev = np.concatenate([prev0[..., None], states[..., :-1]], axis=-1)
        ga = (lam * prev).sum(axis=(0, 2))
        grads = [lam, ga]
        if h0 is not None:
            grads.append(a.data * lam[..., 0])
        return tuple(grads)

    return make_node(states, parents, bw)


# ---------------------------------------------------------------- losses
def smooth_l1(x, y, delta=1.0):
    """Mean Huber-style loss: ``0.5 d^2 / delta`` if ``|d| < delta`` else ``|d| - 0.5 delta``."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"smooth_l1: shape mismatch {x.shape} vs {y.shape}")
    d = x.data - y.data
    small = np.abs(d) < delta
    val = np.where(small, 0.5 * d * d / delta, np.abs(d) - 0.5 * delta).mean()
    dd = np.where(small, d / delta, np.sign(d)) / d.size

    return make_node(np.asarray(val), (x, y), lambda g: (g * dd, -g * dd))


def l1(x, y):
    """Mean absolute difference."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"l1: shape mismatch {x.shape} vs {y.shape}")
    d = x.data - y.data
    s = np.sign(d) / d.size
    return make_node(np.asarray(np.abs(d).mean()), (x, y), lambda g: (g * s, -g * s))


def filter_valid(x, k):
    """Separable 'valid' correlation of the last two axes with a constant 1D kernel."""
    x = as_tensor(x)
    k = np.asarray(k, dtype=np.float64)
    m = len(k)
    h, w = x.shape[-2:]
    if min(h, w) < m:
        raise ValueError(f"filter_valid: input {h}x{w} smaller than kernel {m}")
    ho, wo = h - m + 1, w - m + 1
    tmp = np.zeros(x.shape[:-1] + (wo,), dtype=x.data.dtype)
    for p in range(m):
        tmp += k[p] * x.data[..., p:p + wo]
    out = np.zeros(x.shape[:-2] + (ho, wo), dtype=x.data.dtype)
    for p in range(m):
        out += k[p] * tmp[..., p:p + ho, :]

    def bw(g):
        gt = np.zeros_like(tmp)
        for p in range(m):
            gt[..., p:p + ho, :] += k[p] * g
        gx = np.zeros_like(x.data)
        for p in range(m):
            gx[..., p:p + wo] += k[p] * gt
        return (gx,)

    return make_node(out, (x,), bw)


def ssim_loss(x, y, data_range=1.0, win=11, sigma=1.5):
    """``1 - mean SSIM`` over the valid region, averaged across the batch."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"ssim_loss: shape mismatch {x.shape} vs {y.shape}")
    r = np.arange(win) - (win - 1) / 2
    k = np.exp(-(r**2) / (2 * sigma**2))
    k /= k.sum()
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    mx, my = filter_valid(x, k), filter_valid(y, k)
    sxx = filter_valid(x * x, k) - mx * mx
    syy = filter_valid(y * y, k) - my * my
    sxy = filter_valid(x * y, k) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return 1.0 - mean(num / den)


__all__ = [n for n in dir() if not n.startswith("_") and n not in ("np", "erf", "Tensor")]
