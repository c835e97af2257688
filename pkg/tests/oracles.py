"""Independent reference implementations used to cross-check the package.

Everything here is written from first principles (loops, dense matrices,
closed-form geometry) and shares no code with ``fourierpet``.
"""

import math

import numpy as np


def direct_dft2(x):
    """O(N^2) 2D DFT via explicit Vandermonde matrices."""
    h, w = x.shape
    fy = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    fx = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    return fy @ x @ fx.T


def direct_idft2(X):
    h, w = X.shape
    fy = np.exp(2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    fx = np.exp(2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    return fy @ X @ fx.T / (h * w)


def haar_2x2(block):
    """Orthonormal Haar of a single 2x2 block as a 4x4 matrix product."""
    m = 0.5 * np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], dtype=float)
    return m @ np.asarray(block, dtype=float).ravel()


def chord_length(theta, s, height, width, pixel_size=1.0):
    """Length of the line ``x cos t + y sin t = s`` inside the centred image box."""
    hx, hy = width * pixel_size / 2, height * pixel_size / 2
    c, sn = math.cos(theta), math.sin(theta)
    # point on the line and its direction
    px, py = s * c, s * sn
    dx, dy = -sn, c
    lo, hi = -math.inf, math.inf
    for p, d, half in ((px, dx, hx), (py, dy, hy)):
        if abs(d) < 1e-15:
            if abs(p) > half:
                return 0.0
            continue
        t1, t2 = (-half - p) / d, (half - p) / d
        lo, hi = max(lo, min(t1, t2)), min(hi, max(t1, t2))
    return max(0.0, hi - lo)


def poisson_loglik(mat, y, x):
    proj = mat @ x
    mask = y > 0
    return float(np.sum(y[mask] * np.log(proj[mask])) - proj.sum())


def finite_difference_check(fn, arrays, h=1e-5, seed=0):
    """Max relative error between autodiff and central differences.

    ``fn`` maps a list of Tensors to a Tensor; the scalar objective is a fixed
    random projection of its output so every output element contributes.
    """
    from fourierpet.autodiff import Tensor, backward, ops

    rng = np.random.default_rng(seed)
    out0 = fn([Tensor(a) for a in arrays]).data
    wproj = rng.standard_normal(np.shape(out0))

    def objective(vals):
        return float(np.sum(fn([Tensor(v) for v in vals]).data * wproj))

    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    backward(ops.sum(fn(ts) * Tensor(wproj)))
    worst = 0.0
    for j, a in enumerate(arrays):
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            plus = [v.copy() for v in arrays]
            minus = [v.copy() for v in arrays]
            plus[j][idx] += h
            minus[j][idx] -= h
            num[idx] = (objective(plus) - objective(minus)) / (2 * h)
        grad = ts[j].grad if ts[j].grad is not None else np.zeros_like(a)
        worst = max(worst, float(np.max(np.abs(num - grad)) / max(np.max(np.abs(num)), 1e-8)))
    return worst


def adamw_reference(p0, grads, lr_sched, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    """Hand-unrolled scalar AdamW recurrence."""
    p, m, v = float(p0), 0.0, 0.0
    out = []
    for t, (g, lr) in enumerate(zip(grads, lr_sched), 1):
        p -= lr * wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat, vhat = m / (1 - b1**t), v / (1 - b2**t)
        p -= lr * mhat / (math.sqrt(vhat) + eps)
        out.append(p)
    return out
