"""Building blocks of the unrolled network.

Each block is a small :class:`Module` holding named parameter tensors. All
blocks are built so that their freshly initialized output equals their input
(zero-initialized output layers, zero output scale in the state-space scan),
which makes the whole unrolled network the identity on its initial estimate.
"""

import numpy as np

from .. import spectral
from ..autodiff import Tensor, ops

APCM_MODES = ("targeted", "full_band")
LL, HL, LH, HH = range(4)


class Module:
    """Parameter container; attributes that are tensors or modules are discovered in order."""

    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self):
        return dict(self.named_parameters())


def param(values, dtype=np.float64):
    return Tensor(np.asarray(values, dtype=dtype), requires_grad=True)


def _he(rng, shape, fan_in, dtype):
    return param(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in), dtype)


# ---------------------------------------------------------------- x-update
class DiagonalSSD(Module):
    """Per-channel gated linear state-space scan over a token sequence.

    ``h_t = a * h_{t-1} + b * x_t`` and ``y_t = gamma * c * h_t + d * x_t``
    with ``a = sigmoid(a_hat)``. Starting with ``gamma = 0`` and ``d = 1``
    makes the block an identity map.
    """

    def __init__(self, channels, rng, dtype=np.float64):
        decay = np.linspace(0.5, 0.95, channels)
        self.a_hat = param(np.log(decay / (1 - decay)), dtype)
        self.b = param(np.ones(channels), dtype)
        self.c = param(rng.standard_normal(channels) / np.sqrt(channels), dtype)
        self.d = param(np.ones(channels), dtype)
        self.gamma = param(np.zeros(1), dtype)

    def __call__(self, tokens, h_prev=None):
        """``tokens`` is (B, D, T); returns ``(y, h_last)`` with ``h_last`` (B, D)."""
        a = ops.sigmoid(self.a_hat)
        drive = tokens * ops.reshape(self.b, (-1, 1))
        states = ops.linear_scan(drive, a, h_prev)
        y = self.gamma * ops.reshape(self.c, (-1, 1)) * states + ops.reshape(self.d, (-1, 1)) * tokens
        return y, states[:, :, -1]


def diagonal_ssd_scan(tokens, h_prev, a_hat, b, c, d, gamma):
    """Functional form of :class:`DiagonalSSD` on plain arrays or tensors."""
    blk = DiagonalSSD.__new__(DiagonalSSD)
    blk.a_hat, blk.b, blk.c, blk.d = (ops.as_tensor(v) for v in (a_hat, b, c, d))
    blk.gamma = ops.as_tensor(np.reshape(gamma, (1,)) if not isinstance(gamma, Tensor) else gamma)
    tokens = ops.as_tensor(tokens)
    return blk(tokens, None if h_prev is None else ops.as_tensor(h_prev))


class SSFNOBlock(Module):
    """Spectral block: FFT, token scan over (re, im) features, inverse FFT,
    added to a pointwise channel mix and passed through GELU."""

    def __init__(self, channels, rng, dtype=np.float64):
        self.ssd = DiagonalSSD(2 * channels, rng, dtype)
        self.mix_w = _he(rng, (channels, channels), channels, dtype)
        self.mix_b = param(np.zeros(channels), dtype)

    def __call__(self, f, h_prev=None):
        bsz, ch, h, w = f.shape
        re, im = ops.fft2(f)
        tokens = ops.concat([re.reshape(bsz, ch, h * w), im.reshape(bsz, ch, h * w)], axis=1)
        y, h_out = self.ssd(tokens, h_prev)
        spec_re = y[:, :ch].reshape(bsz, ch, h, w)
        spec_im = y[:, ch:].reshape(bsz, ch, h, w)
        spatial, _ = ops.ifft2(spec_re, spec_im)
        return ops.gelu(spatial + ops.conv2d_pointwise(f, self.mix_w, self.mix_b)), h_out


class SCM(Module):
    """Learned surrogate for the x-subproblem.

    Input features are the normalized backprojection ``b`` and ``r = z - u``;
    the output is ``r`` plus a learned correction whose last layer starts at
    zero.
    """

    def __init__(self, channels=16, depth=2, rng=None, dtype=np.float64):
        rng = np.random.default_rng(0) if rng is None else rng
        self.dw3 = _he(rng, (2, 3, 3), 9, dtype)
        self.dw5 = _he(rng, (2, 5, 5), 25, dtype)
        self.fuse_w = _he(rng, (channels, 4), 4, dtype)
        self.fuse_b = param(np.zeros(channels), dtype)
        self.blocks = [SSFNOBlock(channels, rng, dtype) for _ in range(depth)]
        self.head_w = param(np.zeros((1, channels)), dtype)
        self.head_b = param(np.zeros(1), dtype)

    def __call__(self, b, z, u):
        r = z - u
        f0 = ops.concat([b, r], axis=1)
        f = ops.concat([ops.conv2d_depthwise(f0, self.dw3), ops.conv2d_depthwise(f0, self.dw5)], axis=1)
        f = ops.gelu(ops.conv2d_pointwise(f, self.fuse_w, self.fuse_b))
        h = None  # scan state, threaded through the blocks of this stage only
        for blk in self.blocks:
            f, h = blk(f, h)
        return r + ops.conv2d_pointwise(f, self.head_w, self.head_b)


# ---------------------------------------------------------------- z-update
def _band_radius(shape, dtype):
    r = spectral.radial_frequency(shape)
    return (r / r.max()).astype(dtype)[None, None]


def _interleave(parts):
    """Stack per-band feature maps band-major: [(B, G, h, w)] * k -> (B, G*k, h, w)."""
    st = ops.stack(parts, axis=2)
    bsz, g, k, h, w = st.shape
    return st.reshape(bsz, g * k, h, w)


def _select(x, idx):
    idx = list(idx)
    if idx == list(range(idx[0], idx[-1] + 1)):
        return x[:, idx[0]:idx[-1] + 1]
    return x[:, idx]


def _replace(x, idx, new):
    """Channels of ``x`` with those in ``idx`` swapped for ``new`` (same order)."""
    if list(idx) == list(range(x.shape[1])):
        return new
    parts, j = [], 0
    for i in range(x.shape[1]):
        if i in idx:
            parts.append(new[:, j:j + 1])
            j += 1
        else:
            parts.append(x[:, i:i + 1])
    return ops.concat(parts, axis=1)


def renormalize(c, s, tiny=1e-12):
    """Project ``(c, s)`` onto the unit circle.

    Returns ``(c_hat, s_hat, ok)``; where the norm is below ``tiny`` the
    outputs are left unscaled and ``ok`` is False.
    """
    n = ops.complex_abs(c, s)
    ok = n.data > tiny
    safe = ops.where(ok, n, 1.0)
    return c / safe, s / safe, ok


class AmplitudeBranch(Module):
    """Gated multiplicative correction of per-band amplitude spectra.

    For each corrected band a 1x1 conv (on log-amplitude and a radial
    frequency coordinate), instance normalization and GELU feed a two-layer
    FFN producing a modulation ``m``. The output is
    ``relu(g * A (1 + m) + (1 - g) * A)`` with ``g = sigmoid(gate)``.
    """

    def __init__(self, bands, width, rng, dtype=np.float64):
        self.bands = tuple(bands)
        g = len(self.bands)
        self.in_w = _he(rng, (g * width, 2), 2, dtype)
        self.in_b = param(np.zeros(g * width), dtype)
        self.norm_g = param(np.ones(g * width), dtype)
        self.norm_b = param(np.zeros(g * width), dtype)
        self.hid_w = _he(rng, (g * width, width), width, dtype)
        self.hid_b = param(np.zeros(g * width), dtype)
        self.out_w = param(np.zeros((g, width)), dtype)
        self.out_b = param(np.zeros(g), dtype)
        self.gate = param(np.zeros(g), dtype)

    def __call__(self, amp, radius):
        g = len(self.bands)
        a = _select(amp, self.bands)
        rad = Tensor(np.broadcast_to(radius, a.shape))
        f = ops.conv2d_pointwise(_interleave([ops.log1p(a), rad]), self.in_w, self.in_b, groups=g)
        f = ops.gelu(ops.instance_norm(f, self.norm_g, self.norm_b))
        f = ops.gelu(ops.conv2d_pointwise(f, self.hid_w, self.hid_b, groups=g))
        m = ops.conv2d_pointwise(f, self.out_w, self.out_b, groups=g)
        gate = ops.reshape(ops.sigmoid(self.gate), (1, g, 1, 1))
        corrected = a * (1.0 + m)
        out = ops.relu(gate * corrected + (1.0 - gate) * a)
        return _replace(amp, self.bands, out)


class PhaseBranch(Module):
    """Phase correction on the ``(cos, sin)`` encoding.

    Selected bands get a residual FFN; a 1x1 cross-band fusion then mixes the
    (cos, sin) features of all four bands. The result is renormalized to the
    unit circle and decoded with atan2 (bins with zero norm keep their phase).
    """

    def __init__(self, bands, width, rng, dtype=np.float64):
        self.bands = tuple(bands)
        g = len(self.bands)
        self.in_w = _he(rng, (g * width, 3), 3, dtype)
        self.in_b = param(np.zeros(g * width), dtype)
        self.out_w = param(np.zeros((2 * g, width)), dtype)
        self.out_b = param(np.zeros(2 * g), dtype)
        self.fuse_w = param(np.zeros((8, 8)), dtype)
        self.fuse_b = param(np.zeros(8), dtype)

    def encode(self, phase, radius):
        """Corrected, fused but not yet renormalized ``(cos, sin)`` pair."""
        g = len(self.bands)
        c, s = ops.cos(phase), ops.sin(phase)
        cs, ss = _select(c, self.bands), _select(s, self.bands)
        rad = Tensor(np.broadcast_to(radius, cs.shape))
        f = ops.gelu(ops.conv2d_pointwise(_interleave([cs, ss, rad]), self.in_w, self.in_b, groups=g))
        delta = ops.conv2d_pointwise(f, self.out_w, self.out_b, groups=g)
        bsz, _, h, w = delta.shape
        delta = delta.reshape(bsz, g, 2, h, w)
        c = _replace(c, self.bands, cs + delta[:, :, 0])
        s = _replace(s, self.bands, ss + delta[:, :, 1])
        fused = ops.conv2d_pointwise(ops.concat([c, s], axis=1), self.fuse_w, self.fuse_b)
        return c + fused[:, :4], s + fused[:, 4:]

    def __call__(self, phase, radius):
        c, s = self.encode(phase, radius)
        c, s, ok = renormalize(c, s)
        return ops.where(ok, ops.atan2(s, c), phase)


class APCM(Module):
    """Learned surrogate for the z-subproblem (proximal step).

    Haar analysis, per-band dilated depthwise convs (rates 1, 2, 4) with a
    zero-initialized residual, a per-band FFT split into amplitude and phase,
    ``depth`` rounds of amplitude and phase correction, then recombination,
    inverse FFT and Haar synthesis.
    """

    DILATIONS = (1, 2, 4)

    def __init__(self, width=16, depth=2, mode="targeted", rng=None, dtype=np.float64):
        if mode not in APCM_MODES:
            raise ValueError(f"unknown APCM mode {mode!r}; choose from {APCM_MODES}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.mode = mode
        amp_bands = (LL,) if mode == "targeted" else (LL, HL, LH, HH)
        phase_bands = (HH,) if mode == "targeted" else (LL, HL, LH, HH)
        self.stem_dw = [_he(rng, (4, 3, 3), 9, dtype) for _ in self.DILATIONS]
        self.stem_w = param(np.zeros((4, 3)), dtype)
        self.stem_b = param(np.zeros(4), dtype)
        self.amp = [AmplitudeBranch(amp_bands, width, rng, dtype) for _ in range(depth)]
        self.phase = [PhaseBranch(phase_bands, width, rng, dtype) for _ in range(depth)]

    def __call__(self, v):
        bsz, _, h, w = v.shape
        if h % 2 or w % 2:
            raise ValueError(f"APCM needs even image dims, got {(h, w)}")
        if min(h, w) // 2 <= max(self.DILATIONS):
            # reflect padding of the widest dilated kernel must fit inside a sub-band
            raise ValueError(f"APCM needs image sides >= {2 * max(self.DILATIONS) + 2}, got {(h, w)}")
        bands = ops.transpose(ops.dwt2_haar(v).reshape(4, bsz, h // 2, w // 2), (1, 0, 2, 3))
        feats = _interleave([ops.conv2d_depthwise(bands, k, dilation=d) for k, d in zip(self.stem_dw, self.DILATIONS)])
        s = bands + ops.conv2d_pointwise(ops.gelu(feats), self.stem_w, self.stem_b, groups=4)
        re, im = ops.fft2(s)
        amp = ops.complex_abs(re, im)
        phase = ops.atan2(im, re)
        radius = _band_radius((h // 2, w // 2), v.data.dtype)
        for amp_blk, ph_blk in zip(self.amp, self.phase):
            amp = amp_blk(amp, radius)
            phase = ph_blk(phase, radius)
        out, _ = ops.ifft2(amp * ops.cos(phase), amp * ops.sin(phase))
        z = ops.idwt2_haar(ops.transpose(out, (1, 0, 2, 3)))
        return z.reshape(bsz, 1, h, w)
