"""Deterministic spectral primitives: 2D DFT, amplitude/phase split and
single-level orthonormal Haar wavelets.

Conventions
-----------
* ``fft2`` is the unnormalized forward DFT, ``ifft2`` carries ``1/(W*H)``.
* Phases live in the half-open interval ``(-pi, pi]``; zero bins get phase 0.
* Haar bands for a 2x2 block ``[[a, b], [c, d]]`` are
  ``LL = (a+b+c+d)/2``, ``HL = (a-b+c-d)/2``, ``LH = (a+b-c-d)/2``,
  ``HH = (a-b-c+d)/2``. Odd-sized inputs are reflect-padded before analysis
  and cropped after synthesis.

All functions act on the last two axes, so stacks of images are accepted.
"""

from typing import NamedTuple

import numpy as np

BAND_NAMES = ("LL", "HL", "LH", "HH")


class WaveletBands(NamedTuple):
    ll: np.ndarray
    hl: np.ndarray
    lh: np.ndarray
    hh: np.ndarray
    shape: tuple  # spatial shape of the analysed image, used to crop padding

    def as_dict(self):
        return dict(zip(BAND_NAMES, (self.ll, self.hl, self.lh, self.hh)))


def _check_finite(x, name):
    x = np.asarray(x)
    if x.ndim < 2:
        raise ValueError(f"{name} must have at least 2 dimensions, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def fft2(img):
    """Unnormalized 2D DFT over the last two axes (complex128)."""
    img = _check_finite(img, "image")
    return np.fft.fft2(img)


def ifft2(spec):
    """Inverse of :func:`fft2`; includes the ``1/(W*H)`` factor."""
    spec = _check_finite(spec, "spectrum")
    return np.fft.ifft2(np.asarray(spec, dtype=np.complex128))


def wrap_phase(phase):
    """Map angles into ``(-pi, pi]``."""
    phase = np.arctan2(np.sin(phase), np.cos(phase))
    return np.where(phase <= -np.pi, np.pi, phase)


def amp_phase(spec):
    """Split a complex spectrum into modulus and principal-value phase."""
    spec = np.asarray(spec, dtype=np.complex128)
    amplitude = np.abs(spec)
    phase = np.arctan2(spec.imag, spec.real)
    # atan2 returns -pi for (-x, -0.0); fold onto the closed end
    phase = np.where(phase <= -np.pi, np.pi, phase)
    phase = np.where(amplitude == 0, 0.0, phase)
    return amplitude, phase


def recombine(amplitude, phase):
    """Build ``amplitude * exp(i * phase)``."""
    amplitude = np.asarray(amplitude, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if amplitude.shape != phase.shape:
        raise ValueError(f"amplitude shape {amplitude.shape} != phase shape {phase.shape}")
    if np.any(amplitude < 0):
        raise ValueError("amplitude must be nonnegative")
    return amplitude * np.cos(phase) + 1j * (amplitude * np.sin(phase))


def _pad_even(x):
    h, w = x.shape[-2:]
    pads = [(0, 0)] * (x.ndim - 2) + [(0, h % 2), (0, w % 2)]
    if h % 2 or w % 2:
        x = np.pad(x, pads, mode="reflect")
    return x


def dwt2_haar(img):
    """Single-level orthonormal 2D Haar analysis."""
    img = _check_finite(img, "image")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    if h < 2 or w < 2:
        raise ValueError(f"Haar DWT needs both sides >= 2, got {(h, w)}")
    x = _pad_even(img)
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return WaveletBands(
        ll=(a + b + c + d) / 2,
        hl=(a - b + c - d) / 2,
        lh=(a + b - c - d) / 2,
        hh=(a - b - c + d) / 2,
        shape=(h, w),
    )


def idwt2_haar(bands):
    """Exact synthesis inverse of :func:`dwt2_haar`."""
    ll, hl, lh, hh = (np.asarray(bands[i], dtype=np.float64) for i in range(4))
    if not (ll.shape == hl.shape == lh.shape == hh.shape):
        raise ValueError(
            f"band shape mismatch: LL {ll.shape}, HL {hl.shape}, LH {lh.shape}, HH {hh.shape}"
        )
    h2, w2 = ll.shape[-2:]
    shape = bands.shape if isinstance(bands, WaveletBands) else (2 * h2, 2 * w2)
    out = np.empty(ll.shape[:-2] + (2 * h2, 2 * w2))
    out[..., 0::2, 0::2] = (ll + hl + lh + hh) / 2
    out[..., 0::2, 1::2] = (ll - hl + lh - hh) / 2
    out[..., 1::2, 0::2] = (ll + hl - lh - hh) / 2
    out[..., 1::2, 1::2] = (ll - hl - lh + hh) / 2
    return out[..., : shape[0], : shape[1]]


def radial_frequency(shape):
    """Normalized radial frequency (cycles/sample) of every DFT bin, unshifted."""
    fy = np.fft.fftfreq(shape[0])
    fx = np.fft.fftfreq(shape[1])
    return np.hypot(fy[:, None], fx[None, :])
