"""Amplitude/phase diagnostics and image-quality metrics.

Metric conventions: the second argument is always the reference. PSNR uses
the reference maximum as peak and returns ``inf`` for identical images. SSIM
uses an 11x11 Gaussian window (sigma 1.5) evaluated over the valid region,
with ``C1 = (0.01 L)^2`` and ``C2 = (0.03 L)^2``.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import spectral
from .classical import osem
from .validation import check_image, check_same_shape

EPS = 1e-8
SSIM_WIN = 11
SSIM_SIGMA = 1.5


def rmse(a, b):
    a = check_image(a, "a")
    b = check_image(b, "b")
    check_same_shape(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr(img, ref):
    """PSNR in dB of ``img`` against ``ref`` with peak ``max(ref)``."""
    err = rmse(img, ref)
    if err == 0:
        return float("inf")
    return float(20 * np.log10(np.max(ref) / err))


def gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2
    k = np.exp(-(r**2) / (2 * sigma**2))
    return k / k.sum()


def _filter_valid(x, k):
    """Separable 'valid' correlation of the last two axes with 1D kernel ``k``."""
    x = sliding_window_view(x, len(k), axis=-1) @ k
    return sliding_window_view(x, len(k), axis=-2) @ k


def ssim(img, ref, data_range=None):
    """Mean structural similarity of ``img`` against ``ref``.

    ``data_range`` defaults to ``max(ref) - min(ref)`` (1.0 for images
    normalized to [0, 1]).
    """
    a = check_image(img, "img")
    b = check_image(ref, "ref")
    check_same_shape(a, b, ("img", "ref"))
    if min(a.shape) < SSIM_WIN:
        raise ValueError(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}, got {a.shape}")
    L = float(b.max() - b.min()) if data_range is None else float(data_range)
    if L <= 0:
        L = 1.0
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    k = gaussian_window()
    mu_a, mu_b = _filter_valid(a, k), _filter_valid(b, k)
    saa = _filter_valid(a * a, k) - mu_a**2
    sbb = _filter_valid(b * b, k) - mu_b**2
    sab = _filter_valid(a * b, k) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def suv_max(img, roi):
    """Maximum value inside a boolean ROI."""
    img = check_image(img, "img")
    roi = np.asarray(roi, dtype=bool)
    check_same_shape(img, roi, ("img", "roi"))
    if not roi.any():
        raise ValueError("ROI is empty")
    return float(img[roi].max())


def swap_hybrid(amp_source, phase_source, clamp=True):
    """Image with the Fourier amplitude of one input and the phase of the other.

    The inverse transform's real part is returned; with ``clamp`` negative
    values are set to zero so the result reads as an activity map.
    """
    a = check_image(amp_source, "amp_source")
    p = check_image(phase_source, "phase_source")
    check_same_shape(a, p, ("amp_source", "phase_source"))
    amp, _ = spectral.amp_phase(spectral.fft2(a))
    _, phase = spectral.amp_phase(spectral.fft2(p))
    out = spectral.ifft2(spectral.recombine(amp, phase)).real
    return np.clip(out, 0.0, None) if clamp else out


SWAP_CONFIGS = (
    ("low", "low-count baseline"),
    ("amp_low+phase_full", "phase-corrected"),
    ("amp_full+phase_low", "amplitude-corrected"),
    ("full", "full-count reference"),
)


@dataclass
class SwapReport:
    rows: list
    convention: str = "hybrid = Re(ifft2), clamped >= 0"

    def column(self, metric):
        return [r[metric] for r in self.rows]

    def to_table(self):
        lines = [f"{'configuration':<22} {'PSNR[dB]':>9} {'RMSE':>9} {'SUVmax':>9}"]
        for r in self.rows:
            lines.append(f"{r['config']:<22} {r['psnr']:>9.3f} {r['rmse']:>9.5f} {r['suv_max']:>9.4f}")
        lines.append(f"# {self.convention}")
        return "\n".join(lines)

    def to_records(self):
        return "\n".join(json.dumps(r) for r in self.rows)


def swap_study(truth, low, full, roi=None):
    """Score the four amplitude/phase configurations against ``truth``."""
    truth = check_image(truth, "truth")
    low = check_image(low, "low")
    full = check_image(full, "full")
    check_same_shape(truth, low, ("truth", "low"))
    check_same_shape(truth, full, ("truth", "full"))
    roi = np.ones(truth.shape, bool) if roi is None else np.asarray(roi, bool)
    images = {
        "low": low,
        "amp_low+phase_full": swap_hybrid(low, full),
        "amp_full+phase_low": swap_hybrid(full, low),
        "full": full,
    }
    rows = []
    for key, label in SWAP_CONFIGS:
        img = images[key]
        rows.append(dict(config=key, label=label, psnr=psnr(img, truth), rmse=rmse(img, truth),
                         suv_max=suv_max(img, roi)))
    return SwapReport(rows)


def angular_distance(p1, p2):
    """Wrapped distance between phases, in [0, pi]."""
    return np.abs(np.arctan2(np.sin(p1 - p2), np.cos(p1 - p2)))


def ring_index(shape, n_radial_bands):
    """Equal-width rings over normalized radius [0, sqrt(2)/2], unshifted layout."""
    r = spectral.radial_frequency(shape)
    edges = np.linspace(0.0, np.sqrt(2) / 2, n_radial_bands + 1)
    idx = np.clip(np.digitize(r, edges[1:-1]), 0, n_radial_bands - 1)
    return idx, edges


@dataclass
class DeviationProfile:
    ring_edges: np.ndarray
    amp_dev: np.ndarray  # mean |log A_low - log A_full| per ring
    amp_var: np.ndarray  # variance of the log-amplitude difference per ring
    phase_dev: np.ndarray  # mean wrapped angular distance per ring
    phase_var: np.ndarray  # variance of the wrapped phase difference per ring
    bands: dict = field(default_factory=dict)  # per Haar band statistics

    def to_table(self):
        lines = [f"{'ring':>4} {'r_lo':>6} {'r_hi':>6} {'amp_dev':>9} {'amp_var':>9} {'phase_dev':>9} {'phase_var':>9}"]
        for i in range(len(self.amp_dev)):
            lines.append(
                f"{i:>4} {self.ring_edges[i]:>6.3f} {self.ring_edges[i + 1]:>6.3f} {self.amp_dev[i]:>9.4f} "
                f"{self.amp_var[i]:>9.4f} {self.phase_dev[i]:>9.4f} {self.phase_var[i]:>9.4f}"
            )
        lines.append(f"{'band':>4} {'amp_dev':>9} {'amp_var':>9} {'phase_dev':>9} {'phase_var':>9}")
        for name, st in self.bands.items():
            lines.append(f"{name:>4} {st['amp_dev']:>9.4f} {st['amp_var']:>9.4f} "
                         f"{st['phase_dev']:>9.4f} {st['phase_var']:>9.4f}")
        return "\n".join(lines)

    def to_records(self):
        recs = [dict(ring=i, r_lo=float(self.ring_edges[i]), r_hi=float(self.ring_edges[i + 1]),
                     amp_dev=float(self.amp_dev[i]), amp_var=float(self.amp_var[i]),
                     phase_dev=float(self.phase_dev[i]), phase_var=float(self.phase_var[i]))
                for i in range(len(self.amp_dev))]
        recs += [dict(band=k, **{m: float(v) for m, v in st.items()}) for k, st in self.bands.items()]
        return "\n".join(json.dumps(r) for r in recs)


def _spectral_diffs(low, full, eps):
    a1, p1 = spectral.amp_phase(spectral.fft2(low))
    a2, p2 = spectral.amp_phase(spectral.fft2(full))
    dlog = np.log(a1 + eps) - np.log(a2 + eps)
    dphi = np.arctan2(np.sin(p1 - p2), np.cos(p1 - p2))
    return dlog, dphi


def _stats(dlog, dphi):
    return dict(amp_dev=float(np.mean(np.abs(dlog))), amp_var=float(np.var(dlog)),
                phase_dev=float(np.mean(np.abs(dphi))), phase_var=float(np.var(dphi)))


def deviation_profile(low, full, n_radial_bands=8, eps=EPS):
    """Amplitude and phase deviations of ``low`` from ``full`` per radial ring
    and per Haar sub-band."""
    low = check_image(low, "low", min_size=2)
    full = check_image(full, "full", min_size=2)
    check_same_shape(low, full, ("low", "full"))
    if n_radial_bands < 2:
        raise ValueError("n_radial_bands must be >= 2")
    dlog, dphi = _spectral_diffs(low, full, eps)
    idx, edges = ring_index(low.shape, n_radial_bands)
    out = {k: np.full(n_radial_bands, np.nan) for k in ("amp_dev", "amp_var", "phase_dev", "phase_var")}
    for i in range(n_radial_bands):
        sel = idx == i
        if sel.any():
            for k, v in _stats(dlog[sel], dphi[sel]).items():
                out[k][i] = v
    bl = spectral.dwt2_haar(low).as_dict()
    bf = spectral.dwt2_haar(full).as_dict()
    bands = {name: _stats(*_spectral_diffs(bl[name], bf[name], eps)) for name in spectral.BAND_NAMES}
    return DeviationProfile(edges, bands=bands, **out)


def freq_error_map(recon, reference, eps=EPS):
    """Centred log-magnitude spectrum difference; positive means overestimation."""
    recon = check_image(recon, "recon")
    reference = check_image(reference, "reference")
    check_same_shape(recon, reference, ("recon", "reference"))
    a1 = np.abs(spectral.fft2(recon))
    a2 = np.abs(spectral.fft2(reference))
    return np.fft.fftshift(np.log(a1 + eps) - np.log(a2 + eps))


def reconstruct_pair(A, pair, n_iters=4, n_subsets=8):
    """OSEM reconstructions of a simulated pair, calibrated to activity units.

    Returns ``(low, full)``: the low-dose image is divided by
    ``dose * scale`` and the full-dose image by ``scale``.
    """
    s = pair.scale
    low = osem(A, pair.y_low, n_iters, n_subsets) / (pair.cfg.dose_fraction * s)
    full = osem(A, pair.y_full, n_iters, n_subsets) / s
    return low, full


def score_batch(recons, truths):
    """Mean PSNR, SSIM and RMSE of a stack of reconstructions against references."""
    recons = np.asarray(recons, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    check_same_shape(recons, truths, ("recons", "truths"))
    rows = [(psnr(r, t), ssim(r, t), rmse(r, t)) for r, t in zip(recons, truths)]
    p, s, e = np.mean(rows, axis=0)
    return dict(psnr=float(p), ssim=float(s), rmse=float(e))
