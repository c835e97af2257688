"""Synthetic phantoms and low-count degradation.

Counts are drawn from a counter-based generator (Philox) so every call is
reproducible from its seed. The low-dose sinogram is a binomial thinning of
the full-dose one: when the full-dose counts are Poisson with mean ``m`` and
each count survives with probability ``p``, the survivors are Poisson with
mean ``p * m``. This keeps the two acquisitions physically coupled (the
low-dose scan is a subset of the full one) and makes ``dose_fraction = 1``
return the full-dose data verbatim.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .projector import forward
from .validation import check_image

PHANTOM_KINDS = ("ellipse_brain", "hot_spheres", "checker_lesions")


@dataclass
class Phantom:
    activity: np.ndarray
    roi_masks: dict
    seed: int
    kind: str = ""
    lesion_peaks: dict = field(default_factory=dict)

    @property
    def lesion_mask(self):
        masks = [m for k, m in self.roi_masks.items() if k.startswith("lesion")]
        return np.logical_or.reduce(masks)


@dataclass
class DegradationConfig:
    dose_fraction: float = 0.1
    ac_bias_strength: float = 0.3
    ac_bias_scale: float = 8.0
    seed: int = 0
    full_count_mean: float = 50.0

    def __post_init__(self):
        if not 0.0 < self.dose_fraction <= 1.0:
            raise ValueError(f"dose_fraction must lie in (0, 1], got {self.dose_fraction}")
        if not 0.0 <= self.ac_bias_strength < 1.0:
            raise ValueError(f"ac_bias_strength must lie in [0, 1), got {self.ac_bias_strength}")
        if self.ac_bias_scale <= 0:
            raise ValueError("ac_bias_scale must be positive")
        if self.full_count_mean <= 0:
            raise ValueError("full_count_mean must be positive")


def _rng(seed, stream=0):
    return np.random.Generator(np.random.Philox(key=[int(seed), int(stream)]))


def _ellipse(yy, xx, cy, cx, ry, rx, angle=0.0):
    ca, sa = np.cos(angle), np.sin(angle)
    u = (xx - cx) * ca + (yy - cy) * sa
    v = -(xx - cx) * sa + (yy - cy) * ca
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _place_lesions(rng, support, yy, xx, n, radius_range, avoid=None):
    """Draw ``n`` non-overlapping discs fully inside ``support``."""
    taken = np.zeros_like(support) if avoid is None else avoid.copy()
    discs = []
    for _ in range(5000):
        if len(discs) == n:
            break
        r = rng.uniform(*radius_range)
        cy, cx = rng.uniform(0, support.shape[0]), rng.uniform(0, support.shape[1])
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        ring = (yy - cy) ** 2 + (xx - cx) ** 2 <= (r + 1.5) ** 2
        if disc.sum() < 3 or not np.all(support[ring]) or np.any(taken[ring]):
            continue
        taken |= ring
        discs.append(disc)
    if len(discs) < 2:
        raise RuntimeError("could not place lesions; phantom support too small")
    return discs


def make_phantom(kind="ellipse_brain", dims=(32, 32), seed=0):
    """Piecewise-smooth activity phantom with 2-6 hot lesions.

    Lesions are flat discs, so the maximum inside each lesion ROI equals its
    planted peak value (recorded in ``lesion_peaks``).
    """
    if kind not in PHANTOM_KINDS:
        raise ValueError(f"unknown phantom kind {kind!r}; choose from {PHANTOM_KINDS}")
    h, w = (int(v) for v in dims)
    if h < 32 or w < 32:
        raise ValueError(f"phantom dims must be at least 32x32, got {(h, w)}")
    rng = _rng(seed, stream=1)
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    cy, cx = h / 2 + rng.uniform(-1, 1), w / 2 + rng.uniform(-1, 1)
    scale = min(h, w) / 2
    n_lesions = int(rng.integers(2, 7))

    if kind == "ellipse_brain":
        head = _ellipse(yy, xx, cy, cx, 0.82 * scale * rng.uniform(0.9, 1.0),
                        0.68 * scale * rng.uniform(0.9, 1.0), rng.uniform(-0.3, 0.3))
        inner = _ellipse(yy, xx, cy, cx, 0.66 * scale, 0.52 * scale)
        act = np.where(head, 0.35, 0.0)
        act = np.where(inner, 0.25, act)
        # grey-matter-like ventricle pair plus a gentle gradient
        for side in (-1, 1):
            act[_ellipse(yy, xx, cy, cx + side * 0.18 * scale, 0.22 * scale, 0.08 * scale)] = 0.1
        act = act * np.where(head, 1.0 + 0.15 * (yy - cy) / scale, 0.0)
        support = inner
        background = inner
        radius = (1.5, 0.14 * scale)
    elif kind == "hot_spheres":
        body = _ellipse(yy, xx, cy, cx, 0.85 * scale, 0.85 * scale)
        act = np.where(body, rng.uniform(0.2, 0.3), 0.0)
        support = body
        background = body
        radius = (1.6, 0.16 * scale)
    else:
        body = _ellipse(yy, xx, cy, cx, 0.8 * scale, 0.9 * scale)
        cell = max(4, int(min(h, w) // 8))
        checker = ((np.floor(yy / cell) + np.floor(xx / cell)) % 2).astype(float)
        act = np.where(body, 0.2 + 0.08 * checker, 0.0)
        support = body
        background = body
        radius = (1.5, 0.12 * scale)

    discs = _place_lesions(rng, support, yy, xx, n_lesions, radius)
    bg_mean = act[background].mean()
    masks = {}
    peaks = {}
    for i, disc in enumerate(discs):
        peak = bg_mean * rng.uniform(2.5, 4.0)
        act[disc] = peak
        masks[f"lesion_{i}"] = disc
        peaks[f"lesion_{i}"] = float(peak)
    lesions = np.logical_or.reduce(discs)
    masks["background"] = background & ~lesions
    act = np.clip(act, 0.0, None)
    return Phantom(activity=act, roi_masks=masks, seed=int(seed), kind=kind, lesion_peaks=peaks)


def bias_field(shape, cfg):
    """Smooth multiplicative gain ``1 - strength * g`` with ``g`` in [0, 1]."""
    if cfg.ac_bias_strength == 0:
        return np.ones(shape)
    noise = _rng(cfg.seed, stream=2).standard_normal(shape)
    g = ndimage.gaussian_filter(noise, sigma=cfg.ac_bias_scale / 2, mode="reflect")
    span = g.max() - g.min()
    g = (g - g.min()) / span if span > 0 else np.zeros(shape)
    return 1.0 - cfg.ac_bias_strength * g


def apply_ac_bias(img, cfg):
    """Multiply ``img`` by a seeded smooth gain field with values in (0, 1]."""
    if not 0.0 <= cfg.ac_bias_strength < 1.0:
        raise ValueError(f"ac_bias_strength must lie in [0, 1), got {cfg.ac_bias_strength}")
    img = check_image(img, "image")
    return img * bias_field(img.shape, cfg)


def count_scale(A, activity, cfg):
    """Full-dose scale so that the mean expected full-count bin equals ``cfg.full_count_mean``."""
    mean = forward(A, activity).mean()
    return float(cfg.full_count_mean / mean) if mean > 0 else 0.0


def simulate_counts(A, phantom, cfg, low_activity=None, scale=None):
    """Sample full- and low-dose sinograms.

    ``y_full ~ Poisson(s * A @ activity)`` and ``y_low`` is its binomial
    thinning with per-bin survival ``dose * (A @ low_activity) / (A @ activity)``,
    i.e. ``y_low ~ Poisson(dose * s * A @ low_activity)``. ``low_activity``
    defaults to the phantom activity; passing an AC-biased copy (pointwise
    no larger than the activity) models a miscorrected low-dose scan.

    Returns
    -------
    y_low, y_full : ndarray
        Integer-valued count sinograms (float64 storage).
    """
    if not 0.0 < cfg.dose_fraction <= 1.0:
        raise ValueError(f"dose_fraction must lie in (0, 1], got {cfg.dose_fraction}")
    activity = phantom.activity if isinstance(phantom, Phantom) else phantom
    activity = check_image(activity, "activity", nonneg=True)
    s = count_scale(A, activity, cfg) if scale is None else float(scale)
    mean_full = s * forward(A, activity)
    if low_activity is None:
        keep = np.full(mean_full.shape, cfg.dose_fraction)
    else:
        low_activity = check_image(low_activity, "low_activity", nonneg=True)
        mean_low = s * forward(A, low_activity)
        with np.errstate(divide="ignore", invalid="ignore"):
            keep = np.where(mean_full > 0, cfg.dose_fraction * mean_low / mean_full, 0.0)
        if np.any(keep > 1.0 + 1e-12):
            raise ValueError("low_activity projects above the full-dose activity; thinning impossible")
        keep = np.clip(keep, 0.0, 1.0)
    rng = _rng(cfg.seed, stream=3)
    y_full = rng.poisson(mean_full).astype(np.float64)
    if cfg.dose_fraction == 1.0 and low_activity is None:
        return y_full.copy(), y_full
    y_low = rng.binomial(y_full.astype(np.int64), keep).astype(np.float64)
    return y_low, y_full


@dataclass
class SimulatedPair:
    """One degraded acquisition together with everything needed to score it."""

    phantom: Phantom
    cfg: DegradationConfig
    scale: float
    y_low: np.ndarray
    y_full: np.ndarray
    biased_activity: np.ndarray

    @property
    def truth(self):
        return self.phantom.activity


def simulate_pair(A, phantom, cfg, bias=True):
    """Truth plus low/full sinograms; the low arm carries the AC bias when ``bias``."""
    activity = phantom.activity
    biased = apply_ac_bias(activity, cfg) if bias else activity
    s = count_scale(A, activity, cfg)
    y_low, y_full = simulate_counts(A, phantom, cfg, low_activity=biased if bias else None, scale=s)
    return SimulatedPair(phantom, cfg, s, y_low, y_full, biased)
