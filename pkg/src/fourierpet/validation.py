"""Input validation helpers shared by the estimators and the functional API."""

import numpy as np


def check_image(img, name="image", nonneg=False, min_size=1):
    """Return ``img`` as a finite 2D float64 array, raising ``ValueError`` otherwise."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {arr.shape}")
    if min(arr.shape) < min_size:
        raise ValueError(f"{name} has degenerate shape {arr.shape} (each side must be >= {min_size})")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if nonneg and np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative (min={arr.min():.3g})")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if np.shape(a) != np.shape(b):
        raise ValueError(
            f"shape mismatch: {names[0]} has shape {np.shape(a)}, {names[1]} has shape {np.shape(b)}"
        )


def check_batch(arr, shape, name="input"):
    """Coerce a single item or a stack of items with trailing ``shape`` to 3D.

    Returns the stacked array and a flag telling whether the input was a
    single item (so callers can squeeze the result back).
    """
    arr = np.asarray(arr, dtype=np.float64)
    shape = tuple(shape)
    if arr.shape == shape:
        return arr[None], True
    if arr.ndim == len(shape) + 1 and arr.shape[1:] == shape:
        return arr, False
    raise ValueError(f"{name} has shape {arr.shape}, expected {shape} or (n, *{shape})")
