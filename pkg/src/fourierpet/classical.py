"""MLEM and OSEM baselines.

Both accept either a :class:`~fourierpet.projector.SystemMatrix` (images and
sinograms are 2D grids) or a plain dense/sparse matrix (images and data are
flat vectors). The multiplicative update

    x <- x * A^T (y / A x) / A^T 1

uses ``y / Ax := 0`` wherever ``Ax`` falls below ``1e-12`` and leaves pixels
with zero sensitivity at zero.
"""

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin

from .projector import SystemMatrix
from .validation import check_batch

_TINY = 1e-12


def _operator(A):
    """Return (matrix, image_shape, data_shape) for a system or raw matrix."""
    if isinstance(A, SystemMatrix):
        return A.matrix, A.image_shape, A.sino_shape
    if sp.issparse(A):
        mat = A.tocsr()
    else:
        mat = np.asarray(A, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError(f"system matrix must be 2D, got shape {mat.shape}")
    return mat, (mat.shape[1],), (mat.shape[0],)


def _prepare(A, y, x0):
    mat, img_shape, data_shape = _operator(A)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != data_shape:
        raise ValueError(f"data shape {y.shape} does not match system data shape {data_shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("data contain non-finite values")
    if np.any(y < 0):
        raise ValueError("data must be nonnegative")
    if x0 is None:
        x = np.ones(mat.shape[1])
    else:
        x = np.asarray(x0, dtype=np.float64)
        if x.shape != img_shape:
            raise ValueError(f"x0 shape {x.shape} does not match image shape {img_shape}")
        if np.any(x < 0):
            raise ValueError("x0 must be nonnegative")
        x = x.ravel().copy()
    return mat, img_shape, y.ravel(), x


def _ratio(y, proj):
    out = np.zeros_like(y)
    np.divide(y, proj, out=out, where=proj > _TINY)
    return out


def _em_step(mat, matT, y, x, sens):
    back = matT @ _ratio(y, mat @ x)
    upd = np.zeros_like(x)
    np.divide(back, sens, out=upd, where=sens > _TINY)
    return x * upd


def poisson_loglik(A, y, x):
    """Poisson log-likelihood ``sum(y log(Ax) - Ax)`` (constant terms dropped)."""
    mat, _, _ = _operator(A)
    proj = mat @ np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    pos = y > 0
    with np.errstate(divide="ignore"):
        return float(np.sum(y[pos] * np.log(proj[pos])) - proj.sum())


def mlem(A, y, n_iters=50, x0=None, callback=None):
    """Maximum-likelihood EM reconstruction.

    Parameters
    ----------
    A : SystemMatrix or array_like or sparse matrix
    y : array_like
        Nonnegative measured counts.
    n_iters : int
    x0 : array_like, optional
        Nonnegative start image (uniform ones by default).
    callback : callable, optional
        Called as ``callback(k, x)`` after every iteration with the image
        reshaped to the system's image shape.
    """
    mat, img_shape, y, x = _prepare(A, y, x0)
    matT = mat.T.tocsr() if sp.issparse(mat) else mat.T
    sens = np.asarray(matT @ np.ones(mat.shape[0])).ravel()
    for k in range(int(n_iters)):
        x = _em_step(mat, matT, y, x, sens)
        if callback is not None:
            callback(k, x.reshape(img_shape))
    return x.reshape(img_shape)


def subset_rows(A, n_subsets):
    """Row indices of each angle-interleaved subset (angle i -> subset i mod n)."""
    n_subsets = int(n_subsets)
    if isinstance(A, SystemMatrix):
        n_angles, n_bins = A.n_angles, A.n_bins
    else:
        mat, _, _ = _operator(A)
        n_angles, n_bins = mat.shape[0], 1
    if n_subsets < 1 or n_angles % n_subsets:
        raise ValueError(f"n_subsets={n_subsets} must be >= 1 and divide n_angles={n_angles}")
    out = []
    for s in range(n_subsets):
        angles = np.arange(s, n_angles, n_subsets)
        out.append((angles[:, None] * n_bins + np.arange(n_bins)[None, :]).ravel())
    return out


def osem(A, y, n_iters=4, n_subsets=8, x0=None, callback=None):
    """Ordered-subsets EM; ``n_iters`` counts full passes over all subsets.

    With ``n_subsets=1`` this performs exactly the MLEM update sequence.
    ``callback(k, x)`` fires after every sub-iteration.
    """
    rows = subset_rows(A, n_subsets)
    mat, img_shape, y, x = _prepare(A, y, x0)
    if n_subsets == 1:
        blocks = [(mat, y)]
    else:
        blocks = [(mat[r], y[r]) for r in rows]
    ops = []
    for sub, ysub in blocks:
        subT = sub.T.tocsr() if sp.issparse(sub) else sub.T
        sens = np.asarray(subT @ np.ones(sub.shape[0])).ravel()
        ops.append((sub, subT, ysub, sens))
    k = 0
    for _ in range(int(n_iters)):
        for sub, subT, ysub, sens in ops:
            x = _em_step(sub, subT, ysub, x, sens)
            if callback is not None:
                callback(k, x.reshape(img_shape))
            k += 1
    return x.reshape(img_shape)


class _EMReconstructor(BaseEstimator, TransformerMixin):
    """Shared plumbing: stateless 'fit', batched 'predict'."""

    def fit(self, Y=None, X=None):
        _operator(self.system)
        self.n_features_in_ = int(np.prod(_operator(self.system)[2]))
        return self

    def transform(self, Y):
        return self.predict(Y)

    def predict(self, Y):
        _, _, data_shape = _operator(self.system)
        Y, single = check_batch(Y, data_shape, "sinogram")
        out = np.stack([self._reconstruct(y) for y in Y])
        return out[0] if single else out


class MLEMReconstructor(_EMReconstructor):
    """MLEM as a transformer from sinograms to images.

    Parameters
    ----------
    system : SystemMatrix or matrix
    n_iters : int, default=50
    """

    def __init__(self, system, n_iters=50):
        self.system = system
        self.n_iters = n_iters

    def _reconstruct(self, y):
        return mlem(self.system, y, self.n_iters)


class OSEMReconstructor(_EMReconstructor):
    """OSEM as a transformer; defaults (8 subsets x 4 epochs) match the
    reference reconstructions used throughout the package."""

    def __init__(self, system, n_iters=4, n_subsets=8):
        self.system = system
        self.n_iters = n_iters
        self.n_subsets = n_subsets

    def _reconstruct(self, y):
        return osem(self.system, y, self.n_iters, self.n_subsets)
