"""Parallel-beam system matrix with exact adjoint.

Rows of the matrix are rays indexed ``angle * n_bins + bin``; columns are
pixels in row-major order. Weights are ray/pixel intersection lengths, so the
backprojector is the exact transpose of the projector.

Geometry: the image is centred on the origin, pixel ``(row, col)`` covers
``x in [col - W/2, col + 1 - W/2]`` and ``y in [row - H/2, row + 1 - H/2]``
(times ``pixel_size``). Ray ``(theta, s)`` is the line ``x cos(theta) +
y sin(theta) = s`` with ``theta`` uniformly spaced over ``[0, pi)`` and bin
centres ``s`` spaced one pixel apart around zero.
"""

import os
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

_MAGIC = b"PSYS"
_VERSION = 1
_TRIPLE = np.dtype([("ray", "<u4"), ("pixel", "<u4"), ("weight", "<f8")])


@dataclass(frozen=True, eq=False)
class SystemMatrix:
    image_shape: tuple
    n_angles: int
    n_bins: int
    pixel_size: float
    matrix: sp.csr_matrix

    @property
    def sino_shape(self):
        return (self.n_angles, self.n_bins)

    @property
    def angles(self):
        return np.arange(self.n_angles) * np.pi / self.n_angles

    @cached_property
    def matrix_t(self):
        return self.matrix.T.tocsr()

    @cached_property
    def sensitivity(self):
        """Backprojection of a sinogram of ones (per-pixel total path length)."""
        return self.backproject(np.ones(self.sino_shape))

    def forward(self, x):
        return forward(self, x)

    def backproject(self, y):
        return backproject(self, y)

    def __repr__(self):
        return (
            f"SystemMatrix(image_shape={self.image_shape}, n_angles={self.n_angles}, "
            f"n_bins={self.n_bins}, nnz={self.matrix.nnz})"
        )


def _trace_angle(theta, s, shape, pixel_size):
    """Intersection lengths of all rays at one angle (vectorised over bins)."""
    h, w = shape
    xmin, xmax = -w / 2 * pixel_size, w / 2 * pixel_size
    ymin, ymax = -h / 2 * pixel_size, h / 2 * pixel_size
    c, sn = np.cos(theta), np.sin(theta)
    # exact zeros keep axis-aligned rays axis-aligned
    c = 0.0 if abs(c) < 1e-15 else c
    sn = 0.0 if abs(sn) < 1e-15 else sn
    px, py = s * c, s * sn  # foot point on each ray; direction is (-sn, c)

    with np.errstate(divide="ignore", invalid="ignore"):
        if sn != 0.0:
            tx = np.sort(np.stack([(px - xmin) / sn, (px - xmax) / sn]), axis=0)
        else:
            inside = (px >= xmin) & (px <= xmax)
            tx = np.where(inside, np.array([[-np.inf], [np.inf]]), np.nan)
        if c != 0.0:
            ty = np.sort(np.stack([(ymin - py) / c, (ymax - py) / c]), axis=0)
        else:
            inside = (py >= ymin) & (py <= ymax)
            ty = np.where(inside, np.array([[-np.inf], [np.inf]]), np.nan)
    t0 = np.maximum(tx[0], ty[0])
    t1 = np.minimum(tx[1], ty[1])
    hit = np.isfinite(t0) & np.isfinite(t1) & (t1 > t0)
    t0 = np.where(hit, t0, 0.0)
    t1 = np.where(hit, t1, 0.0)

    crossings = [t0[:, None], t1[:, None]]
    with np.errstate(divide="ignore", invalid="ignore"):
        if sn != 0.0:
            xs = xmin + np.arange(w + 1) * pixel_size
            crossings.append((px[:, None] - xs[None, :]) / sn)
        if c != 0.0:
            ys = ymin + np.arange(h + 1) * pixel_size
            crossings.append((ys[None, :] - py[:, None]) / c)
    t = np.concatenate(crossings, axis=1)
    t = np.clip(t, t0[:, None], t1[:, None])
    t.sort(axis=1)
    lengths = np.diff(t, axis=1)
    tm = 0.5 * (t[:, 1:] + t[:, :-1])
    xm = px[:, None] - tm * sn
    ym = py[:, None] + tm * c
    col = np.clip(np.floor((xm - xmin) / pixel_size).astype(np.int64), 0, w - 1)
    row = np.clip(np.floor((ym - ymin) / pixel_size).astype(np.int64), 0, h - 1)
    keep = lengths > 1e-12 * pixel_size
    bins = np.broadcast_to(np.arange(len(s))[:, None], lengths.shape)
    return bins[keep], row[keep] * w + col[keep], lengths[keep]


def _cache_path(cache_dir, shape, n_angles, n_bins, pixel_size):
    name = f"psys_{shape[0]}x{shape[1]}_a{n_angles}_b{n_bins}_p{pixel_size:g}.bin"
    return os.path.join(cache_dir, name)


def build_parallel_projector(image_dims, n_angles=None, n_bins=None, pixel_size=1.0, cache_dir=None):
    """Build the sparse parallel-beam projector for an ``(H, W)`` image.

    Parameters
    ----------
    image_dims : tuple of int
        Image shape ``(H, W)``.
    n_angles : int, optional
        Number of projection angles over ``[0, pi)``; defaults to ``H``.
    n_bins : int, optional
        Detector bins per angle, one pixel wide; defaults to ``W``.
    pixel_size : float
        Physical pixel width; weights scale linearly with it.
    cache_dir : str, optional
        If given, the matrix is loaded from / stored to a ``PSYS`` file in
        this directory, keyed by the geometry.
    """
    h, w = (int(v) for v in image_dims)
    if h < 1 or w < 1:
        raise ValueError(f"image dims must be positive, got {(h, w)}")
    n_angles = h if n_angles is None else int(n_angles)
    n_bins = w if n_bins is None else int(n_bins)
    if n_angles < 1 or n_bins < 1:
        raise ValueError(f"need n_angles >= 1 and n_bins >= 1, got {n_angles}, {n_bins}")
    if pixel_size <= 0:
        raise ValueError("pixel_size must be positive")

    if cache_dir is not None:
        path = _cache_path(cache_dir, (h, w), n_angles, n_bins, pixel_size)
        if os.path.exists(path):
            return load_system_matrix(path)

    s = (np.arange(n_bins) - (n_bins - 1) / 2) * pixel_size
    rows, cols, vals = [], [], []
    for a in range(n_angles):
        b, pix, lengths = _trace_angle(a * np.pi / n_angles, s, (h, w), pixel_size)
        rows.append(a * n_bins + b)
        cols.append(pix)
        vals.append(lengths)
    coo = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_angles * n_bins, h * w),
    )
    A = SystemMatrix((h, w), n_angles, n_bins, float(pixel_size), coo.tocsr())
    A.matrix.sum_duplicates()
    A.matrix.sort_indices()

    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        save_system_matrix(A, path)
    return A


def _check_dims(arr, shape, what):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape[-2:] != tuple(shape) or arr.ndim not in (2, 3):
        raise ValueError(f"{what} shape {arr.shape} does not match system geometry {tuple(shape)}")
    return arr


def forward(A, x):
    """Project an image (or a stack of images) to sinogram space."""
    x = _check_dims(x, A.image_shape, "image")
    flat = x.reshape(-1, A.matrix.shape[1])
    out = (A.matrix @ flat.T).T
    return out.reshape(x.shape[:-2] + A.sino_shape)


def backproject(A, y):
    """Apply the exact transpose of :func:`forward`."""
    y = _check_dims(y, A.sino_shape, "sinogram")
    flat = y.reshape(-1, A.matrix.shape[0])
    out = (A.matrix_t @ flat.T).T
    return out.reshape(y.shape[:-2] + A.image_shape)


def save_system_matrix(A, path):
    coo = A.matrix.tocoo()
    triples = np.empty(coo.nnz, dtype=_TRIPLE)
    triples["ray"] = coo.row
    triples["pixel"] = coo.col
    triples["weight"] = coo.data
    h, w = A.image_shape
    header = _MAGIC + struct.pack("<HIIIId", _VERSION, w, h, A.n_angles, A.n_bins, A.pixel_size)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(struct.pack("<Q", coo.nnz))
        fh.write(triples.tobytes())
    os.replace(tmp, path)


def load_system_matrix(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a PSYS file")
        version, w, h, n_angles, n_bins, pixel_size = struct.unpack("<HIIIId", fh.read(26))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported PSYS version {version}")
        (nnz,) = struct.unpack("<Q", fh.read(8))
        triples = np.frombuffer(fh.read(nnz * _TRIPLE.itemsize), dtype=_TRIPLE)
    if len(triples) != nnz:
        raise ValueError(f"{path}: truncated payload")
    mat = sp.csr_matrix(
        (triples["weight"].astype(np.float64), (triples["ray"].astype(np.int64), triples["pixel"].astype(np.int64))),
        shape=(n_angles * n_bins, h * w),
    )
    mat.sort_indices()
    return SystemMatrix((h, w), n_angles, n_bins, pixel_size, mat)
