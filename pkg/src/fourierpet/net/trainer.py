"""Training loop: AdamW with cosine decay over mini-batches of sinogram/truth pairs."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..autodiff import AdamW, Tensor, backward
from .model import FourierPETNet, ForwardTrace, ReconConfig, composite_loss, initial_estimate

_DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 4
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 < self.lr_end <= self.lr_start:
            raise ValueError("need 0 < lr_end <= lr_start")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {tuple(_DTYPES)}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainHistory:
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    optimizer: object = None  # final AdamW state, for checkpointing

    def mu_trajectory(self):
        """Array of shape (n_steps, K): each stage's mu after every optimizer step."""
        return np.array([s["mu"] for s in self.steps])

    def epoch_residuals(self):
        """Array of shape (n_epochs, K): mean primal residual per stage and epoch."""
        return np.array([e["residual"] for e in self.epochs])


def normalize_truth(X):
    """Scale each truth image to unit maximum (the network's output units)."""
    X = np.asarray(X, dtype=np.float64)
    peak = X.reshape(len(X), -1).max(axis=1)
    return X / np.where(peak > 0, peak, 1.0)[:, None, None]


def train(A, Y, X, recon_cfg=None, train_cfg=None, log=None, net=None):
    """Fit a :class:`FourierPETNet` to sinograms ``Y`` and truth images ``X``.

    Parameters
    ----------
    A : SystemMatrix
    Y : ndarray, shape (n, n_angles, n_bins)
        Low-count sinograms.
    X : ndarray, shape (n, H, W)
        Ground-truth activity; each image is scaled to unit maximum.
    recon_cfg : ReconConfig, optional
    train_cfg : TrainConfig, optional
    log : file-like, optional
        Receives one JSON record per optimizer step and per epoch.
    net : FourierPETNet, optional
        Start from this network instead of a fresh one.

    Returns
    -------
    net : FourierPETNet
    history : TrainHistory
    """
    recon_cfg = ReconConfig() if recon_cfg is None else recon_cfg
    train_cfg = TrainConfig() if train_cfg is None else train_cfg
    Y = np.asarray(Y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if Y.ndim != 3 or len(Y) == 0:
        raise ValueError(f"need a non-empty stack of sinograms, got shape {Y.shape}")
    if len(X) != len(Y) or X.shape[1:] != tuple(A.image_shape):
        raise ValueError(f"truth stack {X.shape} does not match {len(Y)} sinograms of geometry {A.image_shape}")
    dtype = _DTYPES[train_cfg.dtype]
    net = FourierPETNet(recon_cfg, dtype) if net is None else net
    b_all = initial_estimate(A, Y).astype(dtype)
    t_all = normalize_truth(X)[:, None].astype(dtype)

    n = len(Y)
    bs = min(train_cfg.batch_size, n)
    per_epoch = math.ceil(n / bs)
    params = net.parameters()
    opt = AdamW(params, train_cfg.epochs * per_epoch, train_cfg.lr_start, train_cfg.lr_end,
                (train_cfg.beta1, train_cfg.beta2), weight_decay=train_cfg.weight_decay,
                decay=[k for k, p in params.items() if p.ndim >= 2])
    rng = np.random.default_rng(train_cfg.seed)
    hist = TrainHistory(optimizer=opt)
    _emit(log, dict(kind="config", recon=recon_cfg.to_dict(), train=train_cfg.to_dict(), n_pairs=n))

    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n)
        losses, residuals = [], []
        for i in range(per_epoch):
            idx = np.sort(order[i * bs:(i + 1) * bs])
            trace = ForwardTrace()
            out = net.forward_from(Tensor(b_all[idx]), trace)
            loss, terms = composite_loss(out, Tensor(t_all[idx]), recon_cfg.loss_weights,
                                         recon_cfg.smooth_l1_delta, terms=True)
            opt.zero_grad()
            backward(loss)
            lr = opt.step()
            rec = dict(kind="step", step=opt.step_count, epoch=epoch + 1, loss=float(loss.data),
                       terms=terms, lr=lr, mu=net.mu_values(), residual=trace.residuals)
            hist.steps.append(rec)
            _emit(log, rec)
            losses.append(rec["loss"])
            residuals.append(trace.residuals)
        ep = dict(kind="epoch", epoch=epoch + 1, loss=float(np.mean(losses)),
                  residual=np.mean(residuals, axis=0).tolist(), mu=net.mu_values())
        hist.epochs.append(ep)
        _emit(log, ep)
    return net, hist


def _emit(log, rec):
    if log is not None:
        log.write(json.dumps(rec) + "\n")
        log.flush()
