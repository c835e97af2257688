"""The unrolled ADMM network and its training loss."""

from dataclasses import asdict, dataclass, field

import numpy as np

from ..autodiff import Tensor, no_grad, ops
from ..autodiff.checkpoint import load_checkpoint, save_checkpoint
from ..projector import SystemMatrix, backproject
from .modules import APCM, APCM_MODES, SCM, Module, param


@dataclass
class ReconConfig:
    """Architecture and loss settings.

    ``rho``, ``lambda_a`` and ``lambda_p`` are the penalty and prior weights of
    the underlying splitting problem. The learned modules realize the
    corresponding sub-steps directly, so these values are carried for
    bookkeeping and do not enter the forward computation.
    """

    K: int = 3
    N: int = 2
    rho: float = 0.1
    lambda_a: float = 1.0
    lambda_p: float = 1.0
    apcm_mode: str = "targeted"
    loss_weights: tuple = (0.5, 0.3, 0.01)
    smooth_l1_delta: float = 1.0
    channels: int = 16
    shared_mu: bool = False
    seed: int = 0

    def __post_init__(self):
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if int(self.K) < 1 or int(self.N) < 1:
            raise ValueError(f"K and N must be >= 1, got K={self.K}, N={self.N}")
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.apcm_mode not in APCM_MODES:
            raise ValueError(f"apcm_mode must be one of {APCM_MODES}, got {self.apcm_mode!r}")
        if len(self.loss_weights) != 3 or any(w < 0 for w in self.loss_weights):
            raise ValueError(f"loss_weights must be three nonnegative numbers, got {self.loss_weights}")
        if self.smooth_l1_delta <= 0 or self.channels < 1:
            raise ValueError("smooth_l1_delta and channels must be positive")
        self.K, self.N, self.channels = int(self.K), int(self.N), int(self.channels)

    def to_dict(self):
        return asdict(self)


def initial_estimate(A, Y):
    """Sensitivity-corrected backprojection scaled to unit maximum per sample.

    ``Y`` is a sinogram or a stack of sinograms; the result has shape
    ``(B, 1, H, W)``.
    """
    Y = np.asarray(Y, dtype=np.float64)
    single = Y.ndim == 2
    bp = backproject(A, Y)
    if single:
        bp = bp[None]
    sens = A.sensitivity
    out = np.zeros_like(bp)
    np.divide(bp, sens, out=out, where=sens > 1e-12)
    peak = out.reshape(len(out), -1).max(axis=1)
    peak = np.where(peak > 0, peak, 1.0)
    return (out / peak[:, None, None])[:, None]


@dataclass
class ForwardTrace:
    """Per-stage instrumentation of one forward pass."""

    residuals: list = field(default_factory=list)  # batch-mean ||x - z||_2 per stage
    mu: list = field(default_factory=list)


class FourierPETNet(Module):
    """K unrolled stages of (SCM x-update, APCM z-update, learnable dual step).

    Parameters
    ----------
    config : ReconConfig
    dtype : numpy dtype
        Parameter precision; float64 for gradient checks, float32 allowed
        for training.
    """

    def __init__(self, config=None, dtype=np.float64):
        self.config = ReconConfig() if config is None else config
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        self.scm = [SCM(cfg.channels, cfg.N, rng, dtype) for _ in range(cfg.K)]
        self.apcm = [APCM(cfg.channels, cfg.N, cfg.apcm_mode, rng, dtype) for _ in range(cfg.K)]
        n_mu = 1 if cfg.shared_mu else cfg.K
        self.mu = [param(np.ones(1), dtype) for _ in range(n_mu)]
        self.dtype = dtype

    def stage_mu(self, k):
        return self.mu[0 if self.config.shared_mu else k]

    def mu_values(self):
        return [float(self.stage_mu(k).data[0]) for k in range(self.config.K)]

    def forward_from(self, b, trace=None, states=None):
        """Run all stages from the initial estimate ``b`` of shape (B, 1, H, W).

        ``states`` (a list) collects the ``(x, z, u)`` tensors of every stage.
        """
        b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=self.dtype))
        if b.ndim != 4 or b.shape[1] != 1:
            raise ValueError(f"initial estimate must have shape (B, 1, H, W), got {b.shape}")
        z = b
        u = Tensor(np.zeros_like(b.data))
        x = b
        for k in range(self.config.K):
            x = self.scm[k](b, z, u)
            z = self.apcm[k](x + u)
            u = dam_u_update(u, x, z, self.stage_mu(k))
            if trace is not None:
                gap = np.sqrt(((x.data - z.data) ** 2).sum(axis=(1, 2, 3)))
                trace.residuals.append(float(gap.mean()))
                trace.mu.append(float(self.stage_mu(k).data[0]))
            if states is not None:
                states.append((x, z, u))
        return x

    def __call__(self, A, Y, trace=None):
        if not isinstance(A, SystemMatrix):
            raise TypeError("A must be a SystemMatrix")
        return self.forward_from(initial_estimate(A, Y).astype(self.dtype), trace)

    def predict(self, A, Y):
        """Reconstruct without recording a graph; returns (B, H, W) or (H, W)."""
        single = np.asarray(Y).ndim == 2
        with no_grad():
            out = self(A, Y).data[:, 0]
        return out[0] if single else out


def save_model(path, net, extra=None, optimizer=None):
    """Write ``net`` as an FPTC checkpoint; ``extra`` lands in the config block."""
    cfg = dict(recon=net.config.to_dict())
    cfg.update(extra or {})
    save_checkpoint(path, net.parameters(), cfg, optimizer)


def load_model(path, dtype=np.float64):
    """Rebuild a network from an FPTC checkpoint.

    Returns ``(net, config)`` where ``config`` is the stored config block.
    """
    params, cfg, _ = load_checkpoint(path)
    if "recon" not in cfg:
        raise ValueError(f"{path}: checkpoint carries no network config")
    recon = dict(cfg["recon"])
    recon["loss_weights"] = tuple(recon.get("loss_weights", (0.5, 0.3, 0.01)))
    net = FourierPETNet(ReconConfig(**recon), dtype)
    own = net.parameters()
    if set(own) != set(params):
        raise ValueError(f"{path}: parameter table does not match the configured architecture")
    for name, t in own.items():
        if params[name].shape != t.shape:
            raise ValueError(f"{path}: parameter {name} has shape {params[name].shape}, expected {t.shape}")
        t.data = params[name].astype(dtype)
    return net, cfg


def dam_u_update(u, x, z, mu):
    """Dual ascent step ``u + mu (x - z)``."""
    return u + mu * (x - z)


def fourierpet_forward(y, A, config=None, params=None):
    """Functional entry point: build (or reuse) a network and reconstruct ``y``.

    Returns ``(x_K, trace)`` with ``x_K`` shaped like the image grid(s).
    """
    net = params if isinstance(params, FourierPETNet) else FourierPETNet(config)
    trace = ForwardTrace()
    with no_grad():
        out = net(A, y, trace).data[:, 0]
    return (out[0] if np.asarray(y).ndim == 2 else out), trace


def composite_loss(x_out, x_gt, weights=(0.5, 0.3, 0.01), delta=1.0, terms=False):
    """Weighted SmoothL1 + (1 - SSIM) + spectral L1 (over real and imaginary parts).

    A zero weight drops its term from the graph. With ``terms=True`` the
    individual unweighted terms are returned as a dict of floats as well.
    """
    x_out = x_out if isinstance(x_out, Tensor) else Tensor(x_out)
    x_gt = x_gt if isinstance(x_gt, Tensor) else Tensor(x_gt)
    if x_out.shape != x_gt.shape:
        raise ValueError(f"loss: output shape {x_out.shape} does not match target shape {x_gt.shape}")
    w1, w2, w3 = weights
    parts = {}
    if w1:
        parts["smooth_l1"] = ops.smooth_l1(x_out, x_gt, delta)
    if w2:
        parts["ssim"] = ops.ssim_loss(x_out, x_gt, data_range=1.0)
    if w3:
        re_o, im_o = ops.fft2(x_out)
        re_t, im_t = ops.fft2(x_gt)
        parts["freq_l1"] = 0.5 * (ops.l1(re_o, re_t) + ops.l1(im_o, im_t))
    scale = dict(smooth_l1=w1, ssim=w2, freq_l1=w3)
    total = Tensor(np.zeros(()))
    for k, v in parts.items():
        total = total + scale[k] * v
    if terms:
        return total, {k: float(v.data) for k, v in parts.items()}
    return total
