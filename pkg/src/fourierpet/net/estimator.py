"""Estimator wrapper around the unrolled network."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..projector import SystemMatrix
from ..validation import check_batch
from .model import ReconConfig
from .trainer import TrainConfig, train


class FourierPETReconstructor(BaseEstimator, TransformerMixin):
    """Learned sinogram-to-image reconstruction.

    ``fit(Y, X)`` trains on low-count sinograms ``Y`` and truth images ``X``;
    ``predict(Y)`` returns images scaled to unit maximum (the truth images
    are normalized the same way during training).

    Parameters
    ----------
    system : SystemMatrix
    K, N, channels : int
        Stage count, module depth and feature width.
    apcm_mode : {"targeted", "full_band"}
    loss_weights : tuple of float
        Weights of the SmoothL1, (1 - SSIM) and spectral L1 terms.
    epochs, batch_size : int
    lr_start, lr_end, weight_decay : float
    seed : int
        Seeds both the parameter initialization and the batch order.
    """

    def __init__(self, system, K=3, N=2, channels=16, apcm_mode="targeted", loss_weights=(0.5, 0.3, 0.01),
                 smooth_l1_delta=1.0, rho=0.1, shared_mu=False, epochs=60, batch_size=4, lr_start=1e-3,
                 lr_end=1e-5, weight_decay=0.01, seed=0, dtype="float64"):
        self.system = system
        self.K = K
        self.N = N
        self.channels = channels
        self.apcm_mode = apcm_mode
        self.loss_weights = loss_weights
        self.smooth_l1_delta = smooth_l1_delta
        self.rho = rho
        self.shared_mu = shared_mu
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.weight_decay = weight_decay
        self.seed = seed
        self.dtype = dtype

    def _configs(self):
        recon = ReconConfig(K=self.K, N=self.N, rho=self.rho, apcm_mode=self.apcm_mode,
                            loss_weights=self.loss_weights, smooth_l1_delta=self.smooth_l1_delta,
                            channels=self.channels, shared_mu=self.shared_mu, seed=self.seed)
        tc = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr_start=self.lr_start,
                         lr_end=self.lr_end, weight_decay=self.weight_decay, seed=self.seed, dtype=self.dtype)
        return recon, tc

    def fit(self, Y, X, log=None):
        if not isinstance(self.system, SystemMatrix):
            raise TypeError("system must be a SystemMatrix")
        Y, _ = check_batch(Y, self.system.sino_shape, "sinogram")
        X, _ = check_batch(X, self.system.image_shape, "truth image")
        if len(X) != len(Y):
            raise ValueError(f"got {len(Y)} sinograms but {len(X)} truth images")
        recon, tc = self._configs()
        self.net_, self.history_ = train(self.system, Y, X, recon, tc, log=log)
        self.n_features_in_ = int(np.prod(self.system.sino_shape))
        return self

    def predict(self, Y):
        check_is_fitted(self, "net_")
        Y, single = check_batch(Y, self.system.sino_shape, "sinogram")
        out = self.net_.predict(self.system, Y)
        return out[0] if single else out

    def transform(self, Y):
        return self.predict(Y)
