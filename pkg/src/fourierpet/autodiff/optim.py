"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""

import math

import numpy as np


def cosine_lr(t, total_steps, lr_start=1e-3, lr_end=1e-5):
    """``lr_end + 0.5 (lr_start - lr_end) (1 + cos(pi t / T))``, clamped to ``t in [0, T]``."""
    if total_steps <= 0:
        return float(lr_start)
    t = min(max(t, 0), total_steps)
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * t / total_steps))


class AdamW:
    """AdamW over a mapping ``name -> Tensor``.

    The learning rate of step ``t`` (zero-based) is ``cosine_lr(t, total_steps)``.
    Weight decay is applied as ``p -= lr * wd * p`` before the Adam update and
    only to parameters listed in ``decay`` (all of them by default).

    Parameters
    ----------
    params : dict of str -> Tensor
    total_steps : int
    lr_start, lr_end : float
    betas : tuple of float
    eps : float
    weight_decay : float
    decay : iterable of str, optional
    """

    def __init__(self, params, total_steps, lr_start=1e-3, lr_end=1e-5, betas=(0.9, 0.999),
                 eps=1e-8, weight_decay=0.01, decay=None):
        self.params = dict(params)
        if not self.params:
            raise ValueError("optimizer needs at least one parameter")
        self.total_steps = int(total_steps)
        self.lr_start = float(lr_start)
        self.lr_end = float(lr_end)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.decay = set(self.params) if decay is None else set(decay)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    @property
    def lr(self):
        return cosine_lr(self.step_count, self.total_steps, self.lr_start, self.lr_end)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        missing = [k for k, p in self.params.items() if p.grad is None]
        if len(missing) == len(self.params):
            raise RuntimeError("optimizer step before any backward pass")
        lr = self.lr
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for k, p in self.params.items():
            dt = p.data.dtype
            g = np.zeros_like(p.data) if p.grad is None else np.asarray(p.grad, dtype=dt)
            data = p.data
            if self.weight_decay and k in self.decay:
                data = data - lr * self.weight_decay * data
            m = self.m[k] = (self.beta1 * self.m[k] + (1 - self.beta1) * g).astype(dt)
            v = self.v[k] = (self.beta2 * self.v[k] + (1 - self.beta2) * g * g).astype(dt)
            p.data = (data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(dt)
        return lr

    def state_dict(self):
        return dict(step=self.step_count, beta1=self.beta1, beta2=self.beta2,
                    m=dict(self.m), v=dict(self.v))

    def load_state_dict(self, state):
        if set(state["m"]) != set(self.params):
            raise ValueError("optimizer state does not match parameter names")
        self.step_count = int(state["step"])
        self.beta1, self.beta2 = float(state["beta1"]), float(state["beta2"])
        for k in self.params:
            self.m[k] = np.asarray(state["m"][k], dtype=self.params[k].data.dtype).reshape(self.params[k].shape)
            self.v[k] = np.asarray(state["v"][k], dtype=self.params[k].data.dtype).reshape(self.params[k].shape)


def adamw_step(state, params=None):
    """Functional alias: advance ``state`` (an :class:`AdamW`) by one step."""
    if params is not None and set(params) != set(state.params):
        raise ValueError("params do not match the optimizer's parameter set")
    return state.step()
