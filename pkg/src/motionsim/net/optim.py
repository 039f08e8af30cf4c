"""AdamW with decoupled weight decay.

Decay is applied multiplicatively before the Adam update and only to
the keys listed in ``decay_keys`` (conv and linear weights; batch-norm
scale/shift and biases are excluded).
"""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, params: dict, lr=1e-3, weight_decay=0.1, betas=(0.9, 0.999), eps=1e-8, decay_keys=()):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.decay_keys = set(decay_keys)
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        """One in-place update; call with matching param/grad dicts."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for key, p in params.items():
            g = np.asarray(grads[key], dtype=np.float64)
            if key in self.decay_keys and self.weight_decay != 0:
                p *= 1.0 - self.lr * self.weight_decay
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p -= update.astype(p.dtype)
            if not np.all(np.isfinite(p)):
                raise FloatingPointError(f"non-finite parameter '{key}' after optimizer step {self.t}")
