from __future__ import annotations

import numpy as np


class Adam:
    """Adam without weight decay. Frozen parameters are skipped entirely."""

    def __init__(self, params: dict, lr: float, betas=(0.0, 0.99), eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.b1, self.b2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def trainable(self) -> dict:
        return {k: p for k, p in self.params.items() if not getattr(p, "frozen", False)}

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            p = self.params[k]
            if getattr(p, "frozen", False):
                continue
            dt = p.data.dtype
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            upd = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - upd).astype(dt, copy=False)

    def state(self) -> dict:
        out = {f"m/{k}": a for k, a in self.m.items()}
        out.update({f"v/{k}": a for k, a in self.v.items()})
        return out
