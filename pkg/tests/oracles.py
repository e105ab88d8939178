"""Independent reference models and helpers for tests."""

from __future__ import annotations

import numpy as np

from ddlab.autograd import Tensor
from ddlab.diffusion import PreconditioningSpec, analytic_denoiser, c_out, c_skip


class AnalyticModel:
    """Raw network whose preconditioned output is the Gaussian posterior mean."""

    def __init__(self, s2: float, dim: int = 2, spec: PreconditioningSpec | None = None):
        self.s2 = s2
        self.spec = spec or PreconditioningSpec()
        self.sample_shape = (dim,)
        self.nfe = 0
        self._w = Tensor(np.zeros(1))

    def named_parameters(self):
        return {"w": self._w}

    def __call__(self, x: Tensor, t, class_ids=None) -> Tensor:
        self.nfe += 1
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))[:, None]
        xa = x.data.astype(np.float64)
        target = analytic_denoiser(xa, t[:, 0], self.s2)
        co = np.where(c_out(t, self.spec) == 0, 1.0, c_out(t, self.spec))
        return Tensor(((target - c_skip(t, self.spec) * xa) / co).astype(x.dtype))
