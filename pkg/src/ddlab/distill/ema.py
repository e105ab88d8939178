from __future__ import annotations

import numpy as np


class EMA:
    """Exponential moving average of model weights with a warmup-grown half-life.

    The effective half-life is min(halflife_images, warmup_ratio * images_seen),
    so early updates follow the model closely. Frozen parameters are copied.
    """

    def __init__(self, model, halflife_images: float, warmup_ratio: float = 0.05):
        if halflife_images <= 0:
            raise ValueError("halflife_images must be positive")
        if not 0 < warmup_ratio <= 1:
            raise ValueError("warmup_ratio must lie in (0, 1]")
        self.halflife = float(halflife_images)
        self.warmup_ratio = float(warmup_ratio)
        self.shadow = model.clone()
        self.images_seen = 0

    def decay(self, batch_images: int) -> float:
        h_eff = min(self.halflife, self.warmup_ratio * self.images_seen)
        if h_eff <= 0:
            return 0.0
        return 0.5 ** (batch_images / h_eff)

    def update(self, model, batch_images: int) -> None:
        beta = self.decay(batch_images)
        src = model.named_parameters()
        dst = self.shadow.named_parameters()
        if src.keys() != dst.keys():
            raise ValueError("EMA shadow and model have different parameters")
        for k, p in src.items():
            q = dst[k]
            if q.shape != p.shape:
                raise ValueError(f"{k}: shadow shape {q.shape} != {p.shape}")
            if p.frozen or beta == 0.0:
                q.data = p.data.copy()
            else:
                q.data = (beta * q.data + (1.0 - beta) * p.data).astype(p.dtype, copy=False)
        self.images_seen += int(batch_images)

    def state(self) -> dict[str, np.ndarray]:
        return self.shadow.state_dict()
