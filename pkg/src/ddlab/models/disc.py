"""Discriminators: a plain trainable net on raw samples, and a projected one.

The projected discriminator passes samples through a frozen random feature
network and reads one logit per feature stage with an independent trainable
head. Feature weights are plain tensors, never parameters, so no optimizer
can touch them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..autograd import Tensor, conv1d, linear, reshape, silu
from .layers import Linear, Module

_DTYPES = {"f32": np.float32, "f64": np.float64}


@dataclass
class DiscriminatorSpec:
    kind: str = "projected"
    num_scales: int = 3
    feature_dim: int = 64
    feature_seed: int = 1234
    feature_scale: float = 4.0
    head_width: int = 64
    seed: int = 0
    dtype: str = "f32"

    def to_dict(self) -> dict:
        return asdict(self)


class _Head(Module):
    def __init__(self, n_in, width, rng, dt):
        self.fc1 = Linear(n_in, width, "Conv", rng, dtype=dt)
        self.fc2 = Linear(width, width, "Conv", rng, dtype=dt)
        self.fc3 = Linear(width, 1, "IO", rng, dtype=dt)

    def __call__(self, h: Tensor) -> Tensor:
        return self.fc3(silu(self.fc2(silu(self.fc1(h)))))


class PlainDiscriminator(Module):
    def __init__(self, spec: DiscriminatorSpec, sample_shape: tuple):
        rng = np.random.default_rng(spec.seed)
        dt = _DTYPES[spec.dtype]
        self.sample_shape = tuple(sample_shape)
        self.head = _Head(int(np.prod(sample_shape)), spec.head_width, rng, dt)

    @property
    def num_scales(self) -> int:
        return 1

    def __call__(self, x: Tensor) -> list[Tensor]:
        h = reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))
        return [reshape(self.head(h), (x.shape[0],))]


class ProjectedDiscriminator(Module):
    def __init__(self, spec: DiscriminatorSpec, sample_shape: tuple):
        dt = _DTYPES[spec.dtype]
        frng = np.random.default_rng(spec.feature_seed)
        rng = np.random.default_rng(spec.seed)
        self.sample_shape = tuple(sample_shape)
        self._signal = len(sample_shape) == 2
        F = spec.feature_dim
        self._features: list[tuple[Tensor, Tensor]] = []
        dims = []
        if self._signal:
            c_in, length = sample_shape
            ch = max(F // 8, 4)
            for i in range(spec.num_scales):
                w = frng.standard_normal((ch, c_in, 3)) * (spec.feature_scale if i == 0 else 2.0) / math.sqrt(c_in * 3)
                b = frng.uniform(-1.0, 1.0, ch)
                self._features.append((Tensor(w.astype(dt)), Tensor(b.astype(dt))))
                length = (length + 2 - 3) // 2 + 1
                c_in = ch
                dims.append(ch * length)
        else:
            n_in = int(np.prod(sample_shape))
            for i in range(spec.num_scales):
                std = spec.feature_scale if i == 0 else 2.0 / math.sqrt(n_in)
                w = frng.standard_normal((n_in, F)) * std
                b = frng.uniform(-spec.feature_scale, spec.feature_scale, F) if i == 0 else frng.uniform(-1.0, 1.0, F)
                self._features.append((Tensor(w.astype(dt)), Tensor(b.astype(dt))))
                n_in = F
                dims.append(F)
        self.heads = [_Head(d, spec.head_width, rng, dt) for d in dims]

    @property
    def num_scales(self) -> int:
        return len(self.heads)

    def features(self, x: Tensor) -> list[Tensor]:
        out = []
        h = x
        if self._signal:
            for w, b in self._features:
                h = silu(conv1d(h, w, b, stride=2, pad=1))
                out.append(reshape(h, (h.shape[0], h.shape[1] * h.shape[2])))
        else:
            h = reshape(h, (h.shape[0], int(np.prod(h.shape[1:]))))
            for w, b in self._features:
                h = silu(linear(h, w, b))
                out.append(h)
        return out

    def feature_arrays(self) -> list[np.ndarray]:
        return [a.data for pair in self._features for a in pair]

    def __call__(self, x: Tensor) -> list[Tensor]:
        return [reshape(head(f), (x.shape[0],)) for head, f in zip(self.heads, self.features(x))]


def build_discriminator(spec: DiscriminatorSpec, sample_shape: tuple):
    if spec.kind == "plain":
        return PlainDiscriminator(spec, sample_shape)
    if spec.kind == "projected":
        return ProjectedDiscriminator(spec, sample_shape)
    raise ValueError(f"unknown discriminator kind {spec.kind!r}")


def discriminator_logits(disc, x: Tensor) -> list[Tensor]:
    """One [B] logit tensor per scale."""
    return disc(x)
