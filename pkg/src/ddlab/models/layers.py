"""Parameters, a minimal module tree, and the layers the toy networks use."""

from __future__ import annotations

import copy
import math

import numpy as np

from ..autograd import Tensor, add, conv1d, group_norm_modulated, linear, mul, slice_axis

CATEGORIES = ("Norm", "Conv", "QKV", "Skip", "IO")


class Parameter(Tensor):
    """A named trainable leaf tagged with one layer category."""

    __slots__ = ("name", "category", "_frozen")

    def __init__(self, data, category: str, name: str = ""):
        if category not in CATEGORIES:
            raise ValueError(f"unknown parameter category {category!r}")
        super().__init__(data, requires_grad=True)
        self.name = name
        self.category = category
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self._frozen = bool(value)
        self.requires_grad = not self._frozen

    def __deepcopy__(self, memo):
        p = Parameter(self.data.copy(), self.category, self.name)
        p.frozen = self._frozen
        return p


class Module:
    """Attribute-walking container: Parameters, Modules and lists of Modules."""

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                val.name = path
                out[path] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(path + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{path}.{i}."))
        return out

    def parameters(self) -> dict[str, Parameter]:
        return self.named_parameters()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing tensors in state: {sorted(missing)[:5]}")
        for k, p in params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def clone(self):
        return copy.deepcopy(self)

    def frozen_view(self):
        """A detached copy whose weights are constants (stop-gradient view)."""
        twin = copy.deepcopy(self)
        for p in twin.named_parameters().values():
            p.frozen = True
        return twin

    def astype(self, dtype):
        for p in self.named_parameters().values():
            p.data = p.data.astype(dtype)
        return self


def _init(rng: np.random.Generator, shape, fan_in: int, scale: float, dtype) -> np.ndarray:
    if scale == 0.0:
        return np.zeros(shape, dtype=dtype)
    return (rng.standard_normal(shape) * (scale / math.sqrt(fan_in))).astype(dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, category: str, rng, scale: float = 1.0, bias: bool = True, dtype=np.float32):
        self.weight = Parameter(_init(rng, (n_in, n_out), n_in, scale, dtype), category)
        self.bias = Parameter(np.zeros(n_out, dtype=dtype), category) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv1d(Module):
    def __init__(self, c_in, c_out, kernel, category, rng, stride=1, pad=None, scale=1.0, dtype=np.float32):
        self.weight = Parameter(_init(rng, (c_out, c_in, kernel), c_in * kernel, scale, dtype), category)
        self.bias = Parameter(np.zeros(c_out, dtype=dtype), category)
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias, self.stride, self.pad)


def pick_groups(channels: int, preferred: int = 8) -> int:
    g = min(preferred, channels)
    while channels % g:
        g -= 1
    return g


class ModNorm(Module):
    """Adaptive group norm: scale/shift produced from the conditioning embedding.

    With ``standardize=False`` only the modulation is applied (point features,
    where per-sample standardization would discard the input scale).
    """

    def __init__(self, channels: int, emb_dim: int, rng, groups: int | None = None, dtype=np.float32,
                 standardize: bool = True):
        self.channels = channels
        self.standardize = standardize
        self.groups = groups or pick_groups(channels)
        self.affine = Linear(emb_dim, 2 * channels, "Norm", rng, scale=0.0, dtype=dtype)

    def __call__(self, x: Tensor, emb: Tensor) -> Tensor:
        ss = self.affine(emb)
        scale = slice_axis(ss, 1, 0, self.channels)
        shift = slice_axis(ss, 1, self.channels, 2 * self.channels)
        if not self.standardize:
            return add(mul(x, add(scale, 1.0)), shift)
        return group_norm_modulated(x, self.groups, scale, shift)


class GroupNorm(Module):
    """Plain group norm with learned per-channel scale/shift."""

    def __init__(self, channels: int, groups: int | None = None, dtype=np.float32):
        self.groups = groups or pick_groups(channels)
        self.scale = Parameter(np.zeros(channels, dtype=dtype), "Norm")
        self.shift = Parameter(np.zeros(channels, dtype=dtype), "Norm")

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm_modulated(x, self.groups, self.scale, self.shift)
