"""Toy score networks: a residual MLP for 2-D points and a small 1-D UNet."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..autograd import Tensor, add, attention, mul, concat, expand, reshape, silu, slice_axis, take_rows, transpose
from .layers import Conv1d, GroupNorm, Linear, ModNorm, Module, Parameter

DTYPES = {"f32": np.float32, "f64": np.float64}
SIGMA_DATA = 0.5
DEFAULT_WIDTH = {"mlp2d": 64, "unet1d": 32}


@dataclass
class ScoreNetSpec:
    kind: str = "mlp2d"
    width: int | None = None
    depth: int = 3
    time_embed_dim: int = 32
    num_classes: int = 0
    seed: int = 0
    dtype: str = "f32"

    def __post_init__(self):
        if self.width is None or self.width == 0:
            self.width = DEFAULT_WIDTH.get(self.kind, 64)
        if self.width < 1 or self.depth < 1:
            raise ValueError("width and depth must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def time_features(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features of log(t)/4."""
    c = np.log(np.asarray(t, dtype=np.float64)) / 4.0
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(8.0), half))
    ang = c[:, None] * freqs[None, :]
    return np.concatenate([np.cos(ang), np.sin(ang)], axis=1)


class _Conditioned(Module):
    """Shared time/class embedding pathway (tagged Norm: it drives the adaptive norms)."""

    def _init_embedding(self, spec: ScoreNetSpec, emb_dim: int, rng, dtype):
        self.spec = spec
        self._dtype = dtype
        self.time1 = Linear(spec.time_embed_dim, emb_dim, "Norm", rng, dtype=dtype)
        self.time2 = Linear(emb_dim, emb_dim, "Norm", rng, dtype=dtype)
        if spec.num_classes:
            self.class_embed = _Table(spec.num_classes, emb_dim, rng, dtype)
        self._hook = None
        self.nfe = 0

    def embed(self, t: np.ndarray, class_ids) -> Tensor:
        if class_ids is not None and not self.spec.num_classes:
            raise ValueError("class ids given to an unconditional model")
        feats = Tensor(time_features(t, self.spec.time_embed_dim).astype(self._dtype))
        emb = self.time2(silu(self.time1(feats)))
        if self.spec.num_classes:
            if class_ids is None:
                raise ValueError("conditional model needs class ids")
            emb = add(emb, take_rows(self.class_embed.weight, class_ids))
        return silu(emb)

    def _record(self, name: str, h: Tensor) -> None:
        if self._hook is not None:
            self._hook(name, h.data)

    def set_hook(self, hook) -> None:
        self._hook = hook

    def __call__(self, x: Tensor, t, class_ids=None) -> Tensor:
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        if np.any(t <= 0):
            raise ValueError("noise level t must be positive")
        if x.shape[1:] != self.sample_shape:
            raise ValueError(f"expected samples of shape {self.sample_shape}, got {x.shape[1:]}")
        self.nfe += 1
        # unit-variance network input for data of scale SIGMA_DATA
        c_in = 1.0 / np.sqrt(t**2 + SIGMA_DATA**2)
        scale = np.broadcast_to(c_in.reshape((-1,) + (1,) * (x.ndim - 1)), x.shape).astype(x.dtype)
        return self.forward(mul(x, Tensor(np.ascontiguousarray(scale))), t, class_ids)


class _Table(Module):
    def __init__(self, rows, cols, rng, dtype):
        self.weight = Parameter((rng.standard_normal((rows, cols)) * 0.5).astype(dtype), "Norm")


class ResidualMLP(_Conditioned):
    """Residual blocks of (modulated norm -> linear -> silu -> linear) plus a skip projection."""

    def __init__(self, spec: ScoreNetSpec):
        rng = np.random.default_rng(spec.seed)
        dt = DTYPES[spec.dtype]
        W = spec.width
        self.sample_shape = (2,)
        self._init_embedding(spec, W, rng, dt)
        self.inp = Linear(2, W, "IO", rng, dtype=dt)
        self.blocks = [_MLPBlock(W, rng, dt) for _ in range(spec.depth)]
        self.out_norm = ModNorm(W, W, rng, dtype=dt, standardize=False)
        self.out = Linear(W, 2, "IO", rng, scale=0.0, dtype=dt)

    def layer_info(self) -> list[tuple[str, int, str]]:
        return [(f"block{i}", i, "mid") for i in range(len(self.blocks))]

    def forward(self, x, t, class_ids):
        emb = self.embed(t, class_ids)
        h = self.inp(x)
        for i, blk in enumerate(self.blocks):
            r = blk.lin2(silu(blk.lin1(blk.norm(h, emb))))
            self._record(f"block{i}", r)
            h = add(blk.skip(h), r)
        return self.out(silu(self.out_norm(h, emb)))


class _MLPBlock(Module):
    def __init__(self, W, rng, dt):
        self.norm = ModNorm(W, W, rng, dtype=dt)
        # hidden linears play the role of the UNet's convolutions
        self.lin1 = Linear(W, W, "Conv", rng, dtype=dt)
        self.lin2 = Linear(W, W, "Conv", rng, dtype=dt)
        self.skip = Linear(W, W, "Skip", rng, dtype=dt)


class _ResBlock1d(Module):
    def __init__(self, c_in, c_out, emb_dim, rng, dt):
        self.norm1 = ModNorm(c_in, emb_dim, rng, dtype=dt)
        self.conv1 = Conv1d(c_in, c_out, 3, "Conv", rng, dtype=dt)
        self.norm2 = ModNorm(c_out, emb_dim, rng, dtype=dt)
        self.conv2 = Conv1d(c_out, c_out, 3, "Conv", rng, dtype=dt)
        self.skip = Conv1d(c_in, c_out, 1, "Skip", rng, dtype=dt)

    def __call__(self, x, emb, record=None):
        h = self.conv1(silu(self.norm1(x, emb)))
        h = self.conv2(silu(self.norm2(h, emb)))
        if record is not None:
            record(h)
        return add(self.skip(x), h)


class _AttnBlock1d(Module):
    def __init__(self, c, rng, dt):
        self.c = c
        self.norm = GroupNorm(c, dtype=dt)
        self.qkv = Conv1d(c, 3 * c, 1, "QKV", rng, dtype=dt)
        self.proj = Conv1d(c, c, 1, "QKV", rng, scale=0.0, dtype=dt)

    def __call__(self, x):
        B, C, L = x.shape
        qkv = transpose(self.qkv(self.norm(x)), (0, 2, 1))  # B, L, 3C
        q, k, v = (slice_axis(qkv, 2, i * C, (i + 1) * C) for i in range(3))
        a = transpose(attention(q, k, v), (0, 2, 1))
        return add(x, self.proj(a))


def _upsample2(x: Tensor) -> Tensor:
    B, C, L = x.shape
    return reshape(expand(reshape(x, (B, C, L, 1)), (B, C, L, 2)), (B, C, 2 * L))


class UNet1d(_Conditioned):
    """Three-resolution 1-D UNet on 1x32 signals with one bottleneck attention block."""

    LEVELS = 3

    def __init__(self, spec: ScoreNetSpec):
        rng = np.random.default_rng(spec.seed)
        dt = DTYPES[spec.dtype]
        W = spec.width
        E = W
        ch = [W * 2**i for i in range(self.LEVELS)]
        self.sample_shape = (1, 32)
        self._init_embedding(spec, E, rng, dt)
        self.inp = Conv1d(1, ch[0], 3, "IO", rng, dtype=dt)
        self.enc0 = _ResBlock1d(ch[0], ch[0], E, rng, dt)
        self.down0 = Conv1d(ch[0], ch[0], 3, "Conv", rng, stride=2, pad=1, dtype=dt)
        self.enc1 = _ResBlock1d(ch[0], ch[1], E, rng, dt)
        self.down1 = Conv1d(ch[1], ch[1], 3, "Conv", rng, stride=2, pad=1, dtype=dt)
        self.mid0 = _ResBlock1d(ch[1], ch[2], E, rng, dt)
        self.attn = _AttnBlock1d(ch[2], rng, dt)
        self.mid1 = _ResBlock1d(ch[2], ch[2], E, rng, dt)
        self.dec1 = _ResBlock1d(ch[2] + ch[1], ch[1], E, rng, dt)
        self.dec0 = _ResBlock1d(ch[1] + ch[0], ch[0], E, rng, dt)
        self.out_norm = ModNorm(ch[0], E, rng, dtype=dt)
        self.out = Conv1d(ch[0], 1, 3, "IO", rng, scale=0.0, dtype=dt)

    def layer_info(self) -> list[tuple[str, int, str]]:
        return [
            ("enc0", 0, "encoder"),
            ("enc1", 1, "encoder"),
            ("mid0", 2, "encoder"),
            ("mid1", 2, "decoder"),
            ("dec1", 1, "decoder"),
            ("dec0", 0, "decoder"),
        ]

    def forward(self, x, t, class_ids):
        emb = self.embed(t, class_ids)

        def rec(name):
            return (lambda h: self._record(name, h)) if self._hook is not None else None

        h0 = self.enc0(self.inp(x), emb, rec("enc0"))
        h1 = self.enc1(self.down0(h0), emb, rec("enc1"))
        b = self.mid0(self.down1(h1), emb, rec("mid0"))
        b = self.mid1(self.attn(b), emb, rec("mid1"))
        d1 = self.dec1(concat([_upsample2(b), h1], 1), emb, rec("dec1"))
        d0 = self.dec0(concat([_upsample2(d1), h0], 1), emb, rec("dec0"))
        return self.out(silu(self.out_norm(d0, emb)))


def build_score_net(spec: ScoreNetSpec):
    if spec.kind == "mlp2d":
        return ResidualMLP(spec)
    if spec.kind == "unet1d":
        return UNet1d(spec)
    raise ValueError(f"unknown score net kind {spec.kind!r}")


def raw_forward(model, x: Tensor, t, class_ids=None) -> Tensor:
    return model(x, t, class_ids)
