"""Layer functions.

linear, conv1d and the modulated group norm run as single fused nodes with
hand-written array gradients. Their composite forms, built from tensor
primitives, supply the differentiable gradient rule and act as a reference.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    Tensor,
    add,
    expand,
    fold_np,
    fused,
    matmul,
    mean,
    mul,
    reshape,
    softmax,
    sqrt,
    sub,
    transpose,
    unfold1d,
    unfold_np,
    _check_window,
)


# ---------------------------------------------------------------- linear


def linear_composite(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    if b is not None:
        y = add(y, expand(reshape(b, (1, b.shape[0])), y.shape))
    return y


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x [B, in] @ w [in, out] + b [out]."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    if b is None:
        return matmul(x, w)

    def fwd(xa, wa, ba):
        y = xa @ wa
        y += ba
        return y

    def vjp_np(g, out, xa, wa, ba, needs):
        return (
            g @ wa.T if needs[0] else None,
            xa.T @ g if needs[1] else None,
            g.sum(axis=0) if needs[2] else None,
        )

    return fused("linear", fwd, vjp_np, linear_composite, x, w, b)


# ---------------------------------------------------------------- conv1d


def conv1d_composite(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    B, C, L = x.shape
    C_out, C_in, K = w.shape
    cols = unfold1d(x, K, stride, pad)  # B, L_out, C*K
    L_out = cols.shape[1]
    wm = transpose(reshape(w, (C_out, C_in * K)), (1, 0))
    y = matmul(reshape(cols, (B * L_out, C * K)), wm)
    if b is not None:
        y = add(y, expand(reshape(b, (1, C_out)), y.shape))
    return transpose(reshape(y, (B, L_out, C_out)), (0, 2, 1))


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of x [B, C_in, L] (or [C_in, L]) with w [C_out, C_in, K]."""
    single = x.ndim == 2
    if single:
        x = reshape(x, (1,) + x.shape)
    B, C, L = x.shape
    C_out, C_in, K = w.shape
    if C_in != C:
        raise ValueError(f"conv1d: input has {C} channels, weight expects {C_in}")
    _check_window(L, K, stride, pad)
    L_out = (L + 2 * pad - K) // stride + 1
    cache = {}

    def fwd(xa, wa, *rest):
        cols = unfold_np(xa, K, stride, pad).reshape(B * L_out, C * K)
        cache["cols"] = cols
        y = cols @ wa.reshape(C_out, C * K).T
        if rest:
            y += rest[0]
        return np.ascontiguousarray(y.reshape(B, L_out, C_out).transpose(0, 2, 1))

    def vjp_np(g, out, xa, wa, *rest):
        needs = rest[-1]
        g2 = g.transpose(0, 2, 1).reshape(B * L_out, C_out)
        cols = cache.get("cols")
        if cols is None:
            cols = unfold_np(xa, K, stride, pad).reshape(B * L_out, C * K)
        gx = None
        if needs[0]:
            gcols = (g2 @ wa.reshape(C_out, C * K)).reshape(B, L_out, C * K)
            gx = fold_np(gcols, C, L, K, stride, pad)
        gw = (g2.T @ cols).reshape(C_out, C, K) if needs[1] else None
        res = (gx, gw)
        if len(needs) == 3:
            res += (g2.sum(axis=0) if needs[2] else None,)
        return res

    def comp(xt, wt, bt=None):
        return conv1d_composite(xt, wt, bt, stride, pad)

    parents = (x, w) if b is None else (x, w, b)
    y = fused("conv1d", fwd, vjp_np, comp, *parents)
    return reshape(y, y.shape[1:]) if single else y


# ---------------------------------------------------------------- group norm


def _per_channel(v: Tensor, B: int, C: int, L: int) -> Tensor:
    if v.ndim == 1:
        v = reshape(v, (1, C, 1))
    else:
        v = reshape(v, (v.shape[0], C, 1))
    return expand(v, (B, C, L))


def group_norm_composite(x: Tensor, scale: Tensor, shift: Tensor, groups: int, eps: float) -> Tensor:
    """x is [B, C, L]; scale/shift are [C] or [B, C]."""
    B, C, L = x.shape
    xg = reshape(x, (B, groups, (C // groups) * L))
    mu = expand(mean(xg, axis=2, keepdims=True), xg.shape)
    xc = sub(xg, mu)
    var = mean(mul(xc, xc), axis=2, keepdims=True)
    xhat = reshape(xc / expand(sqrt(add(var, eps)), xg.shape), (B, C, L))
    return add(mul(xhat, add(_per_channel(scale, B, C, L), 1.0)), _per_channel(shift, B, C, L))


def group_norm_modulated(
    x: Tensor, groups: int, scale: Tensor, shift: Tensor, eps: float = 1e-5
) -> Tensor:
    """Group standardization followed by ``(1 + scale) * x_hat + shift``.

    x is [B, C, L], [C, L] or [B, C]; scale/shift are [C] or [B, C].
    """
    orig = x.shape
    if x.ndim == 2 and scale.ndim == 2 and x.shape == scale.shape:
        x = reshape(x, orig + (1,))  # [B, C] features
    elif x.ndim == 2:
        x = reshape(x, (1,) + orig)  # single [C, L] signal
    B, C, L = x.shape
    if eps <= 0:
        raise ValueError("group_norm: eps must be positive")
    if C % groups:
        raise ValueError(f"group_norm: {C} channels not divisible by {groups} groups")
    G, M = groups, (C // groups) * L
    cache = {}

    def col(v):
        return v.reshape(1, C, 1) if v.ndim == 1 else v.reshape(v.shape[0], C, 1)

    def fwd(xa, sa, ha):
        xg = xa.reshape(B, G, M)
        xc = xg - xg.mean(axis=2, keepdims=True)
        rstd = 1.0 / np.sqrt((xc * xc).mean(axis=2, keepdims=True) + eps)
        xhat = (xc * rstd).reshape(B, C, L)
        cache["xhat"], cache["rstd"] = xhat, rstd
        return xhat * (col(sa) + 1.0) + col(ha)

    def vjp_np(g, out, xa, sa, ha, needs):
        xhat, rstd = cache["xhat"], cache["rstd"]
        gx = gs = gh = None
        if needs[0]:
            gxh = (g * (col(sa) + 1.0)).reshape(B, G, M)
            xh = xhat.reshape(B, G, M)
            gx = rstd * (gxh - gxh.mean(axis=2, keepdims=True) - xh * (gxh * xh).mean(axis=2, keepdims=True))
            gx = gx.reshape(B, C, L)
        if needs[1]:
            gs = (g * xhat).sum(axis=2)
            gs = gs.sum(axis=0) if sa.ndim == 1 else gs
        if needs[2]:
            gh = g.sum(axis=2)
            gh = gh.sum(axis=0) if ha.ndim == 1 else gh
        return gx, gs, gh

    def comp(xt, st, ht):
        return group_norm_composite(xt, st, ht, G, eps)

    y = fused("group_norm", fwd, vjp_np, comp, x, scale, shift)
    return reshape(y, orig)


# ---------------------------------------------------------------- attention


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v for [L, d] or [B, L, d] inputs."""
    if q.shape != k.shape or q.shape[:-1] != v.shape[:-1]:
        raise ValueError(f"attention: shape mismatch {q.shape}, {k.shape}, {v.shape}")
    d = q.shape[-1]
    perm = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = mul(matmul(q, transpose(k, perm)), 1.0 / math.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)
