"""Central finite-difference gradient checks shared by unit and acceptance tests."""

from __future__ import annotations

import numpy as np

import ddlab.autograd as ag
from ddlab.autograd import Tensor

H = 1e-5


def numeric_grad(f, arrays, i, h=H):
    """Central differences of scalar f(*arrays) with respect to arrays[i]."""
    base = [a.copy() for a in arrays]
    g = np.zeros_like(base[i])
    flat = base[i].reshape(-1)
    gflat = g.reshape(-1)
    for j in range(flat.size):
        old = flat[j]
        flat[j] = old + h
        fp = f(*base)
        flat[j] = old - h
        fm = f(*base)
        flat[j] = old
        gflat[j] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.linalg.norm(a), 1e-8))


def check(fn, arrays, weight_seed=0):
    """Max relative error over inputs of d/dx sum(R * fn(x)) against finite differences."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    out_shape = fn(*[Tensor(a) for a in arrays]).shape
    R = np.random.default_rng(weight_seed).normal(size=out_shape)

    def scalar(*arrs):
        return float(np.sum(fn(*[Tensor(a) for a in arrs]).data * R))

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    loss = ag.sum_(ag.mul(fn(*leaves), Tensor(R)))
    grads = ag.grad(loss, leaves)
    return max(rel_err(g.data, numeric_grad(scalar, arrays, i)) for i, g in enumerate(grads))


def _pos(shape):
    return lambda r: r.uniform(0.5, 2.0, size=shape)


def _normal(shape):
    return lambda r: r.normal(size=shape)


def _conv(x, w, b):
    return ag.conv1d(x, w, b, stride=1, pad=1)


def _conv_strided(x, w, b):
    return ag.conv1d(x, w, b, stride=2, pad=0)


def _gn(x, s, h):
    return ag.group_norm_modulated(x, 2, s, h)


def _mlp(x, w1, w2):
    return ag.linear(ag.silu(ag.linear(x, w1)), w2)


# (name, fn, input generators)
CASES = [
    ("add", ag.add, [_normal((3, 4)), _normal((3, 4))]),
    ("sub", ag.sub, [_normal((3, 4)), _normal((3, 4))]),
    ("mul", ag.mul, [_normal((3, 4)), _normal((3, 4))]),
    ("div", ag.div, [_normal((3, 4)), _pos((3, 4))]),
    ("neg", ag.neg, [_normal((5,))]),
    ("exp", ag.exp, [_normal((2, 3))]),
    ("log", ag.log, [_pos((2, 3))]),
    ("sqrt", ag.sqrt, [_pos((2, 3))]),
    ("pow", lambda a: ag.power(a, 3.0), [_pos((4,))]),
    ("square", ag.square, [_normal((4,))]),
    ("sigmoid", ag.sigmoid, [_normal((2, 5))]),
    ("silu", ag.silu, [_normal((2, 5))]),
    ("log_sigmoid", ag.log_sigmoid, [_normal((2, 5))]),
    ("sum_axis", lambda a: ag.sum_(a, axis=1), [_normal((3, 4))]),
    ("mean_axis", lambda a: ag.mean(a, axis=0, keepdims=True), [_normal((3, 4))]),
    ("reshape", lambda a: ag.reshape(a, (4, 3)), [_normal((3, 4))]),
    ("transpose", lambda a: ag.transpose(a, (1, 0, 2)), [_normal((2, 3, 2))]),
    ("expand", lambda a: ag.expand(a, (3, 4)), [_normal((1, 4))]),
    ("matmul", ag.matmul, [_normal((3, 4)), _normal((4, 2))]),
    ("linear", ag.linear, [_normal((3, 4)), _normal((4, 2)), _normal((2,))]),
    ("concat", lambda a, b: ag.concat([a, b], axis=1), [_normal((2, 3)), _normal((2, 2))]),
    ("slice", lambda a: ag.slice_axis(a, 1, 1, 3), [_normal((2, 4))]),
    ("take_rows", lambda a: ag.take_rows(a, np.array([2, 0, 2])), [_normal((3, 2))]),
    ("softmax", ag.softmax, [_normal((3, 4))]),
    ("conv1d", _conv, [_normal((2, 2, 8)), _normal((3, 2, 3)), _normal((3,))]),
    ("conv1d_strided", _conv_strided, [_normal((1, 1, 8)), _normal((2, 1, 3)), _normal((2,))]),
    ("group_norm", _gn, [_normal((4, 8)), _normal((4,)), _normal((4,))]),
    ("attention", ag.attention, [_normal((3, 4)), _normal((3, 4)), _normal((3, 4))]),
    ("mlp", _mlp, [_normal((3, 2)), _normal((2, 5)), _normal((5, 2))]),
]


def run_cases(instances_per_case=2, seed=0):
    """Yield (name, rel_err) for every random instance."""
    rng = np.random.default_rng(seed)
    for name, fn, gens in CASES:
        for k in range(instances_per_case):
            arrays = [g(rng) for g in gens]
            yield f"{name}[{k}]", check(fn, arrays, weight_seed=k)


def r1_second_order_error(seed=0):
    """Relative error of d r1 / d W (graph route) against finite differences of the first-order gradient."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3))
    W1, W2 = rng.normal(size=(3, 6)) * 0.7, rng.normal(size=(6, 1)) * 0.7

    def first_order(w1, w2):
        xt = Tensor(x, requires_grad=True)
        out = ag.sum_(ag.linear(ag.silu(ag.linear(xt, Tensor(w1))), Tensor(w2)))
        return ag.grad(out, [xt])[0].data

    def r1(w1, w2):
        return float(np.sum(first_order(w1, w2) ** 2))

    w1t, w2t = Tensor(W1, requires_grad=True), Tensor(W2, requires_grad=True)
    xt = Tensor(x, requires_grad=True)
    out = ag.sum_(ag.linear(ag.silu(ag.linear(xt, w1t)), w2t))
    gx = ag.backward_as_graph(out, xt)
    pen = ag.sum_(ag.square(gx))
    g1, g2 = ag.grad(pen, [w1t, w2t])
    return max(rel_err(g1.data, numeric_grad(r1, [W1, W2], 0)), rel_err(g2.data, numeric_grad(r1, [W1, W2], 1)))
