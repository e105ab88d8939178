"""Dense tensors with tape-based reverse-mode differentiation.

Each op carries two gradient rules. The array rule runs plain first-order
backward on raw buffers. The tensor rule is written with tensor operations, so
a gradient taken with ``create_graph=True`` is itself a graph and can be
differentiated again (reverse-over-reverse). Ops without a tensor rule are
refused by :func:`backward_as_graph`.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_state = {"grad": True, "deterministic": True}

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class UnsupportedSecondOrder(RuntimeError):
    """An op without a differentiable gradient rule sits on a double-backward path."""


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    prev = _state["grad"]
    _state["grad"] = enabled
    try:
        yield
    finally:
        _state["grad"] = prev


def grad_enabled() -> bool:
    return _state["grad"]


def set_deterministic(flag: bool) -> None:
    """With the flag on, callers must evaluate batches serially in a fixed order."""
    _state["deterministic"] = bool(flag)


def is_deterministic() -> bool:
    return _state["deterministic"]


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "_vjp_np", "_fwd", "op", "_id", "second_order", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True) if dtype is not None else np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp = None
        self._vjp_np = None
        self._fwd = None
        self.op = "leaf"
        self._id = next(_ids)
        self.second_order = True

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __deepcopy__(self, memo):
        # copies are fresh leaves; graph history is never duplicated
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _apply(op: str, fwd: Callable, vjp: Callable | None, vjp_np: Callable, *parents: Tensor) -> Tensor:
    """Run ``fwd`` on parent buffers and record the node when any parent needs a gradient.

    ``vjp(g, out, *parents, needs)`` works on tensors; ``vjp_np`` takes the same
    arguments as raw arrays. ``vjp=None`` marks the op as first-order only.
    """
    dt = parents[0].data.dtype
    for p in parents[1:]:
        if p.data.dtype != dt:
            raise TypeError(f"{op}: dtype mismatch {dt} vs {p.data.dtype}")
    out = Tensor.__new__(Tensor)
    data = fwd(*[p.data for p in parents])
    if type(data) is not np.ndarray or data.dtype != dt:
        data = np.asarray(data, dtype=dt)
    out.data = data
    out.second_order = vjp is not None
    out.op = op
    out._id = next(_ids)
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        out._vjp_np = vjp_np
        out._fwd = fwd
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
        out._vjp_np = None
        out._fwd = None
    return out


def fused(op: str, fwd: Callable, vjp_np: Callable, composite: Callable, *parents: Tensor) -> Tensor:
    """An op evaluated in one numpy pass whose tensor rule re-traces ``composite``.

    ``composite`` must compute the same function from tensor primitives. Its local
    gradient (parents treated as independent inputs) serves as the tensor rule.
    """

    def vjp(g, out, *args):
        ps = args[:-1]
        y = composite(*ps)
        gs = grad(y, list(ps), grad_output=g, create_graph=True, _local=True)
        return tuple(gs)

    return _apply(op, fwd, vjp, vjp_np, *parents)


def _check_pair(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(g: Tensor, shape: tuple) -> Tensor:
    if g.shape == shape:
        return g
    # only scalar-vs-tensor broadcasting exists
    return sum_(g)


def _reduce_np(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def _binary(a, b, op):
    a, b = (a, _lift(b, a)) if isinstance(a, Tensor) else (_lift(a, b), b)
    _check_pair(op, a, b)
    return a, b


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _binary(a, b, "add")

    def vjp(g, out, a, b, needs):
        return (_reduce_to(g, a.shape) if needs[0] else None, _reduce_to(g, b.shape) if needs[1] else None)

    def vjp_np(g, out, a, b, needs):
        return (_reduce_np(g, a.shape) if needs[0] else None, _reduce_np(g, b.shape) if needs[1] else None)

    return _apply("add", np.add, vjp, vjp_np, a, b)


def sub(a, b) -> Tensor:
    a, b = _binary(a, b, "sub")

    def vjp(g, out, a, b, needs):
        return (_reduce_to(g, a.shape) if needs[0] else None, _reduce_to(neg(g), b.shape) if needs[1] else None)

    def vjp_np(g, out, a, b, needs):
        return (_reduce_np(g, a.shape) if needs[0] else None, _reduce_np(-g, b.shape) if needs[1] else None)

    return _apply("sub", np.subtract, vjp, vjp_np, a, b)


def mul(a, b) -> Tensor:
    a, b = _binary(a, b, "mul")

    def vjp(g, out, a, b, needs):
        return (_reduce_to(mul(g, b), a.shape) if needs[0] else None, _reduce_to(mul(g, a), b.shape) if needs[1] else None)

    def vjp_np(g, out, a, b, needs):
        return (_reduce_np(g * b, a.shape) if needs[0] else None, _reduce_np(g * a, b.shape) if needs[1] else None)

    return _apply("mul", np.multiply, vjp, vjp_np, a, b)


def div(a, b) -> Tensor:
    a, b = _binary(a, b, "div")

    def vjp(g, out, a, b, needs):
        ga = _reduce_to(div(g, b), a.shape) if needs[0] else None
        gb = _reduce_to(neg(div(mul(g, out), b)), b.shape) if needs[1] else None
        return ga, gb

    def vjp_np(g, out, a, b, needs):
        ga = _reduce_np(g / b, a.shape) if needs[0] else None
        gb = _reduce_np(-(g * out) / b, b.shape) if needs[1] else None
        return ga, gb

    return _apply("div", np.divide, vjp, vjp_np, a, b)


def neg(a: Tensor) -> Tensor:
    return _apply("neg", np.negative, lambda g, out, a, needs: (neg(g),), lambda g, out, a, needs: (-g,), a)


def exp(a: Tensor) -> Tensor:
    return _apply("exp", np.exp, lambda g, out, a, needs: (mul(g, out),), lambda g, out, a, needs: (g * out,), a)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log: input must be strictly positive")
    return _apply("log", np.log, lambda g, out, a, needs: (div(g, a),), lambda g, out, a, needs: (g / a,), a)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise ValueError("sqrt: input must be non-negative")
    return _apply(
        "sqrt",
        np.sqrt,
        lambda g, out, a, needs: (div(mul(g, 0.5), out),),
        lambda g, out, a, needs: ((g * 0.5) / out,),
        a,
    )


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    if p == 2.0:
        return _apply(
            "pow",
            np.square,
            lambda g, out, a, needs: (mul(g, mul(a, 2.0)),),
            lambda g, out, a, needs: (g * (a * 2.0),),
            a,
        )
    return _apply(
        "pow",
        lambda x: np.power(x, p),
        lambda g, out, a, needs: (mul(g, mul(power(a, p - 1.0), p)),),
        lambda g, out, a, needs: (g * (np.power(a, p - 1.0) * p),),
        a,
    )


def square(a: Tensor) -> Tensor:
    return power(a, 2.0)


def _np_sigmoid(x):
    # tanh form cannot overflow for any finite x
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    def vjp(g, out, a, needs):
        return (mul(g, mul(out, sub(1.0, out))),)

    def vjp_np(g, out, a, needs):
        return (g * (out * (1.0 - out)),)

    return _apply("sigmoid", _np_sigmoid, vjp, vjp_np, a)


def silu(a: Tensor) -> Tensor:
    def vjp(g, out, a, needs):
        s = sigmoid(a)
        return (mul(g, add(s, mul(out, sub(1.0, s)))),)

    def vjp_np(g, out, a, needs):
        s = _np_sigmoid(a)
        return (g * (s + out * (1.0 - s)),)

    return _apply("silu", lambda x: x * _np_sigmoid(x), vjp, vjp_np, a)


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) without overflow for large |x|."""

    def fwd(x):
        return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    return _apply(
        "log_sigmoid",
        fwd,
        lambda g, out, a, needs: (mul(g, sigmoid(neg(a))),),
        lambda g, out, a, needs: (g * _np_sigmoid(-a),),
        a,
    )


# ---------------------------------------------------------------- reductions / shape


def _norm_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    in_shape = a.shape
    kd_shape = tuple(1 if i in axes else s for i, s in enumerate(in_shape))

    def vjp(g, out, a, needs):
        return (expand(reshape(g, kd_shape), in_shape),)

    def vjp_np(g, out, a, needs):
        return (np.broadcast_to(g.reshape(kd_shape), in_shape),)

    return _apply("sum", lambda x: np.sum(x, axis=axes, keepdims=keepdims), vjp, vjp_np, a)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(sum_(a, axes, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    in_shape = a.shape
    if shape == in_shape:
        return a
    return _apply(
        "reshape",
        lambda x: np.reshape(x, shape),
        lambda g, out, a, needs: (reshape(g, in_shape),),
        lambda g, out, a, needs: (np.reshape(g, in_shape),),
        a,
    )


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _apply(
        "transpose",
        lambda x: np.ascontiguousarray(np.transpose(x, axes)),
        lambda g, out, a, needs: (transpose(g, inv),),
        lambda g, out, a, needs: (np.transpose(g, inv),),
        a,
    )


def expand(a: Tensor, shape) -> Tensor:
    """Repeat size-1 axes up to ``shape`` (same rank); the only broadcast besides scalars."""
    shape = tuple(shape)
    if a.shape == shape:
        return a
    if a.ndim != len(shape) or any(s != t and s != 1 for s, t in zip(a.shape, shape)):
        raise ValueError(f"expand: cannot expand {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s != t)

    def vjp(g, out, a, needs):
        return (sum_(g, axes, keepdims=True),)

    def vjp_np(g, out, a, needs):
        return (g.sum(axis=axes, keepdims=True),)

    return _apply("expand", lambda x: np.ascontiguousarray(np.broadcast_to(x, shape)), vjp, vjp_np, a)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[..., m, k] @ [..., k, n] with identical leading dims."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dims {a.shape[-1]} != {b.shape[-2]}")

    def vjp(g, out, a, b, needs):
        ga = matmul(g, _swap_last(b)) if needs[0] else None
        gb = matmul(_swap_last(a), g) if needs[1] else None
        return ga, gb

    def vjp_np(g, out, a, b, needs):
        ga = np.matmul(g, np.swapaxes(b, -1, -2)) if needs[0] else None
        gb = np.matmul(np.swapaxes(a, -1, -2), g) if needs[1] else None
        return ga, gb

    return _apply("matmul", np.matmul, vjp, vjp_np, a, b)


def _swap_last(a: Tensor) -> Tensor:
    perm = list(range(a.ndim))
    perm[-1], perm[-2] = perm[-2], perm[-1]
    return transpose(a, perm)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def vjp(g, out, *args):
        needs = args[-1]
        return tuple(
            slice_axis(g, axis, int(bounds[i]), int(bounds[i + 1])) if needs[i] else None for i in range(len(sizes))
        )

    def vjp_np(g, out, *args):
        needs = args[-1]
        idx = [slice(None)] * g.ndim
        res = []
        for i in range(len(sizes)):
            idx[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
            res.append(g[tuple(idx)] if needs[i] else None)
        return tuple(res)

    return _apply("concat", lambda *xs: np.concatenate(xs, axis=axis), vjp, vjp_np, *tensors)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % a.ndim
    n = a.shape[axis]
    idx = tuple(slice(start, stop) if i == axis else slice(None) for i in range(a.ndim))

    def vjp(g, out, a, needs):
        parts = []
        if start > 0:
            parts.append(Tensor(np.zeros(_with(a.shape, axis, start), dtype=a.dtype)))
        parts.append(g)
        if stop < n:
            parts.append(Tensor(np.zeros(_with(a.shape, axis, n - stop), dtype=a.dtype)))
        return (concat(parts, axis) if len(parts) > 1 else g,)

    def vjp_np(g, out, a, needs):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _apply("slice", lambda x: np.ascontiguousarray(x[idx]), vjp, vjp_np, a)


def _with(shape, axis, size):
    s = list(shape)
    s[axis] = size
    return tuple(s)


def _scatter_np(s: np.ndarray, idx: np.ndarray, rows: int) -> np.ndarray:
    out = np.zeros((rows,) + s.shape[1:], dtype=s.dtype)
    np.add.at(out, idx, s)
    return out


def take_rows(table: Tensor, idx) -> Tensor:
    """Gather rows of a 2-D table (embedding lookup)."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = table.shape[0]
    return _apply(
        "take_rows",
        lambda t: t[idx],
        lambda g, out, table, needs: (scatter_rows(g, idx, rows),),
        lambda g, out, table, needs: (_scatter_np(g, idx, rows),),
        table,
    )


def scatter_rows(src: Tensor, idx, rows: int) -> Tensor:
    """Adjoint of :func:`take_rows`: sum rows of ``src`` into a ``rows``-row table."""
    idx = np.asarray(idx, dtype=np.int64)
    return _apply(
        "scatter_rows",
        lambda s: _scatter_np(s, idx, rows),
        lambda g, out, s, needs: (take_rows(g, idx),),
        lambda g, out, s, needs: (g[idx],),
        src,
    )


def _positions(L_out: int, kernel: int, stride: int) -> np.ndarray:
    # positions[j, k] = index into the padded signal
    return np.arange(L_out)[:, None] * stride + np.arange(kernel)[None, :]


def unfold_np(xa: np.ndarray, kernel: int, stride: int, pad: int) -> np.ndarray:
    B, C, L = xa.shape
    L_out = (L + 2 * pad - kernel) // stride + 1
    xp = np.pad(xa, ((0, 0), (0, 0), (pad, pad))) if pad else xa
    win = xp[:, :, _positions(L_out, kernel, stride)]  # B, C, L_out, K
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3).reshape(B, L_out, C * kernel))


def fold_np(ca: np.ndarray, channels: int, length: int, kernel: int, stride: int, pad: int) -> np.ndarray:
    B, L_out, _ = ca.shape
    positions = _positions(L_out, kernel, stride)
    win = ca.reshape(B, L_out, channels, kernel).transpose(0, 2, 1, 3)  # B, C, L_out, K
    xp = np.zeros((B, channels, length + 2 * pad), dtype=ca.dtype)
    for k in range(kernel):
        # positions within one tap are distinct, so a plain indexed add is exact
        xp[:, :, positions[:, k]] += win[:, :, :, k]
    return np.ascontiguousarray(xp[:, :, pad : pad + length])


def _check_window(L: int, kernel: int, stride: int, pad: int) -> None:
    if L + 2 * pad < kernel:
        raise ValueError(f"conv1d: kernel {kernel} larger than padded input {L + 2 * pad}")
    if stride < 1:
        raise ValueError("conv1d: stride must be >= 1")


def unfold1d(x: Tensor, kernel: int, stride: int = 1, pad: int = 0) -> Tensor:
    """[B, C, L] -> [B, L_out, C*kernel] sliding windows over a zero-padded signal."""
    B, C, L = x.shape
    _check_window(L, kernel, stride, pad)
    return _apply(
        "unfold1d",
        lambda xa: unfold_np(xa, kernel, stride, pad),
        lambda g, out, x, needs: (fold1d(g, C, L, kernel, stride, pad),),
        lambda g, out, x, needs: (fold_np(g, C, L, kernel, stride, pad),),
        x,
    )


def fold1d(cols: Tensor, channels: int, length: int, kernel: int, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of :func:`unfold1d`: overlap-add windows back into [B, C, L]."""
    return _apply(
        "fold1d",
        lambda ca: fold_np(ca, channels, length, kernel, stride, pad),
        lambda g, out, c, needs: (unfold1d(g, kernel, stride, pad),),
        lambda g, out, c, needs: (unfold_np(g, kernel, stride, pad),),
        cols,
    )


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Row softmax with max subtraction. First-order only."""

    def fwd(x):
        e = np.exp(x - np.max(x, axis=axis, keepdims=True))
        return e / np.sum(e, axis=axis, keepdims=True)

    def vjp_np(g, p, a, needs):
        return (p * (g - np.sum(g * p, axis=axis, keepdims=True)),)

    return _apply("softmax", fwd, None, vjp_np, a)


# ---------------------------------------------------------------- differentiation


def _reachable(root: Tensor, stop: set | None = None) -> list[Tensor]:
    seen = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t._id in seen:
            continue
        seen[t._id] = t
        if stop is None or t._id not in stop:
            stack.extend(t._parents)
    return sorted(seen.values(), key=lambda t: t._id)


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    grad_output: Tensor | None = None,
    create_graph: bool = False,
    _local: bool = False,
) -> list[Tensor]:
    """Gradients of ``output`` with respect to each of ``inputs``.

    Inputs the output does not depend on get zero tensors. With ``create_graph``
    the returned tensors carry their own graph.
    """
    if grad_output is None:
        if output.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {output.shape}")
        grad_output = Tensor(np.ones(output.shape, dtype=output.dtype))
    wanted = {t._id for t in inputs}
    nodes = _reachable(output, wanted if _local else None) if output.requires_grad else [output]
    on_path: set[int] = set()
    for n in nodes:
        if n._id in wanted or any(p._id in on_path for p in n._parents):
            on_path.add(n._id)
    if create_graph:
        for n in nodes:
            if n._id in on_path and n._parents and not n.second_order:
                raise UnsupportedSecondOrder(f"op '{n.op}' has no second-order rule")

    if create_graph:
        grads: dict = {output._id: grad_output}
    else:
        g0 = grad_output.data if isinstance(grad_output, Tensor) else np.asarray(grad_output)
        grads = {output._id: g0}
    found: dict = {}
    with _grad_mode(create_graph):
        for n in reversed(nodes):
            g = grads.pop(n._id, None)
            if g is None:
                continue
            if n._id in wanted:
                found[n._id] = g
                if _local:
                    continue
            if not n._parents:
                continue
            needs = tuple(p.requires_grad and p._id in on_path for p in n._parents)
            if not any(needs):
                continue
            if create_graph:
                pgs = n._vjp(g, n, *n._parents, needs)
            else:
                pgs = n._vjp_np(g, n.data, *[p.data for p in n._parents], needs)
            for p, gp, need in zip(n._parents, pgs, needs):
                if not need or gp is None:
                    continue
                prev = grads.get(p._id)
                if prev is None:
                    grads[p._id] = gp
                elif create_graph:
                    grads[p._id] = add(prev, gp)
                else:
                    grads[p._id] = prev + gp
    out = []
    for t in inputs:
        g = found.get(t._id)
        if g is None:
            out.append(Tensor(np.zeros(t.shape, dtype=t.dtype)))
        elif create_graph:
            out.append(g)
        else:
            out.append(Tensor(np.asarray(g, dtype=t.dtype)))
    return out


def backward(loss: Tensor, leaves: dict) -> dict:
    """Name -> gradient array for every named leaf; untouched leaves get zeros."""
    names = list(leaves)
    gs = grad(loss, [leaves[k] for k in names])
    return {k: g.data for k, g in zip(names, gs)}


def backward_as_graph(loss: Tensor, wrt: Tensor) -> Tensor:
    """Gradient of ``loss`` wrt ``wrt`` as a differentiable tensor."""
    return grad(loss, [wrt], create_graph=True)[0]


class Tape:
    """Topologically ordered record of the ops that produced ``output``."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = _reachable(output)

    def __len__(self) -> int:
        return len(self.nodes)

    def ops(self) -> list[str]:
        return [n.op for n in self.nodes]

    def replay(self) -> np.ndarray:
        """Recompute every recorded op from the leaf values; returns the output value."""
        values: dict[int, np.ndarray] = {}
        for n in self.nodes:
            if not n._parents:
                values[n._id] = n.data
            else:
                values[n._id] = np.asarray(n._fwd(*(values[p._id] for p in n._parents)), dtype=n.dtype)
        return values[self.output._id]


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or np.float64))


def zeros(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float64) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))


def stack_sum(terms: Iterable[Tensor]) -> Tensor:
    total = None
    for t in terms:
        total = t if total is None else add(total, t)
    return total
