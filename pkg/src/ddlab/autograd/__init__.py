from .nn import attention, conv1d, group_norm_modulated, linear
from .optim import Adam
from .tensor import (
    Tape,
    Tensor,
    UnsupportedSecondOrder,
    add,
    as_tensor,
    backward,
    backward_as_graph,
    concat,
    div,
    exp,
    expand,
    fold1d,
    grad,
    grad_enabled,
    is_deterministic,
    log,
    log_sigmoid,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    ones,
    power,
    reshape,
    scatter_rows,
    set_deterministic,
    sigmoid,
    silu,
    slice_axis,
    softmax,
    sqrt,
    square,
    stack_sum,
    fused,
    sub,
    sum_,
    take_rows,
    transpose,
    unfold1d,
    zeros,
)

__all__ = [name for name in dir() if not name.startswith("_")]
