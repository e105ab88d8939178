"""GAN objectives, the r1 penalty, and the instance-level distillation losses."""

from __future__ import annotations

import numpy as np

from ..autograd import Tensor, add, backward_as_graph, log_sigmoid, mean, mul, neg, no_grad, stack_sum, sub, sum_
from ..diffusion import PreconditioningSpec, ScheduleSpec, denoiser, euler_step, heun_step, schedule_time
from ..models import discriminator_logits

INSTANCE_METHODS = ("pd", "cd", "ctm")


def _detached(x) -> Tensor:
    return Tensor(x.data if isinstance(x, Tensor) else np.asarray(x))


def gan_d_loss(disc, real, fake) -> Tensor:
    """Sum over scales of the batch-mean -log D(real) - log(1 - D(fake))."""
    lr = discriminator_logits(disc, _detached(real))
    lf = discriminator_logits(disc, _detached(fake))
    terms = [add(mean(neg(log_sigmoid(a))), mean(neg(log_sigmoid(neg(b))))) for a, b in zip(lr, lf)]
    return stack_sum(terms)


def gan_g_loss(disc, fake: Tensor) -> Tensor:
    """Non-saturating generator loss: sum over scales of the batch-mean -log D(fake)."""
    return stack_sum(mean(neg(log_sigmoid(lg))) for lg in discriminator_logits(disc, fake))


def r1_penalty(disc, real, gamma: float) -> Tensor:
    """(gamma / 2) * batch mean of |grad_x sum_l logit_l(x)|^2 on real samples."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    x = Tensor(_detached(real).data, requires_grad=True)
    if gamma == 0:
        return Tensor(np.zeros((), dtype=x.dtype))
    total = stack_sum(sum_(lg) for lg in discriminator_logits(disc, x))
    g = backward_as_graph(total, x)
    per = sum_(mul(g, g), axis=tuple(range(1, x.ndim)))
    return mul(mean(per), gamma / 2.0)


# ---------------------------------------------------------------- instance losses


def jump(f, x: Tensor, t, s) -> Tensor:
    """F(x, t, s): Euler move from t toward s along the direction of the denoiser f."""
    return euler_step(f, x, t, s)


def sample_indices(method: str, N: int, B: int, rng: np.random.Generator):
    """Per-sample schedule indices (i, j, k) for (t, u, s); PD's u index may be fractional."""
    if method == "pd":
        if N < 2:
            raise ValueError("pd needs N >= 2")
        i = rng.integers(2, N + 1, B)
        k = np.floor(rng.uniform(0, 1, B) * (i - 1)).astype(np.int64)  # 0 <= k < i - 1
        return i.astype(np.float64), 0.5 * (i + k), k.astype(np.float64)
    if method == "cd":
        i = rng.integers(1, N + 1, B)
        return i.astype(np.float64), (i - 1).astype(np.float64), np.zeros(B)
    if method == "ctm":
        if N < 2:
            raise ValueError("ctm needs N >= 2")
        i = rng.integers(2, N + 1, B)
        j = np.floor(rng.uniform(0, 1, B) * i).astype(np.int64) + 1  # 1 <= j <= i
        k = np.floor(rng.uniform(0, 1, B) * (j + 1)).astype(np.int64)  # 0 <= k <= j
        return i.astype(np.float64), j.astype(np.float64), k.astype(np.float64)
    raise ValueError(f"unknown instance method {method!r}")


def _check_order(method: str, t, u, s) -> None:
    if method == "pd":
        if not (np.all(t > u) and np.all(u > s)):
            raise ValueError("pd requires t > u > s")
    elif not (np.all(t >= u) and np.all(u >= s)):
        raise ValueError(f"{method} requires t >= u >= s")


def _l2(a: Tensor, b: Tensor) -> Tensor:
    d = sub(a, b)
    return mean(sum_(mul(d, d), axis=tuple(range(1, d.ndim))))


def instance_loss(
    method: str,
    student,
    teacher,
    x0: np.ndarray,
    rng: np.random.Generator,
    solver: str = "heun",
    N: int = 18,
    schedule: ScheduleSpec | None = None,
    precond: PreconditioningSpec | None = None,
    indices=None,
    class_ids=None,
) -> Tensor:
    """Squared-L2 instance distillation loss for pd, cd or ctm.

    ``student`` is the trainable score model; ``teacher`` is a frozen score model
    or a denoiser callable. ``indices`` fixes the schedule indices (i, j, k) of
    (t, u, s) instead of sampling them.
    """
    schedule = schedule or ScheduleSpec()
    if method not in INSTANCE_METHODS:
        raise ValueError(f"unknown instance method {method!r}")
    B = x0.shape[0]
    if indices is None:
        indices = sample_indices(method, N, B, rng)
    i, j, k = (np.broadcast_to(np.asarray(v, dtype=np.float64), (B,)) for v in indices)
    t, u, s = (schedule_time(v, N, schedule) for v in (i, j, k))
    t, u, s = (np.broadcast_to(np.asarray(v, dtype=np.float64), (B,)) for v in (t, u, s))
    _check_order(method, t, u, s)

    f = denoiser(student, precond, class_ids)
    g_teacher = teacher if callable(teacher) and not hasattr(teacher, "named_parameters") else denoiser(
        teacher, precond, class_ids
    )
    step = heun_step if solver == "heun" else euler_step
    noise = rng.standard_normal(x0.shape)
    xt = Tensor((x0.astype(np.float64) + t.reshape((B,) + (1,) * (x0.ndim - 1)) * noise).astype(x0.dtype))

    if method == "pd":
        with no_grad():
            H = step(g_teacher, step(g_teacher, xt, t, u), u, s)
            coef = (t / (t - s)).reshape((B,) + (1,) * (x0.ndim - 1))
            target = Tensor((coef * (H.data - xt.data) + xt.data).astype(x0.dtype))
        return _l2(f(xt, t), target)

    if method == "cd":
        with no_grad():
            H = jump(f, step(g_teacher, xt, t, u), u, s)
        return _l2(jump(f, xt, t, s), Tensor(H.data))

    # ctm: iterative Euler solver from t down to u, one step per index gap
    with no_grad():
        y = xt
        gaps = (i - j).astype(np.int64)
        for n in range(int(gaps.max()) if B else 0):
            a = schedule_time(np.maximum(i - n, j), N, schedule)
            b = schedule_time(np.maximum(i - n - 1, j), N, schedule)
            y = euler_step(g_teacher, y, a, b)
        H = jump(f, y, u, s)
        smin = np.full(B, schedule.sigma_min)
        target = jump(f, H, s, smin)
    f_sg = denoiser(student.frozen_view(), precond, class_ids)
    pred = jump(f_sg, jump(f, xt, t, s), s, smin)
    return _l2(pred, Tensor(target.data))
