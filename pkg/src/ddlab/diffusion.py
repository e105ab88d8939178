"""VE diffusion pieces: noise schedule, preconditioning, denoising loss and PF-ODE solvers."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .autograd import Tensor, add, mul, no_grad, sub, sum_, mean

Denoiser = Callable[[Tensor, np.ndarray], Tensor]


@dataclass
class ScheduleSpec:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    N: int = 18

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.N < 1:
            raise ValueError("N must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class PreconditioningSpec:
    sigma_data: float = 0.5
    epsilon: float = 0.002

    def to_dict(self):
        return asdict(self)


@dataclass
class SamplerSpec:
    solver: str = "heun"
    steps: int = 32
    seed: int = 0
    class_id: int | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.solver not in ("euler", "heun"):
            raise ValueError(f"unknown solver {self.solver!r}")


def schedule_time(i, N: int, spec: ScheduleSpec | None = None):
    """Noise level at step index i of N; index 0 is sigma_min, index N is sigma_max.

    Fractional indices are accepted (used for midpoints).
    """
    spec = spec or ScheduleSpec()
    i_arr = np.asarray(i, dtype=np.float64)
    if np.any(i_arr < 0) or np.any(i_arr > N):
        raise ValueError(f"schedule index {i} outside [0, {N}]")
    a = spec.sigma_max ** (1.0 / spec.rho)
    b = spec.sigma_min ** (1.0 / spec.rho)
    out = (a + (1.0 - i_arr / N) * (b - a)) ** spec.rho
    return float(out) if out.ndim == 0 else out


def sigma_grid(N: int, spec: ScheduleSpec | None = None) -> np.ndarray:
    """T(N,N), ..., T(1,N) followed by a final 0 (the full jump to the denoised estimate)."""
    sig = [schedule_time(i, N, spec) for i in range(N, 0, -1)]
    return np.array(sig + [0.0])


def perturb(x0: np.ndarray, t, noise: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=x0.dtype)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    return x0 + _col(t, x0.shape) * noise


def _col(v, shape) -> np.ndarray:
    v = np.asarray(v)
    if v.ndim == 0:
        return v
    return v.reshape((shape[0],) + (1,) * (len(shape) - 1))


def c_skip(t, spec: PreconditioningSpec | None = None):
    spec = spec or PreconditioningSpec()
    t = np.asarray(t, dtype=np.float64)
    return spec.sigma_data**2 / ((t - spec.epsilon) ** 2 + spec.sigma_data**2)


def c_out(t, spec: PreconditioningSpec | None = None):
    spec = spec or PreconditioningSpec()
    t = np.asarray(t, dtype=np.float64)
    return spec.sigma_data * (t - spec.epsilon) / np.sqrt(spec.sigma_data**2 + t**2)


def _coef(values, x: Tensor) -> Tensor:
    arr = np.broadcast_to(_col(values, x.shape), x.shape).astype(x.dtype)
    return Tensor(np.ascontiguousarray(arr))


def precondition(model, x: Tensor, t, spec: PreconditioningSpec | None = None, class_ids=None) -> Tensor:
    """Denoised estimate c_skip(t) x + c_out(t) F(x, t)."""
    spec = spec or PreconditioningSpec()
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    if np.any(t < spec.epsilon):
        raise ValueError(f"t below epsilon={spec.epsilon}")
    raw = model(x, t, class_ids)
    return add(mul(_coef(c_skip(t, spec), x), x), mul(_coef(c_out(t, spec), x), raw))


def denoiser(model, spec: PreconditioningSpec | None = None, class_ids=None) -> Denoiser:
    return lambda x, t: precondition(model, x, t, spec, class_ids)


def analytic_denoiser(x, t, s2: float):
    """Posterior mean for zero-mean Gaussian data with per-coordinate variance s2."""
    if s2 <= 0:
        raise ValueError("s2 must be positive")
    if isinstance(x, Tensor):
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        return mul(_coef(s2 / (s2 + t**2), x), x)
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return x * (s2 / (s2 + _col(t, x.shape) ** 2))


def dsm_loss(model, x0: np.ndarray, rng: np.random.Generator, spec: PreconditioningSpec | None = None,
             schedule: ScheduleSpec | None = None, class_ids=None, p_mean: float = -1.2, p_std: float = 1.2) -> Tensor:
    """Weighted denoising regression with log-normal noise levels."""
    spec = spec or PreconditioningSpec()
    schedule = schedule or ScheduleSpec()
    B = x0.shape[0]
    t = np.exp(p_mean + p_std * rng.standard_normal(B))
    t = np.clip(t, max(spec.epsilon, schedule.sigma_min), schedule.sigma_max)
    noise = rng.standard_normal(x0.shape)
    xt = Tensor(perturb(x0.astype(np.float64), t, noise).astype(x0.dtype))
    D = precondition(model, xt, t, spec, class_ids)
    lam = (t**2 + spec.sigma_data**2) / (t * spec.sigma_data) ** 2
    diff = sub(D, Tensor(x0))
    per = sum_(mul(diff, diff), axis=tuple(range(1, x0.ndim)))
    return mean(mul(per, Tensor(lam.astype(x0.dtype))))


def euler_step(g: Denoiser, x: Tensor, t, t_next) -> Tensor:
    """x + (t - t_next)/t * (g(x, t) - x)."""
    t, t_next = _times(x, t, t_next)
    if np.all(t_next == t):
        return x
    d = g(x, t)
    return add(mul(_coef((t - t_next) / t, x), sub(d, x)), x)


def heun_step(g: Denoiser, x: Tensor, t, t_next) -> Tensor:
    """Second-order step on dx/dt = (x - g(x, t)) / t; Euler when t_next is 0."""
    t, t_next = _times(x, t, t_next)
    if np.all(t_next == t):
        return x
    d = g(x, t)
    x_e = add(mul(_coef((t - t_next) / t, x), sub(d, x)), x)
    if np.all(t_next == 0):
        return x_e
    if np.any(t_next == 0):
        raise ValueError("heun_step: mixed zero/non-zero t_next in one batch")
    slope = mul(_coef(1.0 / t, x), sub(x, d))
    d2 = g(x_e, t_next)
    slope2 = mul(_coef(1.0 / t_next, x), sub(x_e, d2))
    return add(x, mul(_coef((t_next - t) * 0.5, x), add(slope, slope2)))


def _times(x: Tensor, t, t_next):
    B = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
    t_next = np.broadcast_to(np.asarray(t_next, dtype=np.float64), (B,))
    if np.any(t <= 0):
        raise ValueError("solver step needs t > 0")
    if np.any(t_next < 0) or np.any(t_next > t):
        raise ValueError("solver step needs 0 <= t_next <= t")
    return t, t_next


STEPPERS = {"euler": euler_step, "heun": heun_step}


def solve(g: Denoiser, x: Tensor, sigmas, solver: str = "heun", callback=None) -> Tensor:
    step = STEPPERS[solver]
    for k in range(len(sigmas) - 1):
        if callback is not None:
            callback(k, float(sigmas[k]), x)
        x = step(g, x, sigmas[k], sigmas[k + 1])
    return x


@dataclass
class SampleSet:
    samples: np.ndarray
    seed_lo: int
    seed_hi: int
    nfe: int = 0
    labels: np.ndarray | None = None

    def __len__(self):
        return self.samples.shape[0]


def seed_noise(seed_lo: int, seed_hi: int, shape: tuple, dtype=np.float32) -> np.ndarray:
    """Standard normal noise where row i depends only on seed seed_lo + i."""
    out = np.empty((seed_hi - seed_lo,) + tuple(shape), dtype=np.float64)
    for j, s in enumerate(range(seed_lo, seed_hi)):
        out[j] = np.random.default_rng(s).standard_normal(shape)
    return out.astype(dtype)


def sample(model, sampler: SamplerSpec, schedule: ScheduleSpec | None = None, batch: int = 1000,
           n: int | None = None, precond: PreconditioningSpec | None = None, callback=None) -> SampleSet:
    """Solve the PF-ODE from sigma_max * noise for seeds [seed, seed + n)."""
    schedule = schedule or ScheduleSpec()
    n = batch if n is None else n
    dtype = next(iter(model.named_parameters().values())).dtype
    sigmas = sigma_grid(sampler.steps, ScheduleSpec(schedule.sigma_min, schedule.sigma_max, schedule.rho, sampler.steps))
    start_nfe = model.nfe
    chunks = []
    with no_grad():
        for lo in range(0, n, batch):
            hi = min(n, lo + batch)
            z = seed_noise(sampler.seed + lo, sampler.seed + hi, model.sample_shape, dtype)
            cls = None if sampler.class_id is None else np.full(hi - lo, sampler.class_id)
            x = Tensor(z * np.asarray(schedule.sigma_max, dtype=dtype))
            g = denoiser(model, precond, cls)
            chunks.append(solve(g, x, sigmas, sampler.solver, callback).data)
    calls = model.nfe - start_nfe
    n_chunks = max(1, -(-n // batch))
    return SampleSet(np.concatenate(chunks), sampler.seed, sampler.seed + n, nfe=calls // n_chunks)


def nfe_per_sample(solver: str, steps: int) -> int:
    """Forward passes per sample: Heun costs two per step except the final jump to zero."""
    return steps if solver == "euler" else 2 * steps - 1


def train_score(model, data: np.ndarray, steps: int, lr: float, batch: int, rng: np.random.Generator,
                labels: np.ndarray | None = None, precond: PreconditioningSpec | None = None,
                schedule: ScheduleSpec | None = None, cosine: bool = True) -> np.ndarray:
    """Fit ``model`` with dsm_loss under Adam(0.9, 0.999); returns per-step losses.

    With ``cosine`` the learning rate decays to zero over ``steps``.
    """
    from .autograd import Adam, backward

    params = {k: p for k, p in model.named_parameters().items() if not p.frozen}
    opt = Adam(params, lr, (0.9, 0.999))
    losses = np.empty(steps)
    use_labels = labels is not None and getattr(model.spec, "num_classes", 0)
    for s in range(steps):
        if cosine:
            opt.lr = lr * 0.5 * (1.0 + np.cos(np.pi * s / steps))
        idx = rng.integers(0, data.shape[0], batch)
        cls = labels[idx] if use_labels else None
        loss = dsm_loss(model, data[idx], rng, precond, schedule, cls)
        opt.step(backward(loss, params))
        losses[s] = float(loss.data)
    return losses
