"""Adversarial distillation: GDD, GDD-I, GDD + CD, and k-step GAN-trained teachers."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..autograd import Adam, Tensor, add, backward, mul, no_grad
from ..diffusion import (
    PreconditioningSpec,
    SampleSet,
    ScheduleSpec,
    denoiser,
    euler_step,
    seed_noise,
    sigma_grid,
)
from ..harness.rng import stream
from ..models import apply_freeze_mask, build_discriminator, parse_freeze
from .ema import EMA
from .losses import gan_d_loss, gan_g_loss, instance_loss, r1_penalty

LOG_COLUMNS = ("step", "images_seen", "d_loss", "g_loss", "r1", "wall_ms", "g_ms", "g_nfe")
KSTEP_CHOICES = (1, 2, 4, 8, 10)


class DivergenceError(RuntimeError):
    """Generator loss became non-finite."""


@dataclass
class GANConfig:
    gamma_r1: float = 1e-4
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    batch: int = 256
    total_images: int = 256_000
    ema_halflife_images: int = 20_000
    ema_warmup_ratio: float = 0.05

    def __post_init__(self):
        if self.gamma_r1 < 0:
            raise ValueError("gamma_r1 must be non-negative")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.ema_warmup_ratio <= 1:
            raise ValueError("ema_warmup_ratio must lie in (0, 1]")
        if self.batch < 1 or self.total_images < 1 or self.ema_halflife_images < 1:
            raise ValueError("batch, total_images and ema_halflife_images must be positive")

    @property
    def steps(self) -> int:
        return max(1, self.total_images // self.batch)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TeacherSpec:
    method: str = "kstep_gan"
    steps: int = 2
    intermediate_sigma_override: float | None = None

    def __post_init__(self):
        if self.method not in ("pd", "cd", "ctm", "kstep_gan"):
            raise ValueError(f"unknown teacher method {self.method!r}")
        if self.steps < 1:
            raise ValueError("teacher steps must be >= 1")


class Generator:
    """k-step map from standard normal z: start at sigma_max * z and jump along ``sigmas``.

    Each jump is an Euler move toward the denoised estimate, so the final jump to 0
    returns the denoiser output and sampling costs len(sigmas) - 1 network calls.
    """

    def __init__(self, model, sigmas, precond: PreconditioningSpec | None = None):
        self.model = model
        self.sigmas = np.asarray(sigmas, dtype=np.float64)
        self.precond = precond or PreconditioningSpec()
        if self.sigmas.ndim != 1 or len(self.sigmas) < 2 or np.any(np.diff(self.sigmas) >= 0):
            raise ValueError("sigmas must be strictly decreasing with at least two entries")

    @property
    def steps(self) -> int:
        return len(self.sigmas) - 1

    @property
    def sample_shape(self) -> tuple:
        return self.model.sample_shape

    def __call__(self, z: Tensor, class_ids=None) -> Tensor:
        x = mul(z, float(self.sigmas[0]))
        g = denoiser(self.model, self.precond, class_ids)
        for t, t_next in zip(self.sigmas[:-1], self.sigmas[1:]):
            x = euler_step(g, x, t, t_next)
        return x

    def sample(self, seed_lo: int, n: int, batch: int = 4096) -> SampleSet:
        dtype = next(iter(self.model.named_parameters().values())).dtype
        start = self.model.nfe
        chunks = []
        with no_grad():
            for lo in range(0, n, batch):
                hi = min(n, lo + batch)
                z = seed_noise(seed_lo + lo, seed_lo + hi, self.sample_shape, dtype)
                chunks.append(self(Tensor(z)).data)
        calls = (self.model.nfe - start) // max(1, -(-n // batch))
        return SampleSet(np.concatenate(chunks), seed_lo, seed_lo + n, nfe=calls)


def one_step_sigmas(schedule: ScheduleSpec | None = None) -> np.ndarray:
    schedule = schedule or ScheduleSpec()
    return np.array([schedule.sigma_max, 0.0])


def kstep_sigmas(k: int, schedule: ScheduleSpec | None = None, override: float | None = None) -> np.ndarray:
    """T(k,k), ..., T(1,k) and a final 0; ``override`` replaces T(1,2) for k = 2."""
    schedule = schedule or ScheduleSpec()
    if k not in KSTEP_CHOICES:
        raise ValueError(f"teacher steps must be one of {KSTEP_CHOICES}")
    sig = sigma_grid(k, ScheduleSpec(schedule.sigma_min, schedule.sigma_max, schedule.rho, k))
    if override is not None:
        if k != 2:
            raise ValueError("intermediate sigma override is only defined for k = 2")
        if not schedule.sigma_min < override < schedule.sigma_max:
            raise ValueError("intermediate sigma must lie strictly between sigma_min and sigma_max")
        sig[1] = float(override)
    return sig


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        i = LOG_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=np.float64)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for r in self.rows:
                w.writerow([v if isinstance(v, (int, np.integer)) else f"{v:.9g}" for v in r])


@dataclass
class DistillResult:
    generator: Generator  # EMA weights
    student: Generator  # raw trained weights
    disc: object
    log: TrainLog
    ema: EMA


def _trainable(params: dict) -> dict:
    return {k: p for k, p in params.items() if not p.frozen}


def _gan_train(
    gen: Generator,
    disc,
    data,
    cfg: GANConfig,
    seed: int,
    extra_g_loss=None,
    counted=(),
    wall_clock: bool = True,
    callback=None,
) -> DistillResult:
    noise_rng = stream(seed, "gan.noise")
    data_rng = stream(seed, "gan.data")
    model = gen.model
    d_params = disc.named_parameters()
    g_params = model.named_parameters()
    g_train = _trainable(g_params)
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    opt_d = Adam(d_params, cfg.lr_d, betas)
    opt_g = Adam(g_train, cfg.lr_g, betas)
    ema = EMA(model, cfg.ema_halflife_images, cfg.ema_warmup_ratio)
    dtype = next(iter(g_params.values())).dtype
    B = cfg.batch
    log = TrainLog()
    x_all = data.x if hasattr(data, "x") else np.asarray(data)
    n_data = x_all.shape[0]
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        # discriminator update on reals and detached fakes
        z = Tensor(noise_rng.standard_normal((B,) + gen.sample_shape).astype(dtype))
        with no_grad():
            fake = gen(z)
        real = Tensor(x_all[data_rng.integers(0, n_data, B)])
        d_loss = gan_d_loss(disc, real, fake)
        r1 = r1_penalty(disc, real, cfg.gamma_r1)
        opt_d.step(backward(add(d_loss, r1), d_params))
        # generator update
        t1 = time.perf_counter()
        nfe0 = model.nfe + sum(m.nfe for m in counted)
        z = Tensor(noise_rng.standard_normal((B,) + gen.sample_shape).astype(dtype))
        g_loss = gan_g_loss(disc, gen(z))
        if extra_g_loss is not None:
            g_total = add(g_loss, extra_g_loss(step))
        else:
            g_total = g_loss
        gl = float(g_total.data)
        if not math.isfinite(gl):
            raise DivergenceError(f"generator loss is {gl} at step {step} (d_loss={float(d_loss.data):.4g})")
        opt_g.step(backward(g_total, g_train))
        g_nfe = model.nfe + sum(m.nfe for m in counted) - nfe0
        t2 = time.perf_counter()
        ema.update(model, B)
        wall, g_ms = ((t2 - t0) * 1e3, (t2 - t1) * 1e3) if wall_clock else (0.0, 0.0)
        log.rows.append((step, (step + 1) * B, float(d_loss.data), gl, float(r1.data), wall, g_ms, g_nfe))
        if callback is not None:
            callback(step, ema)
    sh = ema.shadow
    return DistillResult(Generator(sh, gen.sigmas, gen.precond), gen, disc, log, ema)


def _prepare_student(score_init, freeze) -> object:
    model = score_init.clone()
    if freeze is not None:
        trainable = parse_freeze(freeze) if isinstance(freeze, str) else set(freeze)
        apply_freeze_mask(model, trainable)
    return model


def distill_gdd(
    config: GANConfig,
    score_init,
    disc_spec,
    dataset,
    freeze=None,
    seed: int = 0,
    schedule: ScheduleSpec | None = None,
    precond: PreconditioningSpec | None = None,
    wall_clock: bool = True,
    callback=None,
) -> DistillResult:
    """One-step GAN distillation from a pre-trained score model.

    ``freeze`` is a trainable category set or a frozen-category string such as
    'conv' (GDD-I); None trains every layer.
    """
    model = _prepare_student(score_init, freeze)
    gen = Generator(model, one_step_sigmas(schedule), precond)
    disc = build_discriminator(disc_spec, model.sample_shape)
    return _gan_train(gen, disc, dataset, config, seed, wall_clock=wall_clock, callback=callback)


def distill_combined(
    config: GANConfig,
    score_init,
    disc_spec,
    dataset,
    cd_weight: float,
    freeze=None,
    seed: int = 0,
    N: int = 18,
    solver: str = "heun",
    schedule: ScheduleSpec | None = None,
    precond: PreconditioningSpec | None = None,
    wall_clock: bool = True,
    callback=None,
) -> DistillResult:
    """GDD with an added consistency-distillation term weighted by ``cd_weight``."""
    if cd_weight < 0:
        raise ValueError("cd_weight must be non-negative")
    if cd_weight == 0:
        return distill_gdd(config, score_init, disc_spec, dataset, freeze, seed, schedule, precond, wall_clock, callback)
    model = _prepare_student(score_init, freeze)
    teacher = score_init.frozen_view()
    gen = Generator(model, one_step_sigmas(schedule), precond)
    disc = build_discriminator(disc_spec, model.sample_shape)
    cd_rng = stream(seed, "gan.cd")
    data_x = dataset.x if hasattr(dataset, "x") else np.asarray(dataset)

    def extra(step):
        x0 = data_x[cd_rng.integers(0, data_x.shape[0], config.batch)]
        loss = instance_loss("cd", model, teacher, x0, cd_rng, solver=solver, N=N, schedule=schedule, precond=precond)
        return mul(loss, float(cd_weight))

    return _gan_train(gen, disc, dataset, config, seed, extra, (teacher,), wall_clock, callback)


def train_kstep_teacher(
    config: GANConfig,
    score_init,
    disc_spec,
    dataset,
    teacher_spec: TeacherSpec,
    seed: int = 0,
    schedule: ScheduleSpec | None = None,
    precond: PreconditioningSpec | None = None,
    wall_clock: bool = True,
) -> DistillResult:
    """Train the composed k-step map end to end with the GAN loss alone."""
    if teacher_spec.method != "kstep_gan":
        raise ValueError("train_kstep_teacher needs method 'kstep_gan'")
    sig = kstep_sigmas(teacher_spec.steps, schedule, teacher_spec.intermediate_sigma_override)
    model = score_init.clone()
    gen = Generator(model, sig, precond)
    disc = build_discriminator(disc_spec, model.sample_shape)
    return _gan_train(gen, disc, dataset, config, seed, wall_clock=wall_clock)
