"""Experiment pipelines. Each stage writes its artifacts under an output directory
and finishes with an eval report; every random stream derives from run.seed."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from ..autograd import set_deterministic
from ..diffusion import SamplerSpec, sample, train_score
from ..distill import (
    GANConfig,
    Generator,
    TeacherSpec,
    distill_combined,
    distill_gdd,
    one_step_sigmas,
    train_kstep_teacher,
)
from ..metrics import FeatureMap, MetricReport, SweepRow, frechet_distance, mmd2_unbiased, mode_coverage, rel_abs_sweep
from ..models import build_score_net, param_census, parse_freeze
from ..profiler import emit_profile, minmax_normalize, record_activations
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .datasets import Dataset, blob_centers, gen_dataset, ring_centers
from .rng import stream, sub_seed

FREEZE_ROWS = ("none", "conv", "conv,qkv", "conv,qkv,skip")
EVAL_SEED_BASE = 1_000_000
MMD_POINTS = 2000


class MissingStageError(RuntimeError):
    """A pipeline needs an artifact that an earlier stage has not produced."""


@dataclass
class Artifacts:
    out: str

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    @property
    def score(self) -> str:
        return self.path("score.ckpt")

    @property
    def generator(self) -> str:
        return self.path("generator.ckpt")


def _kind_check(cfg: ExperimentConfig) -> None:
    points = cfg.run.dataset in ("ring8", "spiral2d", "checkerboard2d", "gauss2d")
    if points != (cfg.model.kind == "mlp2d"):
        raise ValueError(f"model kind {cfg.model.kind!r} does not fit dataset {cfg.run.dataset!r}")


def training_data(cfg: ExperimentConfig) -> Dataset:
    return gen_dataset(cfg.run.dataset, cfg.run.data_n, sub_seed(cfg.run.seed, "data"))


def heldout_data(cfg: ExperimentConfig) -> Dataset:
    return gen_dataset(cfg.run.dataset, cfg.metrics.heldout_n, sub_seed(cfg.run.seed, "heldout"))


def _prepare(cfg: ExperimentConfig, out: str) -> Artifacts:
    _kind_check(cfg)
    set_deterministic(cfg.run.deterministic)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "resolved_config.toml"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_toml())
    return Artifacts(out)


def load_score(cfg: ExperimentConfig, art: Artifacts):
    if not os.path.exists(art.score):
        raise MissingStageError(f"stage 'train-score' has not run: {art.score} not found")
    return load_checkpoint(art.score, into=build_score_net(cfg.score_spec()))


def load_generator(cfg: ExperimentConfig, art: Artifacts) -> Generator:
    if not os.path.exists(art.generator):
        raise MissingStageError(f"stage 'distill' has not run: {art.generator} not found")
    model = load_checkpoint(art.generator, into=build_score_net(cfg.score_spec()))
    return Generator(model, one_step_sigmas(cfg.schedule_spec()), cfg.precond_spec())


def _centers(kind: str):
    if kind == "ring8":
        return ring_centers()
    return None


def evaluate(cfg: ExperimentConfig, samples, nfe: int, seed_lo: int, prefix: str = "") -> MetricReport:
    """Distances of a sample set to held-out data."""
    held = heldout_data(cfg).x
    n = min(len(samples), len(held))
    x = np.asarray(samples)[:n]
    ref = held[:n]
    vals = {
        f"{prefix}fd_raw": frechet_distance(x, ref) if x[0].size <= 16 else float("nan"),
        f"{prefix}fd_features": frechet_distance(x, ref, cfg.feature_map()),
        f"{prefix}mmd2": mmd2_unbiased(x[:MMD_POINTS], ref[:MMD_POINTS]),
        f"{prefix}nfe": float(nfe),
    }
    vals = {k: v for k, v in vals.items() if np.isfinite(v)}
    centers = _centers(cfg.run.dataset)
    if centers is not None:
        cov = mode_coverage(x, centers, cfg.metrics.mode_radius)
        vals[f"{prefix}mode_coverage_min"] = cov.min()
        vals[f"{prefix}background"] = cov.background
    return MetricReport(vals, n, seed_lo, seed_lo + n)


def _write_eval(art: Artifacts, reports: list[MetricReport], name: str = "eval.csv") -> MetricReport:
    merged = {}
    for r in reports:
        merged.update(r.values)
    rep = MetricReport(merged, reports[0].n, reports[0].seed_lo, reports[0].seed_hi)
    rep.to_csv(art.path(name))
    return rep


def _teacher_samples(cfg: ExperimentConfig, score, n: int, seed_lo: int):
    spec = SamplerSpec(cfg.schedule.solver, cfg.schedule.sample_steps, seed_lo)
    return sample(score, spec, cfg.schedule_spec(), batch=min(n, 10_000), n=n, precond=cfg.precond_spec())


# ---------------------------------------------------------------- stages


def run_train_score(cfg: ExperimentConfig, out: str) -> MetricReport:
    art = _prepare(cfg, out)
    data = training_data(cfg)
    model = build_score_net(cfg.score_spec())
    losses = train_score(
        model, data.x, cfg.run.train_steps, cfg.run.train_lr, cfg.run.train_batch,
        stream(cfg.run.seed, "train_score"), data.labels, cfg.precond_spec(), cfg.schedule_spec(),
    )
    save_checkpoint(model, art.score)
    with open(art.path("score_log.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "loss"))
        for i, v in enumerate(losses):
            w.writerow([i, f"{v:.9g}"])
    seed_lo = EVAL_SEED_BASE
    s = _teacher_samples(cfg, model, cfg.metrics.n, seed_lo)
    return _write_eval(art, [evaluate(cfg, s.samples, s.nfe, seed_lo, "teacher_")])


def _distill(cfg: ExperimentConfig, score, data, seed: int, freeze=None, cd_weight=None):
    method = cfg.distill.method
    freeze = cfg.distill.freeze if freeze is None else freeze
    if method == "gdd-i":
        freeze = "conv"
    trainable = parse_freeze(freeze)
    cd = cfg.distill.cd_weight if cd_weight is None else cd_weight
    kw = dict(schedule=cfg.schedule_spec(), precond=cfg.precond_spec(), wall_clock=cfg.run.wall_clock)
    if method == "combined" or cd > 0:
        return distill_combined(cfg.gan_config(), score, cfg.disc_spec(), data, cd, trainable, seed,
                                N=cfg.distill.instance_N, solver=cfg.schedule.solver, **kw)
    if method not in ("gdd", "gdd-i"):
        raise ValueError(f"unknown distill method {method!r}")
    return distill_gdd(cfg.gan_config(), score, cfg.disc_spec(), data, trainable, seed, **kw)


def run_distill(cfg: ExperimentConfig, out: str) -> MetricReport:
    art = _prepare(cfg, out)
    score = load_score(cfg, art)
    res = _distill(cfg, score, training_data(cfg), sub_seed(cfg.run.seed, "gan"))
    save_checkpoint(res.generator.model, art.generator)
    res.log.to_csv(art.path("train_log.csv"))
    seed_lo = EVAL_SEED_BASE
    s = res.generator.sample(seed_lo, cfg.metrics.n)
    return _write_eval(art, [evaluate(cfg, s.samples, s.nfe, seed_lo, "generator_")])


def run_sample(cfg: ExperimentConfig, out: str, which: str = "generator", n: int | None = None) -> MetricReport:
    art = _prepare(cfg, out)
    n = n or cfg.metrics.n
    seed_lo = EVAL_SEED_BASE
    if which == "generator":
        s = load_generator(cfg, art).sample(seed_lo, n)
    elif which == "teacher":
        s = _teacher_samples(cfg, load_score(cfg, art), n, seed_lo)
    else:
        raise ValueError("sample source must be 'generator' or 'teacher'")
    save_checkpoint(s, art.path(f"samples_{which}.ckpt"))
    return _write_eval(art, [evaluate(cfg, s.samples, s.nfe, seed_lo, f"{which}_")])


def run_eval(cfg: ExperimentConfig, out: str) -> MetricReport:
    art = _prepare(cfg, out)
    seed_lo = EVAL_SEED_BASE
    reports = []
    score = load_score(cfg, art)
    t = _teacher_samples(cfg, score, cfg.metrics.n, seed_lo)
    reports.append(evaluate(cfg, t.samples, t.nfe, seed_lo, "teacher_"))
    if os.path.exists(art.generator):
        g = load_generator(cfg, art).sample(seed_lo, cfg.metrics.n)
        reports.append(evaluate(cfg, g.samples, g.nfe, seed_lo, "generator_"))
    return _write_eval(art, reports)


def _sweep_rows(cfg, score, data, teacher_specs, labels) -> list[tuple[int, SweepRow]]:
    fm = cfg.feature_map()
    held = heldout_data(cfg)
    rows = []
    for seed in cfg.run.seeds:
        gseed = sub_seed(seed, "gan")
        student = _distill(cfg, score, data, gseed, freeze="none", cd_weight=0.0).generator
        teachers = []
        for spec in teacher_specs:
            kw = dict(schedule=cfg.schedule_spec(), precond=cfg.precond_spec(), wall_clock=cfg.run.wall_clock)
            teachers.append(train_kstep_teacher(cfg.gan_config(), score, cfg.disc_spec(), data, spec, gseed, **kw).generator)
        for r in rel_abs_sweep(student, teachers, held, fm, cfg.metrics.n, EVAL_SEED_BASE, labels):
            rows.append((seed, r))
    return rows


def _write_sweep(art: Artifacts, rows, name: str) -> None:
    with open(art.path(name), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "k", "label", "abs_metric", "rel_metric"))
        for seed, r in rows:
            w.writerow([seed, r.k, r.label, f"{r.abs_metric:.9g}", f"{r.rel_metric:.9g}"])


def _sweep_report(rows) -> MetricReport:
    vals = {}
    for seed, r in rows:
        tag = f"seed{seed}_k{r.k}" + (f"_{r.label}" if r.label else "")
        vals[f"abs_{tag}"] = r.abs_metric
        vals[f"rel_{tag}"] = r.rel_metric
    return vals


def run_relfid_sweep(cfg: ExperimentConfig, out: str, steps=None) -> MetricReport:
    art = _prepare(cfg, out)
    score = load_score(cfg, art)
    ks = list(steps or cfg.distill.teacher_steps)
    specs = [TeacherSpec("kstep_gan", int(k)) for k in ks]
    rows = _sweep_rows(cfg, score, training_data(cfg), specs, [f"k{k}" for k in ks])
    _write_sweep(art, rows, "relfid_sweep.csv")
    rep = MetricReport(_sweep_report(rows), cfg.metrics.n, EVAL_SEED_BASE, EVAL_SEED_BASE + cfg.metrics.n)
    rep.to_csv(art.path("eval.csv"))
    return rep


def run_sigma_sweep(cfg: ExperimentConfig, out: str, sigmas=None) -> MetricReport:
    art = _prepare(cfg, out)
    score = load_score(cfg, art)
    sig = sorted(float(s) for s in (sigmas or cfg.distill.sweep_sigmas))
    specs = [TeacherSpec("kstep_gan", 2, s) for s in sig]
    rows = _sweep_rows(cfg, score, training_data(cfg), specs, [f"sigma{s:g}" for s in sig])
    _write_sweep(art, rows, "sigma_sweep.csv")
    rep = MetricReport(_sweep_report(rows), cfg.metrics.n, EVAL_SEED_BASE, EVAL_SEED_BASE + cfg.metrics.n)
    rep.to_csv(art.path("eval.csv"))
    return rep


def run_freeze_ablation(cfg: ExperimentConfig, out: str) -> MetricReport:
    art = _prepare(cfg, out)
    score = load_score(cfg, art)
    data = training_data(cfg)
    census = param_census(score)
    seed_lo = EVAL_SEED_BASE
    vals = {}
    with open(art.path("freeze_ablation.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("frozen", "Norm", "Conv", "QKV", "Skip", "trainable_fraction", "fd_features"))
        for row in FREEZE_ROWS:
            trainable = parse_freeze(row)
            res = _distill(cfg, score, data, sub_seed(cfg.run.seed, "gan"), freeze=row, cd_weight=0.0)
            s = res.generator.sample(seed_lo, cfg.metrics.n)
            rep = evaluate(cfg, s.samples, s.nfe, seed_lo)
            frac = sum(census.fractions[c] for c in trainable)
            marks = ["yes" if c in trainable else "no" for c in ("Norm", "Conv", "QKV", "Skip")]
            w.writerow([row, *marks, f"{frac:.9g}", f"{rep.values['fd_features']:.9g}"])
            vals[f"fd_features_frozen_{row.replace(',', '+')}"] = rep.values["fd_features"]
    rep = MetricReport(vals, cfg.metrics.n, seed_lo, seed_lo + cfg.metrics.n)
    rep.to_csv(art.path("eval.csv"))
    return rep


def run_profile(cfg: ExperimentConfig, out: str) -> MetricReport:
    art = _prepare(cfg, out)
    score = load_score(cfg, art)
    O = record_activations(
        score, cfg.run.profile_N, cfg.run.profile_batch, sub_seed(cfg.run.seed, "profile"),
        cfg.schedule.solver, cfg.schedule_spec(), cfg.precond_spec(),
    )
    Oh = minmax_normalize(O)
    rows = emit_profile(Oh, art.path("profile.csv"))
    seed_lo = EVAL_SEED_BASE
    s = _teacher_samples(cfg, score, cfg.metrics.n, seed_lo)
    rep = evaluate(cfg, s.samples, s.nfe, seed_lo, "teacher_")
    rep.values["profile_rows"] = float(rows)
    rep.to_csv(art.path("eval.csv"))
    return rep


def census_table(cfg: ExperimentConfig) -> list[tuple[str, int, float]]:
    return param_census(build_score_net(cfg.score_spec())).rows()


def run_census(cfg: ExperimentConfig, out: str) -> MetricReport:
    art = _prepare(cfg, out)
    rows = census_table(cfg)
    with open(art.path("census.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("category", "count", "fraction"))
        for c, n, f in rows:
            w.writerow([c, n, f"{f:.9g}"])
    total = sum(n for _, n, _ in rows)
    rep = MetricReport({f"fraction_{c}": f for c, _, f in rows}, total, 0, 0)
    rep.to_csv(art.path("eval.csv"))
    return rep


PIPELINES = {
    "train-score": run_train_score,
    "distill": run_distill,
    "sample": run_sample,
    "eval": run_eval,
    "relfid-sweep": run_relfid_sweep,
    "sigma-sweep": run_sigma_sweep,
    "freeze-ablation": run_freeze_ablation,
    "profile": run_profile,
    "census": run_census,
}


def run_pipeline(name: str, cfg: ExperimentConfig, out: str, **kw) -> MetricReport:
    if name not in PIPELINES:
        raise ValueError(f"unknown pipeline {name!r}")
    return PIPELINES[name](cfg, out, **kw)
