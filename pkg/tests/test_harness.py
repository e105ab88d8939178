import csv
import filecmp
import os
import struct
import zlib

import numpy as np
import pytest

from ddlab.diffusion import SampleSet
from ddlab.harness import cli
from ddlab.harness.checkpoint import (
    BadMagicError,
    CRCError,
    FormatError,
    VersionError,
    decode,
    encode,
    load_checkpoint,
    save_checkpoint,
)
from ddlab.harness.config import ConfigError, ExperimentConfig
from ddlab.harness.datasets import RING_STD, gen_dataset, num_classes, ring_centers
from ddlab.harness.pipelines import MissingStageError, run_pipeline
from ddlab.harness.rng import stream, sub_seed
from ddlab.models import ScoreNetSpec, build_score_net

GOLDEN = os.path.join(os.path.dirname(__file__), "golden", "fixture_v1.ckpt")


def tiny_config(**over) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.apply_overrides([
        "run.data_n=2000", "run.train_steps=30", "run.train_batch=64", "run.seeds=0", "run.wall_clock=false",
        "run.profile_N=6", "run.profile_batch=3",
        "gan.batch=16", "gan.total_images=160", "gan.ema_halflife_images=100",
        "gan.disc_feature_dim=16", "gan.disc_head_width=16",
        "metrics.n=300", "metrics.heldout_n=300", "schedule.sample_steps=3",
        "distill.teacher_steps=2", "distill.sweep_sigmas=2.0",
    ])
    for k, v in over.items():
        cfg.set(k.replace("__", "."), v)
    return cfg


# ------------------------------------------------------------ datasets


def test_ring_centers_lie_on_unit_circle():
    c = ring_centers()
    assert c.shape == (8, 2)
    assert np.allclose(np.hypot(c[:, 0], c[:, 1]), 1.0)
    assert np.allclose(c[2], [0.0, 1.0], atol=1e-15)


def test_ring_samples_are_deterministic_and_near_centers():
    a, b = gen_dataset("ring8", 5000, 7), gen_dataset("ring8", 5000, 7)
    assert a.x.tobytes() == b.x.tobytes() and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.x, gen_dataset("ring8", 5000, 8).x)
    r = np.linalg.norm(a.x - ring_centers()[a.labels], axis=1)
    # radial distance of a 2d isotropic Gaussian is Rayleigh with mean std*sqrt(pi/2)
    assert abs(r.mean() - RING_STD * np.sqrt(np.pi / 2)) < 0.002


def test_ring_mode_counts_are_multinomial():
    n = 40_000
    counts = np.bincount(gen_dataset("ring8", n, 0).labels, minlength=8)
    sd = np.sqrt(n * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - n / 8) < 4 * sd)


@pytest.mark.parametrize("kind", ["spiral2d", "checkerboard2d", "blobs1d", "gauss2d"])
def test_other_datasets_have_expected_shapes(kind):
    d = gen_dataset(kind, 100, 0)
    assert d.x.dtype == np.float32 and np.all(np.isfinite(d.x))
    assert d.sample_shape == ((1, 32) if kind == "blobs1d" else (2,))
    assert (d.labels is not None) == (num_classes(kind) > 0)


def test_dataset_errors():
    with pytest.raises(ValueError):
        gen_dataset("mnist", 10, 0)
    with pytest.raises(ValueError):
        gen_dataset("ring8", 0, 0)


# ------------------------------------------------------------ rng streams


def test_streams_are_independent_of_each_other():
    a = stream(3, "data").standard_normal(4)
    assert np.array_equal(a, stream(3, "data").standard_normal(4))
    assert not np.array_equal(a, stream(3, "gan").standard_normal(4))
    assert not np.array_equal(a, stream(4, "data").standard_normal(4))
    assert sub_seed(3, "data") == sub_seed(3, "data") != sub_seed(3, "heldout")


# ------------------------------------------------------------ config


def test_config_rejects_unknown_keys_and_sections():
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_toml("[gan]\nlearning_rate = 1.0\n")
    with pytest.raises(ConfigError, match="section"):
        ExperimentConfig.from_toml("[optimizer]\nlr = 1.0\n")
    with pytest.raises(ConfigError, match="TOML"):
        ExperimentConfig.from_toml("[gan\n")
    cfg = ExperimentConfig()
    with pytest.raises(ConfigError):
        cfg.apply_overrides(["gan.batch"])
    with pytest.raises(ConfigError):
        cfg.set("batch", 3)


def test_overrides_are_typed():
    cfg = ExperimentConfig()
    cfg.apply_overrides(["gan.batch=32", "gan.gamma_r1=0.5", "run.wall_clock=false", "run.seeds=4,5",
                         "gan.total_images=1e4", "distill.method=combined"])
    assert cfg.gan.batch == 32 and cfg.gan.gamma_r1 == 0.5 and cfg.run.wall_clock is False
    assert cfg.run.seeds == [4, 5] and cfg.gan.total_images == 10_000 and cfg.distill.method == "combined"
    for bad in ("gan.batch=abc", "gan.batch=1.5", "run.wall_clock=maybe", "gan.gamma_r1=true"):
        with pytest.raises(ConfigError, match="bad value"):
            cfg.apply_overrides([bad])


def test_config_toml_round_trip(tmp_path):
    cfg = tiny_config(model__kind="unet1d")
    path = tmp_path / "c.toml"
    path.write_text(cfg.to_toml())
    back = ExperimentConfig.load(path)
    assert back == cfg and back.to_toml() == cfg.to_toml()


# ------------------------------------------------------------ checkpoints


def test_encoding_layout_byte_by_byte():
    arr = np.array([1.0, -2.0], dtype="<f4")
    body = b"DDL1" + struct.pack("<II", 1, 1) + struct.pack("<H", 2) + b"ab" + bytes([0, 1])
    body += struct.pack("<I", 2) + struct.pack("<2f", 1.0, -2.0)
    assert encode({"ab": arr}) == body + struct.pack("<I", zlib.crc32(body))


def test_golden_fixture_decodes_identically():
    got = load_checkpoint(GOLDEN)
    assert list(got) == ["w", "b", "s"]
    assert got["w"].dtype == np.float32 and got["w"].tolist() == [[0.0, 0.25, 0.5], [0.75, 1.0, 1.25]]
    assert got["b"].dtype == np.float64 and got["b"].tolist() == [-1.5, 2.25]
    assert got["s"].shape == () and got["s"].item() == 0.125
    assert encode(got) == open(GOLDEN, "rb").read()


def test_model_round_trip_is_bitwise(tmp_path):
    m = build_score_net(ScoreNetSpec(kind="unet1d", width=8))
    for p in m.parameters().values():
        p.data = p.data + np.random.default_rng(0).normal(size=p.data.shape).astype(p.data.dtype)
    save_checkpoint(m, tmp_path / "m.ckpt")
    m2 = load_checkpoint(tmp_path / "m.ckpt", into=build_score_net(ScoreNetSpec(kind="unet1d", width=8, seed=9)))
    a, b = m.state_dict(), m2.state_dict()
    assert list(a) == list(b)
    assert all(a[k].tobytes() == b[k].tobytes() and a[k].dtype == b[k].dtype for k in a)


def test_scalar_and_sample_set_round_trip(tmp_path):
    save_checkpoint({"x": np.array(3.5)}, tmp_path / "s.ckpt")
    assert load_checkpoint(tmp_path / "s.ckpt")["x"].shape == ()
    s = SampleSet(np.ones((3, 2), np.float32), 10, 13, 1, np.array([0, 1, 2]))
    save_checkpoint(s, tmp_path / "ss.ckpt")
    back = load_checkpoint(tmp_path / "ss.ckpt")
    assert (back.seed_lo, back.seed_hi, back.nfe) == (10, 13, 1)
    assert back.samples.tobytes() == s.samples.tobytes() and back.labels.tolist() == [0, 1, 2]


def test_corruption_is_refused():
    blob = open(GOLDEN, "rb").read()
    with pytest.raises(CRCError) as err:
        decode(blob[:-7])
    assert err.value.code == 12
    flipped = bytearray(blob)
    flipped[30] ^= 1
    with pytest.raises(CRCError):
        decode(bytes(flipped))
    with pytest.raises(BadMagicError) as err:
        decode(b"XXXX" + blob[4:])
    assert err.value.code == 10
    body = b"DDL1" + struct.pack("<II", 2, 0)
    with pytest.raises(VersionError) as err:
        decode(body + struct.pack("<I", zlib.crc32(body)))
    assert err.value.code == 11
    with pytest.raises(FormatError):
        encode({"i": np.arange(3)})


# ------------------------------------------------------------ cli


def test_cli_usage_errors_exit_2(capsys):
    assert cli.main(["bogus"]) == 2
    assert cli.main(["census", "--frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_gdd_i_alias_sets_conv_freeze():
    args = cli.build_parser().parse_args(["distill", "--method", "gdd-i", "--set", "gan.batch=8"])
    cfg = cli._config(args)
    assert cfg.distill.method == "gdd" and cfg.distill.freeze == "conv" and cfg.gan.batch == 8


def test_cli_census_prints_table_and_writes_csv(tmp_path, capsys):
    out = tmp_path / "c"
    assert cli.main(["census", "--set", "model.kind=unet1d", "--set", "run.dataset=blobs1d", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "Conv" in text and "274400" in text
    rows = list(csv.reader(open(out / "census.csv")))
    assert rows[0] == ["category", "count", "fraction"] and len(rows) == 6
    assert (out / "resolved_config.toml").exists()


def test_cli_reports_missing_stage(tmp_path, capsys):
    assert cli.main(["distill", "--out", str(tmp_path)]) == 1
    assert "train-score" in capsys.readouterr().err
    with pytest.raises(MissingStageError, match="distill"):
        run_pipeline("sample", tiny_config(), str(tmp_path))


def test_cli_bad_override_exits_nonzero(tmp_path, capsys):
    assert cli.main(["census", "--set", "gan.nope=1", "--out", str(tmp_path)]) == 1
    assert "gan.nope" in capsys.readouterr().err


def test_model_kind_must_fit_dataset(tmp_path):
    with pytest.raises(ValueError, match="does not fit"):
        run_pipeline("train-score", tiny_config(model__kind="unet1d"), str(tmp_path))


# ------------------------------------------------------------ pipelines


def _run_chain(cfg, out):
    for stage in ("train-score", "distill", "eval"):
        run_pipeline(stage, cfg, str(out))


def test_pipelines_are_bitwise_reproducible(tmp_path):
    cfg = tiny_config()
    _run_chain(cfg, tmp_path / "a")
    _run_chain(tiny_config(), tmp_path / "b")
    names = ["score.ckpt", "generator.ckpt", "score_log.csv", "train_log.csv", "eval.csv", "resolved_config.toml"]
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert match == names, (mismatch, errors)
    rows = {r["metric"]: float(r["value"]) for r in csv.DictReader(open(tmp_path / "a" / "eval.csv"))}
    assert rows["generator_nfe"] == 1.0 and rows["teacher_nfe"] == 5.0


def test_sample_and_sweep_pipelines(tmp_path):
    cfg = tiny_config()
    run_pipeline("train-score", cfg, str(tmp_path))
    rep = run_pipeline("sample", cfg, str(tmp_path), which="teacher", n=50)
    assert rep.n == 50
    s = load_checkpoint(tmp_path / "samples_teacher.ckpt")
    assert s.samples.shape == (50, 2) and s.nfe == 5
    run_pipeline("relfid-sweep", cfg, str(tmp_path))
    rows = list(csv.DictReader(open(tmp_path / "relfid_sweep.csv")))
    assert [r["k"] for r in rows] == ["2"]
    assert all(float(r["abs_metric"]) >= 0 and float(r["rel_metric"]) >= 0 for r in rows)


def test_unet_pipelines(tmp_path):
    cfg = tiny_config(model__kind="unet1d", run__dataset="blobs1d", model__width=8)
    run_pipeline("train-score", cfg, str(tmp_path))
    run_pipeline("freeze-ablation", cfg, str(tmp_path))
    rows = list(csv.DictReader(open(tmp_path / "freeze_ablation.csv")))
    assert [r["frozen"] for r in rows] == ["none", "conv", "conv,qkv", "conv,qkv,skip"]
    fr = [float(r["trainable_fraction"]) for r in rows]
    assert fr[0] > fr[1] > fr[2] > fr[3] > 0
    rep = run_pipeline("profile", cfg, str(tmp_path))
    assert rep.values["profile_rows"] > 0
