import json
from pathlib import Path

import numpy as np
import pytest

import ddlab.autograd as ag
from ddlab.autograd import Adam, Tensor
from ddlab.distill import gan_d_loss
from ddlab.models import (
    DiscriminatorSpec,
    FreezeError,
    ScoreNetSpec,
    apply_freeze_mask,
    build_discriminator,
    build_score_net,
    discriminator_logits,
    param_census,
    parse_freeze,
    raw_forward,
)

from gradcheck import numeric_grad, rel_err

GOLDEN = Path(__file__).parent / "golden"


def randomized(model, seed=0):
    """Stand-in for a trained model: zero-initialized output layers get random weights."""
    rng = np.random.default_rng(seed)
    for p in model.parameters().values():
        p.data = (p.data + 0.1 * rng.standard_normal(p.shape)).astype(p.dtype)
    return model


def test_same_spec_gives_identical_parameters():
    for kind in ("mlp2d", "unet1d"):
        a = build_score_net(ScoreNetSpec(kind=kind, seed=3)).state_dict()
        b = build_score_net(ScoreNetSpec(kind=kind, seed=3)).state_dict()
        assert a.keys() == b.keys()
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_different_seeds_differ():
    a = build_score_net(ScoreNetSpec(seed=0)).state_dict()
    b = build_score_net(ScoreNetSpec(seed=1)).state_dict()
    assert any(not np.array_equal(a[k], b[k]) for k in a)


def test_unknown_kind_is_an_error():
    with pytest.raises(ValueError, match="unknown"):
        build_score_net(ScoreNetSpec(kind="resnet"))


def test_unet_forward_shape_and_finite():
    m = build_score_net(ScoreNetSpec(kind="unet1d"))
    out = raw_forward(m, Tensor(np.zeros((1, 1, 32), np.float32)), 1.0)
    assert out.shape == (1, 1, 32)
    assert np.all(np.isfinite(out.data))


def test_shape_preservation_and_time_dependence():
    rng = np.random.default_rng(0)
    for kind, shape in (("mlp2d", (4, 2)), ("unet1d", (2, 1, 32))):
        m = randomized(build_score_net(ScoreNetSpec(kind=kind)))
        x = Tensor(rng.normal(size=shape).astype(np.float32))
        a, b = raw_forward(m, x, 0.5), raw_forward(m, x, 5.0)
        assert a.shape == shape
        assert not np.allclose(a.data, b.data)


def test_bad_shape_and_time_are_errors():
    m = build_score_net(ScoreNetSpec())
    with pytest.raises(ValueError, match="shape"):
        raw_forward(m, Tensor(np.zeros((2, 3), np.float32)), 1.0)
    with pytest.raises(ValueError, match="positive"):
        raw_forward(m, Tensor(np.zeros((2, 2), np.float32)), 0.0)


def test_class_conditioning():
    m = randomized(build_score_net(ScoreNetSpec(num_classes=4)))
    x = Tensor(np.ones((1, 2), np.float32))
    a = raw_forward(m, x, 1.0, class_ids=np.array([0]))
    b = raw_forward(m, x, 1.0, class_ids=np.array([3]))
    assert not np.allclose(a.data, b.data)
    with pytest.raises(ValueError, match="unconditional"):
        raw_forward(build_score_net(ScoreNetSpec()), x, 1.0, class_ids=np.array([0]))


def test_mlp_input_gradient_matches_finite_differences():
    m = randomized(build_score_net(ScoreNetSpec(dtype="f64", seed=2)))
    x0 = np.random.default_rng(1).normal(size=(3, 2))
    R = np.random.default_rng(2).normal(size=(3, 2))

    def f(x):
        return float(np.sum(raw_forward(m, Tensor(x), 0.7).data * R))

    x = Tensor(x0, requires_grad=True)
    g = ag.grad(ag.sum_(ag.mul(raw_forward(m, x, 0.7), Tensor(R))), [x])[0].data
    assert rel_err(g, numeric_grad(f, [x0], 0)) < 1e-4


# ------------------------------------------------------------ census and freezing


def test_unet_census_matches_golden_file_and_conv_dominates():
    golden = json.loads((GOLDEN / "census_unet1d.json").read_text())
    c = param_census(build_score_net(ScoreNetSpec(**golden["spec"])))
    assert c.counts == golden["counts"]
    assert c.total == golden["total"]
    assert max(c.counts, key=c.counts.get) == "Conv"


def test_mlp_census_matches_golden_file():
    golden = json.loads((GOLDEN / "census_mlp2d.json").read_text())
    assert param_census(build_score_net(ScoreNetSpec(**golden["spec"]))).counts == golden["counts"]


def test_census_partitions_all_parameters():
    for kind in ("mlp2d", "unet1d"):
        m = build_score_net(ScoreNetSpec(kind=kind))
        c = param_census(m)
        assert sum(c.counts.values()) == c.total == sum(a.size for a in m.state_dict().values())
        assert abs(sum(c.fractions.values()) - 1.0) < 1e-9


def test_census_unchanged_by_freezing():
    m = build_score_net(ScoreNetSpec(kind="unet1d"))
    before = param_census(m).counts
    apply_freeze_mask(m, {"Norm", "IO"})
    assert param_census(m).counts == before


@pytest.mark.parametrize(
    "trainable,frozen",
    [
        ({"Norm", "QKV", "Skip", "IO"}, {"Conv"}),
        ({"Norm", "Conv", "QKV", "Skip", "IO"}, set()),
        ({"Norm", "IO"}, {"Conv", "QKV", "Skip"}),
    ],
)
def test_freeze_mask_rows(trainable, frozen):
    m = build_score_net(ScoreNetSpec(kind="unet1d"))
    apply_freeze_mask(m, trainable)
    for p in m.parameters().values():
        assert p.frozen == (p.category in frozen)


def test_io_cannot_be_frozen():
    m = build_score_net(ScoreNetSpec())
    with pytest.raises(FreezeError, match="input/output"):
        apply_freeze_mask(m, {"Norm", "Conv"})
    with pytest.raises(FreezeError):
        parse_freeze("conv,io")


def test_parse_freeze():
    assert parse_freeze("none") == {"Norm", "Conv", "QKV", "Skip", "IO"}
    assert parse_freeze("conv,qkv") == {"Norm", "Skip", "IO"}
    with pytest.raises(FreezeError, match="unknown"):
        parse_freeze("bias")


# ------------------------------------------------------------ discriminators


def test_logit_counts():
    x = Tensor(np.zeros((5, 2), np.float32))
    plain = build_discriminator(DiscriminatorSpec(kind="plain"), (2,))
    proj = build_discriminator(DiscriminatorSpec(num_scales=3), (2,))
    assert [l.shape for l in discriminator_logits(plain, x)] == [(5,)]
    assert [l.shape for l in discriminator_logits(proj, x)] == [(5,)] * 3
    sig = build_discriminator(DiscriminatorSpec(num_scales=3), (1, 32))
    assert len(discriminator_logits(sig, Tensor(np.zeros((2, 1, 32), np.float32)))) == 3


def test_projected_features_survive_training_bitwise():
    disc = build_discriminator(DiscriminatorSpec(num_scales=3, feature_dim=16, head_width=16), (2,))
    rng = np.random.default_rng(0)
    probe = Tensor(rng.normal(size=(8, 2)).astype(np.float32))
    feats_before = [a.tobytes() for a in disc.feature_arrays()]
    out_before = [f.data.tobytes() for f in disc.features(probe)]
    heads_before = {k: v.copy() for k, v in disc.state_dict().items()}
    opt = Adam(disc.parameters(), lr=1e-2)
    for _ in range(100):
        real = Tensor(rng.normal(size=(16, 2)).astype(np.float32))
        fake = Tensor(rng.normal(size=(16, 2)).astype(np.float32) * 2)
        params = disc.parameters()
        opt.step(ag.backward(gan_d_loss(disc, real, fake), params))
    assert [a.tobytes() for a in disc.feature_arrays()] == feats_before
    assert [f.data.tobytes() for f in disc.features(probe)] == out_before
    assert any(not np.array_equal(heads_before[k], v) for k, v in disc.state_dict().items())


def test_unknown_discriminator_kind():
    with pytest.raises(ValueError, match="unknown"):
        build_discriminator(DiscriminatorSpec(kind="vgg"), (2,))
