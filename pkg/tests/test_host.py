import numpy as np
import pytest

from poseprune.config import ModelConfig
from poseprune.data import toy_sequences
from poseprune.errors import ConfigError, DataError, NumericalError, ShapeError
from poseprune.flops import param_count
from poseprune.host import (
    HostBlock,
    HostModel,
    forward_seq2frame,
    forward_seq2seq,
    model_from_bytes,
    model_to_bytes,
    mpjpe_loss,
)
from poseprune.tensor import Tensor, grad_check

SMALL = ModelConfig(frames=9, joints=3, channels=8, blocks=2, heads=2, prune_after=1,
                    tokens=3, tra_heads=2)


def small(**kw):
    return SMALL.replace(**kw)


def poses(rng, cfg, batch=2):
    return rng.standard_normal((batch, cfg.frames, cfg.joints, 2)).astype(np.float32)


def test_embed_zero_input_gives_bias_plus_positions():
    model = HostModel(small())
    x, _ = model.embed(np.zeros((1, 9, 3, 2)))
    expected = (model.embedding.bias.data + model.temporal_pos.data[:, None]
                + model.joint_pos.data[None])
    np.testing.assert_allclose(x[0], expected, atol=1e-7)


def test_embed_single_joint_single_frame():
    cfg = small(frames=1, joints=1, tokens=1, prune_after=0)
    model = HostModel(cfg)
    x, _ = model.embed(np.array([[[[1.0, 2.0]]]]))
    ref = np.array([1.0, 2.0]) @ model.embedding.weight.data + model.embedding.bias.data
    np.testing.assert_allclose(x[0, 0, 0], ref + model.temporal_pos.data[0] + model.joint_pos.data[0],
                               atol=1e-6)


def test_embed_rejects_wrong_shape(rng):
    with pytest.raises(ShapeError):
        HostModel(small()).embed(rng.standard_normal((1, 8, 3, 2)))


def test_embed_gradient(rng):
    model = HostModel(small())
    x = rng.standard_normal((2, 9, 3, 2))
    w = rng.standard_normal((2, 9, 3, 8))

    def loss():
        y, c = model.embed(x)
        model.embed_backward(w.astype(y.dtype), c)
        return float((y * w).sum())

    params = model.embedding.parameters() + [model.temporal_pos, model.joint_pos]
    assert grad_check(loss, params) < 1e-6


@pytest.mark.parametrize("pipeline", ["seq2seq", "seq2frame"])
@pytest.mark.parametrize("strategy", ["tpc", "uniform", "attention", "motion"])
def test_output_shapes_and_finite(rng, pipeline, strategy):
    cfg = small(pipeline=pipeline, prune_strategy=strategy)
    out, cache = HostModel(cfg).forward(poses(rng, cfg))
    assert out.shape == ((2, 9, 3, 3) if pipeline == "seq2seq" else (2, 1, 3, 3))
    assert np.all(np.isfinite(out))


def test_unbatched_input(rng):
    model = HostModel(small())
    x = poses(rng, model.cfg, 1)
    np.testing.assert_array_equal(model.predict(x[0]), model.predict(x)[0])


@pytest.mark.parametrize("pipeline", ["seq2seq", "seq2frame"])
@pytest.mark.parametrize("recover", ["nearest", "linear"])
@pytest.mark.parametrize("strategy", ["tpc", "uniform", "motion", "attention"])
def test_full_selection_matches_unpruned(rng, pipeline, recover, strategy):
    cfg = small(tokens=9, pipeline=pipeline, recover_strategy=recover, prune_strategy=strategy)
    model = HostModel(cfg, seed=3)
    x = poses(rng, cfg)
    np.testing.assert_allclose(model.predict(x, prune=True), model.predict(x, prune=False), atol=1e-5)


def test_seq2seq_recovered_frame_count(rng):
    cfg = small(recovered=5)
    out = HostModel(cfg).predict(poses(rng, cfg))
    assert out.shape == (2, 5, 3, 3)


def test_seq2frame_center_not_duplicated(rng):
    cfg = small(pipeline="seq2frame", prune_strategy="uniform", tokens=3)
    _, cache = HostModel(cfg).forward(poses(rng, cfg, 1))
    keep = cache["samples"][0]["keep"][0]
    assert keep.tolist() == [0, 4, 8]  # uniform already contains the centre frame 4
    cfg = small(pipeline="seq2frame", prune_strategy="uniform", tokens=2)
    _, cache = HostModel(cfg).forward(poses(rng, cfg, 1))
    assert cache["samples"][0]["keep"][0].tolist() == [4, 0, 8]


def test_pipeline_wrappers_check_config(rng):
    model = HostModel(small())
    with pytest.raises(ConfigError):
        forward_seq2frame(model, poses(rng, model.cfg))
    assert forward_seq2seq(model, poses(rng, model.cfg)).shape == (2, 9, 3, 3)


def test_determinism(rng):
    x = poses(rng, SMALL)
    a = HostModel(SMALL, seed=5).predict(x)
    b = HostModel(SMALL, seed=5).predict(x)
    assert a.tobytes() == b.tobytes()


def test_temporal_attention_scores(rng):
    model = HostModel(small())
    s = model.temporal_attention_scores(poses(rng, model.cfg, 1)[0], 1)
    assert s.shape == (9,) and np.all(s >= 0)
    assert s.sum() == pytest.approx(1.0, abs=1e-5)
    x, _ = model.embed(poses(rng, model.cfg, 1))
    _, c = model.blocks[0].forward(x)
    probs = HostBlock.temporal_probs(c)[0]  # J x h x F x F
    np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-5)
    with pytest.raises(ConfigError):
        model.temporal_attention_scores(poses(rng, model.cfg, 1)[0], 2)


def test_temporal_attention_single_frame():
    cfg = small(frames=1, tokens=1, prune_after=1)
    s = HostModel(cfg).temporal_attention_scores(np.zeros((1, 3, 2)), 1)
    assert s.tolist() == [1.0]


def test_attention_scores_match_recomputation(rng):
    model = HostModel(small(blocks=2, tokens=9))
    x2d = poses(rng, model.cfg, 1)
    x, _ = model.embed(x2d)
    for block in model.blocks:
        x, c = block.forward(x)
    probs = HostBlock.temporal_probs(c)[0].astype(np.float64)
    ref = np.array([probs[:, :, :, t].mean() for t in range(9)])
    np.testing.assert_allclose(model.temporal_attention_scores(x2d[0], 2), ref, atol=1e-6)


def test_mpjpe_loss_examples():
    loss, grad = mpjpe_loss(np.array([[3.0, 4.0, 0.0]]), np.zeros((1, 3)))
    assert loss == 5.0
    np.testing.assert_allclose(grad, [[0.6, 0.8, 0.0]])


def test_train_step_zero_lr_keeps_parameters(rng):
    model = HostModel(small())
    before = [p.data.copy() for p in model.parameters()]
    x = poses(rng, model.cfg)
    model.train_step(x, rng.standard_normal((2, 9, 3, 3)), 0.0)
    for a, p in zip(before, model.parameters()):
        np.testing.assert_array_equal(a, p.data)


def test_train_step_loss_decreases_with_small_lr():
    cfg = small(prune_strategy="uniform")
    model = HostModel(cfg, seed=0)
    x2d, x3d = toy_sequences(np.random.default_rng(0), 2, cfg.frames, cfg.joints)
    losses = [model.train_step(x2d, x3d, 1e-3) for _ in range(50)]
    assert all(b <= a + 1e-6 for a, b in zip(losses, losses[1:]))


def test_train_step_rejects_nan(rng):
    model = HostModel(small())
    with pytest.raises(NumericalError):
        model.train_step(poses(rng, model.cfg), np.full((2, 9, 3, 3), np.nan), 0.1)


@pytest.mark.parametrize("pipeline,recover", [("seq2seq", "tra"), ("seq2seq", "linear"),
                                              ("seq2frame", "tra")])
def test_full_model_gradients(pipeline, recover):
    cfg = small(pipeline=pipeline, recover_strategy=recover, prune_strategy="uniform")
    r = np.random.default_rng(7)
    model = HostModel(cfg, seed=7)
    if model.tra is not None:
        model.tra.queries = Tensor(r.standard_normal(model.tra.queries.shape) * 0.3)
    x = r.standard_normal((2, 9, 3, 2))
    pred = model.predict(x)
    gt = r.standard_normal(pred.shape)

    def loss():
        out, cache = model.forward(x)
        value, grad = mpjpe_loss(out, gt)
        model.backward(grad, cache)
        return value

    assert grad_check(loss, model.parameters(), max_entries=4, rng=r) < 1e-3


@pytest.mark.parametrize("cfg", [small(), small(pipeline="seq2frame", prune_strategy="motion"),
                                 small(recover_strategy="linear", knn=3, recovered=None)])
def test_serialization_round_trip(rng, cfg):
    model = HostModel(cfg, seed=2)
    blob = model_to_bytes(model)
    back = model_from_bytes(blob)
    assert back.cfg == cfg
    x = poses(rng, cfg)
    assert back.predict(x).tobytes() == model.predict(x).tobytes()
    assert model_to_bytes(back) == blob


def test_serialization_errors():
    blob = model_to_bytes(HostModel(small()))
    with pytest.raises(DataError):
        model_from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(DataError):
        model_from_bytes(blob[:-4])
    with pytest.raises(DataError):
        model_from_bytes(blob + b"\0\0\0\0")
    with pytest.raises(DataError):
        model_from_bytes(blob[:10])


@pytest.mark.parametrize("cfg", [small(), small(pipeline="seq2frame"), small(recover_strategy="nearest"),
                                 small(tokens=9), small(recovered=4)])
def test_param_count_matches_model(cfg):
    host, tra = param_count(cfg)
    assert host + tra == HostModel(cfg).count_parameters()
