import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sketchgen import models as M
from sketchgen import tensor as T
from sketchgen.checkpoint import Checkpoint, CheckpointError, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from sketchgen.data import all_sketches
from sketchgen.loss import mse_loss
from sketchgen.tensor import ShapeError, Tensor
from sketchgen.training import (Adam, AdamState, ClassifierFitConfig, EndToEnd, TrainConfig, TrainingDiverged,
                                adam_step, decoder_checkpoint, epoch_batches, predict_logits,
                                pretrain_loss_classifier, topk_accuracy, train_end_to_end)


def _param(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


# -- Adam ----------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5).filter(lambda g: abs(g) > 1e-3), min_size=1, max_size=4),
       st.floats(1e-4, 1e-1))
def test_adam_first_step_is_lr_times_sign(grads, lr):
    p = _param(np.zeros(len(grads)))
    adam_step([p], [np.array(grads)], AdamState(lr=lr))
    np.testing.assert_allclose(p.data, -lr * np.sign(grads), rtol=1e-4)


def test_adam_zero_gradient_leaves_params():
    p = _param([1.0, -2.0])
    state = AdamState()
    for _ in range(5):
        adam_step([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_constant_gradient_steps_approach_lr():
    p = _param([0.0])
    state = AdamState(lr=0.01)
    prev = 0.0
    for _ in range(200):
        adam_step([p], [np.array([3.0])], state)
        step, prev = prev - p.data[0], p.data[0]
    assert abs(step - 0.01) < 1e-6


def test_adam_matches_scalar_oracle():
    grads = list(np.random.default_rng(0).standard_normal(50))
    p = _param([0.7])
    state = AdamState(lr=0.05)
    traj = []
    for g in grads:
        adam_step([p], [np.array([g])], state)
        traj.append(p.data[0])
    np.testing.assert_allclose(traj, oracles.adam_loops(0.7, grads, lr=0.05), rtol=1e-12, atol=1e-15)


def test_adam_shape_mismatch_and_skipped_grads():
    p, q = _param([1.0, 2.0]), _param([3.0])
    with pytest.raises(ShapeError):
        adam_step([p], [np.ones(3)], AdamState())
    adam_step([p, q], [np.ones(2), None], AdamState())
    assert q.data[0] == 3.0 and p.data[0] != 1.0


def test_adam_optimizer_state_round_trip():
    p = _param([1.0, 2.0])
    opt = Adam([p], lr=0.1)
    p.grad = np.array([0.5, -0.5])
    opt.step()
    other = Adam([_param([1.0, 2.0])])
    other.load(opt.meta(), opt.state_arrays())
    assert other.state.step == 1 and other.state.lr == 0.1
    np.testing.assert_array_equal(other.state.m[0], opt.state.m[0])


def test_multi_target_mse_minimizer_is_pixelwise_mean():
    targets = np.random.default_rng(0).uniform(0, 1, (5, 1, 1, 8, 8))
    img = _param(np.full((1, 1, 8, 8), 0.5))
    opt = Adam([img], lr=0.02)
    for _ in range(600):
        loss = sum((mse_loss(img, Tensor(t)) for t in targets), Tensor(0.0))
        opt.zero_grad()
        T.backward(loss)
        opt.step()
    np.testing.assert_allclose(img.data, targets.mean(axis=0), atol=2e-3)


# -- classifier fitting ---------------------------------------------------------


def test_topk_basics():
    logits = np.array([[0.1, 0.9, 0.0], [0.5, 0.2, 0.3]])
    assert topk_accuracy(logits, np.array([1, 2]), 1) == 0.5
    assert topk_accuracy(logits, np.array([1, 2]), 2) == 1.0
    # ties go to the lower class index
    assert topk_accuracy(np.zeros((1, 3)), np.array([0]), 1) == 1.0
    assert topk_accuracy(np.zeros((1, 3)), np.array([1]), 1) == 0.0
    with pytest.raises(ValueError):
        topk_accuracy(np.zeros((0, 3)), np.array([], dtype=int), 1)


def test_loss_classifier_starts_at_chance_and_learns(tiny_data):
    samples, _ = tiny_data
    model = M.build_feature_extractor(M.FeatureStackConfig(), 8, 0)
    x, y = all_sketches(samples)
    # balanced classes: even a collapsed untrained predictor sits near 1/8
    before = topk_accuracy(predict_logits(model.eval(), x), y, 1)
    assert abs(before - 1 / 8) <= 0.07
    _, _, acc, history = pretrain_loss_classifier(model, samples, ClassifierFitConfig(epochs=4, seed=0))
    assert history[-1]["train_loss"] < history[0]["train_loss"]
    assert not any(p.requires_grad for p in model.trunk.parameters())


# -- end-to-end training ----------------------------------------------------------


def _fresh_decoder(enc, cond="adain", skip="skip1", seed=0):
    return M.build_decoder(M.DecoderConfig(cond, skip), enc.config, 8, seed)


def _state(module):
    return {k: v.copy() for k, v in module.state_dict().items()}


def test_end_to_end_keeps_encoder_and_trunk_bitwise_frozen(tiny_data, tiny_models):
    samples, split = tiny_data
    enc, trunk, clf = tiny_models
    before_enc, before_trunk = _state(enc), _state(trunk)
    dec = _fresh_decoder(enc)
    dec_before = _state(dec)
    seen = {}
    train_end_to_end(samples, split, EndToEnd(enc, dec, trunk, clf), TrainConfig(epochs=1, lr=1e-3),
                     on_epoch=lambda e, opt, h: seen.setdefault("params", opt.params))
    for k, v in _state(enc).items():
        assert v.tobytes() == before_enc[k].tobytes(), k
    for k, v in _state(trunk).items():
        assert v.tobytes() == before_trunk[k].tobytes(), k
    assert {id(p) for p in seen["params"]} == {id(p) for p in dec.parameters()}
    assert any(not np.array_equal(v, dec_before[k]) for k, v in _state(dec).items())


def test_end_to_end_rejects_unfrozen_parts(tiny_data, tiny_models):
    samples, split = tiny_data
    enc, trunk, clf = tiny_models
    live = M.build_encoder(M.desk_scale_encoder(), 0)
    with pytest.raises(ValueError, match="encoder"):
        train_end_to_end(samples, split, EndToEnd(live, _fresh_decoder(enc), trunk), TrainConfig(epochs=1))
    with pytest.raises(ValueError, match="trunk"):
        train_end_to_end(samples, split, EndToEnd(enc, _fresh_decoder(enc), None), TrainConfig(epochs=1))


def test_resume_equals_straight_run(tiny_data, tiny_models):
    samples, split = tiny_data
    enc, trunk, clf = tiny_models
    cfg = TrainConfig(epochs=3, lr=1e-3, seed=4)
    saved = {}

    def keep(epoch, opt, history):
        if epoch == 1:
            saved["cp"] = from_bytes(to_bytes(decoder_checkpoint({}, dec, opt, epoch, history, cfg.seed)))

    dec = _fresh_decoder(enc)
    straight, h1 = train_end_to_end(samples, split, EndToEnd(enc, dec, trunk, clf), cfg, on_epoch=keep)
    resumed, h2 = train_end_to_end(samples, split, EndToEnd(enc, _fresh_decoder(enc, seed=9), trunk, clf), cfg,
                                   resume=saved["cp"])
    assert h1 == h2
    a, b = _state(straight), _state(resumed)
    for k in a:
        assert a[k].tobytes() == b[k].tobytes(), k


def test_divergence_is_reported(tiny_data, tiny_models):
    samples, split = tiny_data
    enc, trunk, _ = tiny_models
    dec = _fresh_decoder(enc, "batchnorm", "none")
    dec.parameters()[0].data[...] = np.nan
    with pytest.raises(TrainingDiverged):
        train_end_to_end(samples, split, EndToEnd(enc, dec, trunk), TrainConfig(epochs=1, loss="mse"))


def test_flip_toggle_changes_only_flipping(tiny_data):
    samples, split = tiny_data
    by_id = {s.sample_id: s for s in samples}
    on = list(epoch_batches(by_id, split.train, TrainConfig(flip=True, seed=2), 3))
    off = list(epoch_batches(by_id, split.train, TrainConfig(flip=False, seed=2), 3))
    flipped = 0
    for a, b in zip(on, off):
        np.testing.assert_array_equal(a.labels, b.labels)
        for ia, ib, ta, tb in zip(a.images, b.images, a.targets, b.targets):
            if np.array_equal(ta, tb) and np.array_equal(ia, ib):
                continue
            np.testing.assert_array_equal(ta, tb[..., ::-1])
            np.testing.assert_allclose(ia, ib[..., ::-1], atol=1e-6)
            flipped += 1
    assert flipped > 0 and len(on) == len(off)


def test_epoch_batches_are_deterministic_per_epoch(tiny_data):
    samples, split = tiny_data
    by_id = {s.sample_id: s for s in samples}
    cfg = TrainConfig(seed=1)
    a = [b.images.tobytes() for b in epoch_batches(by_id, split.train, cfg, 0)]
    b = [b.images.tobytes() for b in epoch_batches(by_id, split.train, cfg, 0)]
    c = [b.images.tobytes() for b in epoch_batches(by_id, split.train, cfg, 1)]
    assert a == b and a != c


@pytest.mark.parametrize("bad", [dict(loss="l1"), dict(epochs=-1), dict(lr=0.0), dict(batch_size=0)])
def test_train_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad).validate()


# -- checkpoints -------------------------------------------------------------------


def _checkpoint():
    rng = np.random.default_rng(0)
    return Checkpoint({"a": 1, "b": [1, 2]}, {"decoder/param:w": rng.standard_normal((2, 3)).astype(np.float32),
                                             "decoder/buffer:s": np.float32(2.5) * np.ones(4, np.float32)},
                      {"lr": 0.001, "step": 3}, {"seed": 0}, 3, [{"epoch": 1, "train_loss": 0.5}])


def test_checkpoint_save_load_save_is_byte_identical(tmp_path):
    save_checkpoint(tmp_path / "a.skg", _checkpoint())
    cp = load_checkpoint(tmp_path / "a.skg")
    save_checkpoint(tmp_path / "b.skg", cp)
    assert (tmp_path / "a.skg").read_bytes() == (tmp_path / "b.skg").read_bytes()
    assert cp.epoch == 3 and cp.component("decoder")["param:w"].shape == (2, 3)
    assert not (tmp_path / "b.skg.tmp").exists()


def test_checkpoint_detects_corruption():
    buf = bytearray(to_bytes(_checkpoint()))
    for pos in (20, len(buf) - 10):
        bad = bytearray(buf)
        bad[pos] ^= 0x01
        with pytest.raises(CheckpointError, match="checksum"):
            from_bytes(bytes(bad))
    with pytest.raises(CheckpointError):
        from_bytes(bytes(buf[:-20]))
    with pytest.raises(CheckpointError):
        from_bytes(b"NOPE" + bytes(buf[4:]))


def test_checkpoint_rejects_other_versions():
    body = bytearray(to_bytes(_checkpoint())[:-4])
    body[4:8] = struct.pack("<I", 2)
    buf = bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with pytest.raises(CheckpointError, match="version"):
        from_bytes(buf)
