"""Optimizer, batching, model selection, resume and the leakage guards of the fold protocol."""
import numpy as np
import pytest

from serrobust.audio import Waveform
from serrobust.augment import AssetPool, AugmentationConfig
from serrobust.errors import DataError, DivergedError, ShapeError
from serrobust.features import FeatureMatrix
from serrobust.nn.checkpoint import load_model, save_model
from serrobust.nn.model import Model, ModelConfig
from serrobust.train import (Adam, Example, Featurizer, TrainConfig, TrainState, clip_gradients, fit,
                             make_batches, predict)

SR = 16000
TINY = ModelConfig(rnn_hidden=4, seed=0)


def make_examples(speakers, per=4, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for s in speakers:
        for i in range(per):
            label = i % 4
            n = int(rng.integers(2400, 4800))
            t = np.arange(n) / SR
            x = 0.2 * np.sin(2 * np.pi * (120 + 60 * label) * t) + 0.01 * rng.standard_normal(n)
            out.append(Example(f"{s}_{i}", s, Waveform(x), label, 1.0 + label, 5.0 - label, s[:5]))
    return out


@pytest.fixture(scope="module")
def data():
    return make_examples(["Ses01F", "Ses01M", "Ses02F"]), make_examples(["Ses03F"], seed=1)


# ---------------------------------------------------------------- Adam and clipping

def test_adam_matches_closed_form():
    rng = np.random.default_rng(0)
    p0 = rng.standard_normal(5)
    grads = [rng.standard_normal(5) for _ in range(4)]
    params = {"w": p0.copy()}
    opt = Adam()
    m = v = np.zeros(5)
    ref = p0.copy()
    for t, g in enumerate(grads, 1):
        opt.step(params, {"w": g}, 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(params["w"], ref, atol=1e-14, rtol=0)
    first = {"w": p0.copy()}
    Adam().step(first, {"w": grads[0]}, 0.01)
    assert np.allclose(np.abs(first["w"] - p0), 0.01, atol=1e-8)  # first step moves each weight by ~lr
    with pytest.raises(ShapeError):
        opt.step(params, {"w": np.zeros(3)}, 0.01)


def test_clip_gradients():
    out = clip_gradients({"a": np.array([-3.0, 0.5, 2.0])})
    assert out["a"].tolist() == [-1.0, 0.5, 1.0]
    with pytest.raises(DivergedError):
        clip_gradients({"a": np.array([np.nan])})


def test_sortagrad_then_shuffle():
    lengths = [5, 1, 4, 2, 3, 9, 7]
    first = np.concatenate(make_batches(lengths, 0, 3, np.random.default_rng(0)))
    assert [lengths[i] for i in first] == sorted(lengths)
    later = make_batches(lengths, 1, 3, np.random.default_rng(0))
    assert sorted(np.concatenate(later).tolist()) == list(range(7))
    assert [len(b) for b in later] == [3, 3, 1]
    with pytest.raises(DataError):
        make_batches([], 0, 3, np.random.default_rng(0))


# ---------------------------------------------------------------- fit

def test_normalizer_uses_training_utterances_only(data):
    train, val = data
    res = fit(TINY, train, val, TrainConfig(max_epochs=1))
    assert res.normalizer.source_ids == frozenset(e.id for e in train)
    assert not res.normalizer.source_ids & {e.id for e in val}


def test_overlapping_speakers_rejected(data):
    train, _ = data
    with pytest.raises(DataError):
        fit(TINY, train, train[:2], TrainConfig(max_epochs=1))


def test_plateau_halves_lr_and_best_epoch_is_kept(data):
    train, val = data
    scores = [0.1, 0.5, 0.2, 0.2, 0.2, 0.3, 0.3, 0.3, 0.1]
    snaps = {}
    res = fit(TINY, train, val, TrainConfig(lr=1e-3, max_epochs=len(scores), plateau_patience=3),
              score_fn=lambda model, epoch: scores[epoch],
              on_epoch=lambda row, st: snaps.__setitem__(row["epoch"], {k: v.copy() for k, v in st.params.items()}))
    lrs = [r["lr"] for r in res.history]
    assert lrs == [1e-3] * 5 + [5e-4] * 3 + [2.5e-4]
    assert res.state.best_epoch == 1
    for k, v in res.model.params.items():
        assert np.array_equal(v, snaps[1][k])


def test_training_stops_below_min_lr(data):
    train, val = data
    res = fit(TINY, train, val, TrainConfig(lr=1e-3, min_lr=4e-4, plateau_patience=1, max_epochs=50),
              score_fn=lambda model, epoch: 0.0)
    assert [r["lr"] for r in res.history] == [1e-3, 1e-3, 5e-4]  # next would be 2.5e-4, below the floor
    assert res.state.lr < 4e-4


def test_resume_matches_uninterrupted(data, tmp_path):
    train, val = data
    cfg = TrainConfig(lr=3e-3, max_epochs=4, batch_size=5)
    whole = fit(TINY, train, val, cfg)
    part = fit(TINY, train, val, cfg, stop_after=2)
    part.state.save(tmp_path / "state.serckpt")
    state, _ = TrainState.load(tmp_path / "state.serckpt")
    rest = fit(TINY, train, val, cfg, state=state)
    assert [r["epoch"] for r in rest.history] == [2, 3]
    for k in whole.state.params:
        assert np.allclose(whole.state.params[k], rest.state.params[k], atol=1e-12)
    assert rest.state.best_epoch == whole.state.best_epoch


def test_checkpoint_roundtrip(data, tmp_path):
    train, val = data
    res = fit(ModelConfig(arch="cnn", cnn_channels=(4, 4, 4), cnn_kernels=(3, 3, 3)), train, val,
              TrainConfig(max_epochs=1))
    save_model(tmp_path / "m.serckpt", res.model, {"fold": 3})
    model, meta = load_model(tmp_path / "m.serckpt")
    mats = [np.random.default_rng(0).standard_normal((20, 32))]
    assert np.array_equal(predict(model, mats), predict(res.model, mats))
    assert meta["fold"] == 3 and model.cfg == res.model.cfg


def test_divergence_is_reported(data):
    train, val = data
    nan_extract = lambda w: FeatureMatrix(np.full((10, 32), np.nan))  # noqa: E731
    with pytest.raises(DivergedError):
        fit(TINY, train, val, TrainConfig(max_epochs=1), featurizer=Featurizer(extractor=nan_extract))


def test_dimensional_head_trains(data):
    train, val = data
    res = fit(ModelConfig(head="dimensional", rnn_hidden=4), train, val, TrainConfig(max_epochs=2))
    assert np.all(np.isfinite([r["train_loss"] for r in res.history]))
    assert res.history[0]["val_score"] <= 0


# ---------------------------------------------------------------- augmentation during training

@pytest.fixture(scope="module")
def pools():
    rng = np.random.default_rng(0)
    from serrobust.audio import ImpulseResponse
    return AssetPool({"n0": Waveform(0.1 * rng.standard_normal(SR))},
                     {"r0": ImpulseResponse(np.exp(-np.arange(200) / 30.0), SR, "r0")})


def test_plans_ignore_labels(data, pools):
    train, val = data
    aug = AugmentationConfig(noise_pool=("n0",), ir_pool=("r0",), rng_seed=5).validate()
    a = fit(TINY, train, val, TrainConfig(max_epochs=2), aug, Featurizer(pools))
    relabelled = [Example(e.id, e.speaker, e.waveform, (e.label + 1) % 4, e.valence, e.arousal, e.session)
                  for e in train]
    b = fit(TINY, relabelled, val, TrainConfig(max_epochs=2), aug, Featurizer(pools))
    assert a.plans == b.plans
    assert {p for _, _, p in a.plans if not p.is_identity}


def test_plan_cycle_reuses_draws(data, pools):
    train, val = data
    aug = AugmentationConfig(noise_pool=("n0",), ir_pool=("r0",), plan_cycle=2).validate()
    res = fit(TINY, train, val, TrainConfig(max_epochs=3), aug, Featurizer(pools))
    by_epoch = {}
    for uid, ep, plan in res.plans:
        by_epoch.setdefault(ep, []).append(plan)
    assert by_epoch[0] == by_epoch[2] and by_epoch[0] != by_epoch[1]


def test_model_rejects_bad_shapes():
    model = Model(TINY)
    with pytest.raises(ShapeError):
        model.predict(np.zeros((2, 5, 31)), np.array([5, 5]))


@pytest.mark.parametrize("arch", ["rnn", "cnn"])
def test_single_step_descent(arch):
    fell = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cfg = ModelConfig(arch=arch, rnn_hidden=8, cnn_channels=(8, 8, 8), cnn_kernels=(3, 3, 3), seed=seed)
        model = Model(cfg)
        X = rng.standard_normal((6, 15, 32))
        lengths = rng.integers(5, 16, 6)
        y = rng.integers(0, 4, 6)
        before, grads = model.loss_and_grads(X, lengths, y, train=True)
        Adam().step(model.params, clip_gradients(grads), 3e-4)
        after, _ = model.loss_and_grads(X, lengths, y, train=True)
        fell += after < before
    assert fell >= 18
