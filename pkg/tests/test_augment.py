"""Plan sampling, application and ablation pairing."""
import inspect

import numpy as np
import pytest
from scipy import stats

from serrobust.audio import ImpulseResponse, Waveform, convolve_ir, mix_at_nsr
from serrobust.augment import (AUGMENTATIONS, AssetPool, AugmentationConfig, AugmentationPlan, apply_plan,
                               degrade_channel, read_plans, resolve_asset_root, rng_for, sample_plan,
                               write_plans)
from serrobust.errors import AssetError, ConfigError

SR = 16000


@pytest.fixture
def pools():
    rng = np.random.default_rng(0)
    noises = {f"n{i}": Waveform(0.1 * rng.standard_normal(8000)) for i in range(3)}
    irs = {f"r{i}": ImpulseResponse(np.exp(-np.arange(400) / 50.0) * rng.standard_normal(400), SR, f"r{i}")
           for i in range(2)}
    return AssetPool(noises, irs)


@pytest.fixture
def cfg(pools):
    return AugmentationConfig(noise_pool=tuple(pools.noises), ir_pool=tuple(pools.irs), rng_seed=3).validate()


def speech_like(seed=0, dur=1.0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(dur * SR)) / SR
    return Waveform(0.2 * np.sin(2 * np.pi * 180 * t) * (1 + 0.5 * np.sin(2 * np.pi * 3 * t))
                    + 0.01 * rng.standard_normal(t.size))


def test_parameter_draws_are_uniform(cfg):
    plans = [sample_plan(AugmentationConfig.from_dict({**cfg.to_dict(), "apply_prob": {k: 1.0 for k in AUGMENTATIONS}}),
                         np.random.default_rng(i)) for i in range(2000)]
    for values, (lo, hi) in (([p.tempo_factor for p in plans], cfg.tempo_range),
                             ([p.gain_db for p in plans], cfg.gain_range_db),
                             ([p.nsr for p in plans], cfg.nsr_range)):
        v = np.asarray(values)
        assert v.min() >= lo and v.max() <= hi
        assert stats.kstest(v, "uniform", args=(lo, hi - lo)).pvalue > 0.01


def test_application_rate_matches_probability(cfg):
    plans = [sample_plan(cfg, np.random.default_rng([1, i])) for i in range(4000)]
    rate = np.mean([p.tempo_factor is not None for p in plans])
    assert abs(rate - 0.5) < 0.03
    assert all(p.gaussian_sigma is None for p in plans)


def test_streams_are_deterministic_and_distinct(cfg):
    a = sample_plan(cfg, rng_for(3, 0, "utt1"))
    assert a == sample_plan(cfg, rng_for(3, 0, "utt1"))
    draws = {sample_plan(cfg, rng_for(3, e, u)).key() for e in range(4) for u in ("utt1", "utt2")}
    assert len(draws) > 4


def test_ablation_variants_share_draws(cfg):
    for i in range(50):
        full = sample_plan(cfg, rng_for(0, 0, f"u{i}"))
        for name in AUGMENTATIONS:
            reduced = sample_plan(cfg.without(name), rng_for(0, 0, f"u{i}"))
            fields = {"tempo": ["tempo_factor"], "gain": ["gain_db"],
                      "noise": ["noise_id", "nsr", "noise_offset"], "ir": ["ir_id"]}
            for f in AugmentationPlan.__dataclass_fields__:
                if f in fields[name]:
                    assert getattr(reduced, f) is None
                else:
                    assert getattr(reduced, f) == getattr(full, f)


def test_identity_and_disabled(cfg):
    plan = sample_plan(cfg.disabled(), np.random.default_rng(0))
    assert plan.is_identity and not cfg.disabled().enabled
    w = speech_like()
    assert np.array_equal(apply_plan(w, plan, AssetPool()).samples, w.samples)


def test_apply_plan_composes_steps(pools):
    w = speech_like()
    plan = AugmentationPlan(gain_db=-6.0, noise_id="n1", nsr=0.5, noise_offset=0.25, ir_id="r0")
    out = apply_plan(w, plan, pools)
    noise = pools.noise("n1")
    rolled = noise.with_samples(np.roll(noise.samples, -2000))
    ref = convolve_ir(mix_at_nsr(w.with_samples(np.asarray(w.samples) * 10 ** (-6 / 20)), rolled, 0.5),
                      pools.ir("r0"))
    assert np.allclose(out.samples, ref.samples, atol=1e-12)
    assert len(out) == len(w)


def test_gaussian_is_seeded(pools):
    w = speech_like()
    plan = AugmentationPlan(gaussian_sigma=0.005, gaussian_seed=42)
    a, b = apply_plan(w, plan, pools), apply_plan(w, plan, pools)
    assert np.array_equal(a.samples, b.samples)
    assert np.std(np.asarray(a.samples) - np.asarray(w.samples)) == pytest.approx(0.005, rel=0.05)


def test_augmentation_is_label_blind():
    for fn in (sample_plan, apply_plan, degrade_channel, rng_for):
        params = set(inspect.signature(fn).parameters)
        assert not params & {"label", "labels", "target", "arousal", "valence", "emotion"}
    assert not {"label", "target"} & set(AugmentationPlan.__dataclass_fields__)


def test_unknown_asset_ids(pools):
    with pytest.raises(AssetError):
        apply_plan(speech_like(), AugmentationPlan(noise_id="missing", nsr=0.5), pools)
    with pytest.raises(AssetError):
        pools.ir("nope")


def test_config_validation(pools):
    with pytest.raises(ConfigError):
        AugmentationConfig(tempo_range=(1.2, 0.85)).validate()
    with pytest.raises(ConfigError):
        AugmentationConfig(tempo_range=(0.3, 1.0), noise_pool=("a",), ir_pool=("b",)).validate()
    with pytest.raises(ConfigError):
        AugmentationConfig().validate()  # noise on with an empty pool
    with pytest.raises(ConfigError):
        AugmentationConfig(apply_prob={"tempo": 1.5}, noise_pool=("a",), ir_pool=("b",)).validate()
    with pytest.raises(ConfigError):
        AugmentationConfig().without("reverb")


def test_config_and_plan_roundtrip(tmp_path, cfg):
    assert AugmentationConfig.from_dict(cfg.to_dict()) == cfg
    entries = [(f"u{i}", 0, sample_plan(cfg, rng_for(0, 0, f"u{i}"))) for i in range(20)]
    write_plans(tmp_path / "plans.jsonl", entries)
    assert read_plans(tmp_path / "plans.jsonl") == entries


def test_epoch_key(cfg):
    assert [cfg.epoch_key(e) for e in range(3)] == [0, 1, 2]
    c = AugmentationConfig.from_dict({**cfg.to_dict(), "plan_cycle": 2})
    assert [c.epoch_key(e) for e in range(5)] == [0, 1, 0, 1, 0]
    c = AugmentationConfig.from_dict({**cfg.to_dict(), "resample_per_epoch": False})
    assert c.epoch_key(7) == 0


def test_degrade_channel_matches_composition(pools):
    w = speech_like()
    ir, ego = pools.ir("r1"), pools.noise("n2")
    ref = mix_at_nsr(convolve_ir(w, ir), ego, 0.7)
    assert np.array_equal(degrade_channel(w, ir, ego, 0.7).samples, ref.samples)
    with pytest.raises(ConfigError):
        degrade_channel(w, ir, ego, 0.0)


def test_asset_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv("SERROBUST_ASSET_ROOT", str(tmp_path))
    assert resolve_asset_root() == tmp_path
    assert resolve_asset_root("/x") == type(tmp_path)("/x")
    monkeypatch.delenv("SERROBUST_ASSET_ROOT")
    assert resolve_asset_root() is None
