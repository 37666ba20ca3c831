"""End-to-end pipeline shared by the CLI and the desk-scale reproduction tests.

Asset-root layout::

    noise/noise_manifest.jsonl, noise/audio/*.wav   tagged event clips
    irs/*.wav                                       augmentation room responses
    channel/ir.wav, channel/ego_noise.wav           simulated recording channel
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import ImpulseResponse, Waveform, read_wav, write_wav
from .augment import AUGMENTATIONS, AssetPool, AugmentationConfig, write_plans
from .corpus import (CLASS_INDEX, TagFilter, UtteranceRecord, build_degraded_testset, filter_noise,
                     lab_channel_ir, make_ego_noise, read_manifest, read_noise_manifest,
                     synth_ir_pool, synth_minicorpus, synth_noise_clips, write_noise_manifest)
from .errors import ConfigError, DataError
from .features import FeatureNormalizer, normalize
from .metrics import EvalReport, FoldSpec, aggregate_folds, make_loso_folds, write_csv
from .nn.checkpoint import load_model, save_model
from .nn.model import Model, ModelConfig
from .train import Example, Featurizer, FitResult, TrainConfig, fit, predict

log = logging.getLogger(__name__)

ABLATION_LABELS = {"tempo": "-tempo", "gain": "-loudness", "noise": "-background noise", "ir": "-impulse response"}


# ---------------------------------------------------------------- configuration

@dataclass
class RunConfig:
    corpus: str = ""
    degraded: str = ""
    assets: str = ""
    run_dir: str = "runs/default"
    folds: list | None = None
    workers: int = 1
    plots: bool = True
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        aug = self.augment
        if aug.enabled:
            if self.assets:  # empty pools get filled from the asset root at load time
                aug = replace(aug, noise_pool=aug.noise_pool or ("*",), ir_pool=aug.ir_pool or ("*",))
            aug.validate()
        if self.folds is not None and any(not 0 <= int(f) < 10 for f in self.folds):
            raise ConfigError(f"fold ids must lie in 0..9, got {self.folds}")
        if int(self.workers) < 1:
            raise ConfigError("workers must be >= 1")
        return self

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for k in ("augment", "model", "train"):
            d[k] = d[k].to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        sub = {"augment": AugmentationConfig.from_dict(d.pop("augment", {})),
               "model": ModelConfig.from_dict(d.pop("model", {})),
               "train": TrainConfig.from_dict(d.pop("train", {}))}
        return cls(**d, **sub)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from None


def apply_overrides(d: dict, overrides: dict) -> dict:
    """Set dotted keys (``train.lr``) in a nested config dict; values are JSON-parsed when possible."""
    d = json.loads(json.dumps(d))
    for key, raw in overrides.items():
        try:
            value = json.loads(raw) if isinstance(raw, str) else raw
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a config section")
            node = node[p]
        if parts[-1] not in node and not (len(parts) > 1 and parts[-2] == "apply_prob"):
            raise ConfigError(f"override {key!r}: unknown key")
        node[parts[-1]] = value
    return d


# ---------------------------------------------------------------- data loading

def load_examples(records: Sequence[UtteranceRecord]) -> list[Example]:
    """Read audio for the labelled records (unlabelled ones are dropped)."""
    out = []
    for r in records:
        if r.label not in CLASS_INDEX:
            continue
        out.append(Example(r.id, r.speaker, read_wav(r.audio), CLASS_INDEX[r.label], r.arousal,
                           r.valence, r.session))
    return out


def load_asset_pool(asset_root, tag_filter: TagFilter | None = None) -> AssetPool:
    """Noise clips that pass the tag filter plus every augmentation impulse response."""
    root = Path(asset_root)
    clips = filter_noise(read_noise_manifest(root / "noise" / "noise_manifest.jsonl"), tag_filter)
    noises = {c.id: read_wav(c.audio) for c in clips}
    irs = AssetPool.from_dirs(ir_dir=root / "irs").irs
    if not noises or not irs:
        raise DataError(f"asset root {root} has {len(noises)} usable noise clips and {len(irs)} IRs")
    return AssetPool(noises, irs)


def load_channel(asset_root) -> tuple[ImpulseResponse, Waveform]:
    root = Path(asset_root) / "channel"
    w = read_wav(root / "ir.wav")
    return ImpulseResponse(w.samples, w.sample_rate_hz, "channel"), read_wav(root / "ego_noise.wav")


def with_pools(aug: AugmentationConfig, pools: AssetPool) -> AugmentationConfig:
    """Fill empty noise/IR pools from the loaded assets."""
    kw = {}
    if not aug.noise_pool:
        kw["noise_pool"] = tuple(sorted(pools.noises))
    if not aug.ir_pool:
        kw["ir_pool"] = tuple(sorted(pools.irs))
    return AugmentationConfig.from_dict({**aug.to_dict(), **kw}) if kw else aug


def synth_assets(root, seed: int = 0) -> dict:
    """Synthesize a complete asset root (noise clips, curated list, IR pool, channel)."""
    root = Path(root)
    clips = synth_noise_clips(root / "noise", seed=seed)
    synth_ir_pool(root / "irs", seed=seed)
    (root / "channel").mkdir(parents=True, exist_ok=True)
    ir = lab_channel_ir(seed)
    write_wav(root / "channel" / "ir.wav", Waveform(ir.taps), "float32")
    write_wav(root / "channel" / "ego_noise.wav", make_ego_noise(seed=seed), "float32")
    kept = filter_noise(clips)
    write_noise_manifest(root / "noise" / "curated.jsonl", kept)
    return {"noise_clips": len(clips), "curated": len(kept)}


def build_workspace(root, size: int = 400, seed: int = 0, nsr: float = 0.7) -> dict:
    """Synthetic corpus, assets and the frozen degraded test set under one directory."""
    root = Path(root)
    synth_minicorpus(root / "corpus", size=size, seed=seed)
    synth_assets(root / "assets", seed=seed)
    ir, ego = load_channel(root / "assets")
    recs = read_manifest(root / "corpus" / "manifest.jsonl")
    build_degraded_testset(recs, root / "degraded", ir, ego, nsr_policy=nsr, seed=seed)
    return {"corpus": str(root / "corpus" / "manifest.jsonl"),
            "degraded": str(root / "degraded" / "manifest.jsonl"), "assets": str(root / "assets")}


# ---------------------------------------------------------------- training and evaluation

def evaluate(model: Model, normalizer: FeatureNormalizer, examples: Sequence[Example],
             featurizer: Featurizer) -> tuple[EvalReport, np.ndarray]:
    mats = [normalize(featurizer(e).astype(np.float64), normalizer) for e in examples]
    out = predict(model, mats)
    head = model.cfg.head
    if head == "categorical":
        targets = [e.label for e in examples]
        rep = EvalReport.from_predictions(out.argmax(axis=1), targets, head)
    else:
        rep = EvalReport.from_predictions(out, [e.target(head) for e in examples], head)
    return rep, out


def _select(examples, speakers):
    return [e for e in examples if e.speaker in speakers]


def run_fold(fold: FoldSpec, model_cfg: ModelConfig, train_cfg: TrainConfig, aug: AugmentationConfig,
             clean: Sequence[Example], tests: dict, featurizer: Featurizer,
             out_dir=None) -> tuple[FitResult, dict]:
    """Train on the fold's sessions, select on its val speaker, test on its test speaker.

    ``tests`` maps a condition name to a full example list; each is reduced
    to the fold's test speaker. Returns the fit result and one EvalReport per
    condition.
    """
    sessions = set(fold.train_sessions)
    train = [e for e in clean if e.session in sessions]
    val = _select(clean, {fold.val_speaker})
    if not train or not val:
        raise DataError(f"fold {fold.fold_id}: empty train ({len(train)}) or validation ({len(val)}) split")
    res = fit(model_cfg, train, val, train_cfg, aug, featurizer)
    reports = {}
    preds = {}
    for name, exs in tests.items():
        sel = _select(exs, {fold.test_speaker})
        reports[name], preds[name] = evaluate(res.model, res.normalizer, sel, featurizer)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_model(out / "checkpoint.serckpt", res.model, {"fold": fold.fold_id, "best_epoch": res.state.best_epoch})
        (out / "normalizer.json").write_text(json.dumps(res.normalizer.to_dict()))
        write_plans(out / "plans.jsonl", res.plans)
        write_csv(out / "history.csv", res.history)
        rows = [{"condition": k, **v.values()} for k, v in reports.items()]
        write_csv(out / "metrics.csv", rows)
        for k, v in reports.items():
            v.to_json(out / f"eval_{k}.json")
        np.savez(out / "predictions.npz", **{k: v for k, v in preds.items()},
                 **{f"{k}_ids": np.array([e.id for e in _select(tests[k], {fold.test_speaker})]) for k in tests})
    return res, reports


@dataclass
class ExperimentData:
    folds: list
    clean: list
    degraded: list | None
    pools: AssetPool | None

    @classmethod
    def load(cls, cfg: RunConfig) -> "ExperimentData":
        recs = read_manifest(cfg.corpus)
        folds = make_loso_folds(recs)
        clean = load_examples(recs)
        degraded = None
        if cfg.degraded:
            drecs = read_manifest(cfg.degraded)
            unknown = sorted({r.id for r in drecs} - {r.id for r in recs})
            if unknown:
                raise DataError(f"degraded manifest has ids not in the corpus: {unknown[:10]}")
            degraded = load_examples(drecs)
        pools = load_asset_pool(cfg.assets) if cfg.assets else None
        return cls(folds, clean, degraded, pools)

    def tests(self) -> dict:
        t = {"clean": self.clean}
        if self.degraded is not None:
            t["degraded"] = self.degraded
        return t


def _fold_worker(args):
    fold, cfg_dict, out_dir = args
    cfg = RunConfig.from_dict(cfg_dict)
    data = ExperimentData.load(cfg)
    aug = with_pools(cfg.augment, data.pools) if cfg.augment.enabled else cfg.augment.disabled()
    _, reps = run_fold(fold, cfg.model, cfg.train, aug, data.clean, data.tests(),
                       Featurizer(data.pools), out_dir)
    return fold.fold_id, {k: v.to_dict() for k, v in reps.items()}


def run_experiment(cfg: RunConfig, data: ExperimentData | None = None) -> dict:
    """Train and evaluate every selected fold; returns aggregated reports per condition."""
    cfg.validate()
    data = data or ExperimentData.load(cfg)
    run = Path(cfg.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    cfg.save(run / "config.json")
    if cfg.augment.enabled and data.pools is None:
        raise ConfigError("augmentation enabled but no asset root given")
    folds = [f for f in data.folds if cfg.folds is None or f.fold_id in cfg.folds]
    per_fold: dict = {}
    if cfg.workers > 1 and len(folds) > 1:
        jobs = [(f, cfg.to_dict(), run / f"fold_{f.fold_id:02d}") for f in folds]
        with ProcessPoolExecutor(max_workers=int(cfg.workers)) as ex:
            for fid, reps in ex.map(_fold_worker, jobs):
                per_fold[fid] = {k: EvalReport.from_dict(v) for k, v in reps.items()}
    else:
        aug = with_pools(cfg.augment, data.pools) if cfg.augment.enabled else cfg.augment.disabled()
        featurizer = Featurizer(data.pools)
        for f in folds:
            log.info("fold %d: test %s, val %s", f.fold_id, f.test_speaker, f.val_speaker)
            _, per_fold[f.fold_id] = run_fold(f, cfg.model, cfg.train, aug, data.clean, data.tests(),
                                              featurizer, run / f"fold_{f.fold_id:02d}")
    agg = {}
    for cond in data.tests():
        agg[cond] = aggregate_folds([per_fold[k][cond] for k in sorted(per_fold)])
        agg[cond].to_json(run / f"eval_{cond}.json")
    return agg


def ablation_rows(baseline: dict, variants: dict) -> list:
    """Relative macro-F change of each single-removal variant against the all-on baseline.

    ``baseline`` maps a test condition to its EvalReport; ``variants`` maps an
    augmentation name to the same structure.
    """
    key = "macro_f" if baseline["clean"].macro_f is not None else "arousal_mae"
    rows = [{"variant": "all augmentations", **{c: 0.0 for c in baseline}}]
    for name, reps in variants.items():
        row = {"variant": ABLATION_LABELS.get(name, f"-{name}")}
        for cond, base in baseline.items():
            b, v = getattr(base, key), getattr(reps[cond], key)
            row[cond] = (v - b) / b * 100.0 if b else None
            row[f"{cond}_{key}"] = v
        rows.append(row)
    return rows


def run_ablation(cfg: RunConfig, data: ExperimentData | None = None) -> list:
    """All-on baseline plus one run per removed augmentation (N + 1 runs)."""
    cfg.validate()
    if not cfg.augment.enabled:
        raise ConfigError("ablation needs augmentation enabled")
    data = data or ExperimentData.load(cfg)
    run = Path(cfg.run_dir)
    base_cfg = RunConfig.from_dict({**cfg.to_dict(), "run_dir": str(run / "all")})
    baseline = run_experiment(base_cfg, data)
    variants = {}
    for name in AUGMENTATIONS:
        if cfg.augment.apply_prob.get(name, 0) <= 0:
            continue
        d = cfg.to_dict()
        d["run_dir"] = str(run / f"no_{name}")
        d["augment"]["apply_prob"][name] = 0.0
        variants[name] = run_experiment(RunConfig.from_dict(d), data)
    rows = ablation_rows(baseline, variants)
    write_csv(run / "ablation.csv", rows)
    return rows


def evaluate_run(run_dir, manifests: dict) -> dict:
    """Re-evaluate a run's best checkpoints on each fold's test speaker.

    ``manifests`` maps a condition name to a manifest path. Every id must
    belong to the run's corpus. Returns, per condition, the aggregated
    report with the stacked predictions and targets.
    """
    run = Path(run_dir)
    cfg = RunConfig.load(run / "config.json")
    corpus = read_manifest(cfg.corpus)
    known = {r.id for r in corpus}
    folds = make_loso_folds(corpus)
    fold_dirs = {f.fold_id: run / f"fold_{f.fold_id:02d}" for f in folds}
    fold_dirs = {k: d for k, d in fold_dirs.items() if (d / "checkpoint.serckpt").is_file()}
    if not fold_dirs:
        raise DataError(f"{run}: no fold checkpoints found")
    featurizer = Featurizer()
    out = {}
    for cond, path in manifests.items():
        recs = read_manifest(path)
        unknown = sorted({r.id for r in recs} - known)
        if unknown:
            raise DataError(f"{path}: {len(unknown)} ids not in the run's corpus: {unknown[:20]}")
        exs = load_examples(recs)
        reports, preds, targets = [], [], []
        for f in folds:
            if f.fold_id not in fold_dirs:
                continue
            model, _ = load_model(fold_dirs[f.fold_id] / "checkpoint.serckpt")
            nz = FeatureNormalizer.from_dict(json.loads((fold_dirs[f.fold_id] / "normalizer.json").read_text()))
            sel = _select(exs, {f.test_speaker})
            if not sel:
                continue
            rep, p = evaluate(model, nz, sel, featurizer)
            reports.append(rep)
            preds.append(p)
            targets.extend(e.target(model.cfg.head) for e in sel)
        if not reports:
            raise DataError(f"{path}: no utterances from any evaluated test speaker")
        out[cond] = (aggregate_folds(reports), np.concatenate(preds), np.asarray(targets))
    return out
