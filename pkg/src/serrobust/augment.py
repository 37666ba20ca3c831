"""Training-time perturbations and the simulated robot recording channel.

A plan is sampled per utterance from an :class:`AugmentationConfig` and a
dedicated random stream, then applied in the fixed order
tempo -> gain -> background noise -> impulse response (-> optional
Gaussian noise). Plans carry everything needed to replay them exactly.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .audio import (ImpulseResponse, Waveform, _clamp, apply_gain_db,
                    convolve_ir, mix_at_nsr, read_wav)
from .errors import AssetError, ConfigError
from .tsm import TEMPO_LIMITS, change_tempo

AUGMENTATIONS = ("tempo", "gain", "noise", "ir")
OPTIONAL_AUGMENTATIONS = ("gaussian",)


def _default_probs():
    return {"tempo": 0.5, "gain": 0.5, "noise": 0.5, "ir": 0.5, "gaussian": 0.0}


@dataclass
class AugmentationConfig:
    tempo_range: tuple = (0.85, 1.20)
    gain_range_db: tuple = (-6.0, 3.0)
    nsr_range: tuple = (0.5, 0.9)
    gaussian_sigma_range: tuple = (0.001, 0.01)
    ir_pool: tuple = ()
    noise_pool: tuple = ()
    apply_prob: dict = field(default_factory=_default_probs)
    rng_seed: int = 0
    resample_per_epoch: bool = True
    # Number of distinct plan draws cycled over epochs; None draws afresh every epoch.
    plan_cycle: int | None = None

    def __post_init__(self):
        for name in ("tempo_range", "gain_range_db", "nsr_range", "gaussian_sigma_range"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        self.ir_pool = tuple(self.ir_pool)
        self.noise_pool = tuple(self.noise_pool)
        probs = _default_probs()
        probs.update({k: float(v) for k, v in dict(self.apply_prob).items()})
        self.apply_prob = probs

    def validate(self) -> "AugmentationConfig":
        for name in ("tempo_range", "gain_range_db", "nsr_range", "gaussian_sigma_range"):
            r = getattr(self, name)
            if len(r) != 2 or not r[0] <= r[1]:
                raise ConfigError(f"{name} must be [low, high] with low <= high, got {list(r)}")
        if not (TEMPO_LIMITS[0] <= self.tempo_range[0] and self.tempo_range[1] <= TEMPO_LIMITS[1]):
            raise ConfigError(f"tempo_range {list(self.tempo_range)} outside {list(TEMPO_LIMITS)}")
        if self.nsr_range[0] < 0 or self.gaussian_sigma_range[0] < 0:
            raise ConfigError("nsr_range and gaussian_sigma_range must be non-negative")
        unknown = set(self.apply_prob) - set(AUGMENTATIONS + OPTIONAL_AUGMENTATIONS)
        if unknown:
            raise ConfigError(f"unknown augmentations in apply_prob: {sorted(unknown)}")
        for k, p in self.apply_prob.items():
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"apply_prob[{k!r}] = {p} outside [0, 1]")
        if self.apply_prob["noise"] > 0 and not self.noise_pool:
            raise ConfigError("noise augmentation enabled but noise_pool is empty")
        if self.apply_prob["ir"] > 0 and not self.ir_pool:
            raise ConfigError("impulse-response augmentation enabled but ir_pool is empty")
        if self.plan_cycle is not None and int(self.plan_cycle) < 1:
            raise ConfigError("plan_cycle must be >= 1 or null")
        return self

    @property
    def enabled(self) -> bool:
        return any(p > 0 for p in self.apply_prob.values())

    def disabled(self) -> "AugmentationConfig":
        return replace(self, apply_prob={k: 0.0 for k in self.apply_prob})

    def without(self, name: str) -> "AugmentationConfig":
        if name not in self.apply_prob:
            raise ConfigError(f"unknown augmentation {name!r}")
        probs = dict(self.apply_prob)
        probs[name] = 0.0
        return replace(self, apply_prob=probs)

    def epoch_key(self, epoch: int) -> int:
        if not self.resample_per_epoch:
            return 0
        if self.plan_cycle:
            return epoch % int(self.plan_cycle)
        return epoch

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AugmentationConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown augmentation config keys: {sorted(extra)}")
        return cls(**dict(d))


@dataclass(frozen=True)
class AugmentationPlan:
    tempo_factor: float | None = None
    gain_db: float | None = None
    noise_id: str | None = None
    nsr: float | None = None
    noise_offset: float | None = None
    ir_id: str | None = None
    gaussian_sigma: float | None = None
    gaussian_seed: int | None = None

    @property
    def is_identity(self) -> bool:
        return all(getattr(self, f.name) is None for f in fields(self))

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AugmentationPlan":
        return cls(**dict(d))

    def key(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def stable_id_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


def rng_for(seed: int, epoch: int, utt_id: str) -> np.random.Generator:
    """Random stream for one (seed, epoch, utterance); independent of worker layout."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(epoch), stable_id_hash(utt_id)])


def sample_plan(cfg: AugmentationConfig, rng: np.random.Generator) -> AugmentationPlan:
    """Draw one plan.

    All parameters are drawn on every call, included or not, so toggling one
    augmentation off leaves the others' values unchanged for the same stream.
    """
    u = rng.random(5)
    tempo = rng.uniform(*cfg.tempo_range)
    gain = rng.uniform(*cfg.gain_range_db)
    nsr = rng.uniform(*cfg.nsr_range)
    noise_offset = rng.random()
    noise_idx = rng.integers(len(cfg.noise_pool)) if cfg.noise_pool else None
    ir_idx = rng.integers(len(cfg.ir_pool)) if cfg.ir_pool else None
    sigma = rng.uniform(*cfg.gaussian_sigma_range)
    g_seed = int(rng.integers(2 ** 31))

    p = cfg.apply_prob
    kw = {}
    if u[0] < p["tempo"]:
        kw["tempo_factor"] = float(tempo)
    if u[1] < p["gain"]:
        kw["gain_db"] = float(gain)
    if u[2] < p["noise"] and noise_idx is not None:
        kw.update(noise_id=cfg.noise_pool[noise_idx], nsr=float(nsr), noise_offset=float(noise_offset))
    if u[3] < p["ir"] and ir_idx is not None:
        kw["ir_id"] = cfg.ir_pool[ir_idx]
    if u[4] < p["gaussian"]:
        kw.update(gaussian_sigma=float(sigma), gaussian_seed=g_seed)
    return AugmentationPlan(**kw)


class AssetPool:
    """Resolves noise-clip and impulse-response ids to audio."""

    def __init__(self, noises: Mapping[str, Waveform] | None = None,
                 irs: Mapping[str, ImpulseResponse] | None = None):
        self.noises = dict(noises or {})
        self.irs = dict(irs or {})

    @classmethod
    def from_dirs(cls, noise_dir=None, ir_dir=None, noise_ids: Iterable[str] | None = None):
        noises, irs = {}, {}
        if noise_dir:
            wanted = set(noise_ids) if noise_ids is not None else None
            for p in sorted(Path(noise_dir).glob("*.wav")):
                if wanted is None or p.stem in wanted:
                    noises[p.stem] = read_wav(p)
        if ir_dir:
            for p in sorted(Path(ir_dir).glob("*.wav")):
                w = read_wav(p)
                irs[p.stem] = ImpulseResponse(w.samples, w.sample_rate_hz, ir_id=p.stem)
        return cls(noises, irs)

    def noise(self, noise_id: str) -> Waveform:
        try:
            return self.noises[noise_id]
        except KeyError:
            raise AssetError(f"unknown noise clip id {noise_id!r}") from None

    def ir(self, ir_id: str) -> ImpulseResponse:
        try:
            return self.irs[ir_id]
        except KeyError:
            raise AssetError(f"unknown impulse response id {ir_id!r}") from None

    def fingerprint(self) -> dict:
        def h(a):
            return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()[:16]
        return {"noise": {k: h(v.samples) for k, v in sorted(self.noises.items())},
                "ir": {k: h(v.taps) for k, v in sorted(self.irs.items())}}


def apply_plan(w: Waveform, plan: AugmentationPlan, pools: AssetPool) -> Waveform:
    """Apply the steps present in ``plan``; absent steps are the identity."""
    # Resolve assets first so a bad id fails before any work is done.
    noise = pools.noise(plan.noise_id) if plan.noise_id is not None else None
    ir = pools.ir(plan.ir_id) if plan.ir_id is not None else None
    out = w
    clipped = 0
    if plan.tempo_factor is not None:
        out = change_tempo(out, plan.tempo_factor)
        clipped += out.n_clipped
    if plan.gain_db is not None:
        out = apply_gain_db(out, plan.gain_db)
        clipped += out.n_clipped
    if noise is not None:
        offset = int((plan.noise_offset or 0.0) * len(noise))
        if offset:
            noise = noise.with_samples(np.roll(noise.samples, -offset))
        out = mix_at_nsr(out, noise, plan.nsr)
        clipped += out.n_clipped
    if ir is not None:
        out = convolve_ir(out, ir)
        clipped += out.n_clipped
    if plan.gaussian_sigma is not None:
        g = np.random.default_rng(plan.gaussian_seed).standard_normal(len(out))
        y, n = _clamp(out.samples + plan.gaussian_sigma * g)
        out = out.with_samples(y, n)
        clipped += n
    if out is w:
        return w.with_samples(w.samples)
    return out.with_samples(out.samples, clipped)


def degrade_channel(w: Waveform, ir: ImpulseResponse, ego_noise: Waveform, nsr: float) -> Waveform:
    """Deterministic stand-in for re-recording: room response, then self-noise bed."""
    if nsr <= 0:
        raise ConfigError(f"channel nsr must be positive, got {nsr}")
    return mix_at_nsr(convolve_ir(w, ir), ego_noise, nsr)


# ---------------------------------------------------------------- plan logs

def write_plans(path, entries: Iterable[tuple]) -> None:
    """Write ``(utt_id, epoch, plan)`` triples as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, epoch, plan in entries:
            fh.write(json.dumps({"id": utt_id, "epoch": epoch, "plan": plan.to_dict()},
                                sort_keys=True) + "\n")


def read_plans(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append((d["id"], d["epoch"], AugmentationPlan.from_dict(d["plan"])))
    return out


def resolve_asset_root(explicit=None, env_var: str = "SERROBUST_ASSET_ROOT"):
    root = explicit or os.environ.get(env_var)
    return Path(root) if root else None
