"""Adam training with value clipping, SortaGrad batching and plateau halving."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .augment import AssetPool, AugmentationConfig, AugmentationPlan, apply_plan, rng_for, sample_plan
from .errors import ConfigError, DataError, DivergedError, ShapeError
from .features import FeatureNormalizer, extract, fit_normalizer, normalize, waveform_key
from .metrics import categorical_metrics, dimensional_metrics
from .nn.checkpoint import load_tensors, save_tensors
from .nn import layers as L
from .nn.model import Model, ModelConfig

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_interval: tuple = (-1.0, 1.0)
    batch_size: int = 32
    plateau_patience: int = 3
    lr_factor: float = 0.5
    max_epochs: int = 100
    min_lr: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        self.clip_interval = tuple(float(v) for v in self.clip_interval)

    def validate(self) -> "TrainConfig":
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 < self.lr_factor < 1:
            raise ConfigError(f"lr_factor must lie in (0, 1), got {self.lr_factor}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.plateau_patience < 1 or self.max_epochs < 1:
            raise ConfigError("plateau_patience and max_epochs must be >= 1")
        lo, hi = self.clip_interval
        if not lo < hi:
            raise ConfigError(f"clip_interval must be [low, high] with low < high, got {[lo, hi]}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clip_interval"] = list(self.clip_interval)
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown train config keys: {sorted(extra)}")
        return cls(**dict(d))


def clip_gradients(grads: dict, interval=(-1.0, 1.0)) -> dict:
    """Element-wise clamp. Any NaN means the run has diverged."""
    lo, hi = interval
    out = {}
    for k, g in grads.items():
        if np.isnan(g).any():
            raise DivergedError(f"diverged: NaN gradient in {k}")
        out[k] = np.clip(g, lo, hi)
    return out


class Adam:
    """Bias-corrected Adam; moments are keyed like the parameters."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            p = params[k]
            if g.shape != p.shape:
                raise ShapeError(f"gradient {k} has shape {g.shape}, parameter {p.shape}")
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_batches(lengths: Sequence[int], epoch: int, batch_size: int,
                 rng: np.random.Generator) -> list[np.ndarray]:
    """Index batches: ascending length in epoch 0 (SortaGrad), shuffled afterwards."""
    lengths = np.asarray(lengths)
    if lengths.size == 0:
        raise DataError("cannot batch an empty set")
    if epoch == 0:
        order = np.argsort(lengths, kind="stable")
    else:
        order = rng.permutation(lengths.size)
    return [order[i:i + batch_size] for i in range(0, lengths.size, batch_size)]


def pad_batch(mats: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([m.shape[0] for m in mats], dtype=np.int64)
    X = np.zeros((len(mats), int(lengths.max()), mats[0].shape[1]))
    for i, m in enumerate(mats):
        X[i, :m.shape[0]] = m
    return X, lengths


@dataclass
class Example:
    """A labelled utterance. Labels live here, never in augmentation code."""
    id: str
    speaker: str
    waveform: object
    label: int | None = None
    arousal: float | None = None
    valence: float | None = None
    session: str = ""

    def target(self, head: str):
        if head == "categorical":
            if self.label is None:
                raise DataError(f"{self.id}: no categorical label")
            return self.label
        if self.arousal is None or self.valence is None:
            raise DataError(f"{self.id}: no dimensional labels")
        return (self.arousal, self.valence)


class Featurizer:
    """Memoized (waveform content, plan) -> smoothed raw features."""

    def __init__(self, pools: AssetPool | None = None, extractor: Callable = extract):
        self.pools = pools or AssetPool()
        self.extractor = extractor
        self._memo: dict = {}

    def __call__(self, ex: Example, plan: AugmentationPlan | None = None) -> np.ndarray:
        key = (waveform_key(ex.waveform), plan.key() if plan is not None and not plan.is_identity else "")
        hit = self._memo.get(key)
        if hit is None:
            w = ex.waveform if not key[1] else apply_plan(ex.waveform, plan, self.pools)
            hit = self.extractor(w).frames.astype(np.float32)
            self._memo[key] = hit
        return hit

    def clear(self, keep_clean: bool = True):
        self._memo = {k: v for k, v in self._memo.items() if keep_clean and not k[1]}


def predict(model: Model, mats: Sequence[np.ndarray], batch_size: int = 64) -> np.ndarray:
    order = np.argsort([m.shape[0] for m in mats], kind="stable")
    out = np.zeros((len(mats), model.cfg.n_outputs))
    for i in range(0, len(order), batch_size):
        idx = order[i:i + batch_size]
        X, lengths = pad_batch([mats[j] for j in idx])
        out[idx] = model.predict(X, lengths)
    return out


def validation_score(model: Model, mats, examples: Sequence[Example]) -> float:
    """Macro-F (categorical) or negative summed MAE (dimensional); higher is better."""
    return validate(model, mats, examples)[0]


def validate(model: Model, mats, examples: Sequence[Example]) -> tuple[float, float]:
    """(score, mean loss) on a validation set; the loss only breaks score ties."""
    out = predict(model, mats)
    head = model.cfg.head
    targets = [e.target(head) for e in examples]
    value = float(L.loss(out, np.asarray(targets), head, model.cfg.dimensional_loss)[0])
    if head == "categorical":
        return categorical_metrics(out.argmax(axis=1), targets)["macro_f"], value
    m = dimensional_metrics(out, targets)
    return -(m["arousal_mae"] + m["valence_mae"]), value


@dataclass
class TrainState:
    params: dict
    adam_m: dict
    adam_v: dict
    adam_t: int
    epoch: int
    lr: float
    best_score: float
    best_epoch: int
    best_params: dict
    since_improvement: int = 0
    seed: int = 0
    best_loss: float = float("inf")

    def save(self, path, extra: dict | None = None) -> None:
        tensors = {}
        for prefix, d in (("param/", self.params), ("best/", self.best_params),
                          ("adam.m/", self.adam_m), ("adam.v/", self.adam_v)):
            tensors.update({prefix + k: v for k, v in d.items()})
        meta = {"adam_t": self.adam_t, "epoch": self.epoch, "lr": self.lr,
                "best_score": self.best_score, "best_epoch": self.best_epoch,
                "since_improvement": self.since_improvement, "seed": self.seed,
                "best_loss": self.best_loss}
        meta.update(extra or {})
        save_tensors(path, tensors, meta)

    @classmethod
    def load(cls, path) -> tuple["TrainState", dict]:
        tensors, meta = load_tensors(path)

        def group(prefix):
            return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        st = cls(group("param/"), group("adam.m/"), group("adam.v/"), int(meta["adam_t"]),
                 int(meta["epoch"]), float(meta["lr"]), float(meta["best_score"]),
                 int(meta["best_epoch"]), group("best/"), int(meta["since_improvement"]),
                 int(meta["seed"]), float(meta.get("best_loss", float("inf"))))
        return st, meta


@dataclass
class FitResult:
    model: Model
    state: TrainState
    normalizer: FeatureNormalizer
    history: list = field(default_factory=list)
    plans: list = field(default_factory=list)


def _check_disjoint(train: Sequence[Example], val: Sequence[Example]):
    overlap = {e.speaker for e in train} & {e.speaker for e in val}
    if overlap:
        raise DataError(f"validation speakers also in training: {sorted(overlap)}")


def fit(model_cfg: ModelConfig, train: Sequence[Example], val: Sequence[Example],
        cfg: TrainConfig, aug: AugmentationConfig | None = None,
        featurizer: Featurizer | None = None, state: TrainState | None = None,
        stop_after: int | None = None, score_fn: Callable | None = None,
        on_epoch: Callable | None = None) -> FitResult:
    """Train one model and return it with its best-validation parameters.

    ``state`` resumes an earlier run; ``stop_after`` ends after that many
    epochs of this call (used for checkpoint/resume). ``score_fn(model,
    epoch)`` overrides the validation metric.
    """
    cfg.validate()
    if not train or not val:
        raise DataError("fit needs non-empty training and validation sets")
    _check_disjoint(train, val)
    aug = (aug or AugmentationConfig().disabled()).validate()
    featurizer = featurizer or Featurizer()
    head = model_cfg.head

    clean_train = [featurizer(e) for e in train]
    normalizer = fit_normalizer(clean_train, ids=[e.id for e in train])
    val_feats = [normalize(featurizer(e), normalizer) for e in val]
    targets = [e.target(head) for e in train]

    model = Model(model_cfg)
    opt = Adam(cfg.beta1, cfg.beta2, cfg.adam_eps)
    if state is None:
        state = TrainState({}, {}, {}, 0, 0, cfg.lr, -np.inf, -1, {}, 0, cfg.seed)
    else:
        model.params = {k: v.copy() for k, v in state.params.items()}
        opt.m = {k: v.copy() for k, v in state.adam_m.items()}
        opt.v = {k: v.copy() for k, v in state.adam_v.items()}
        opt.t = state.adam_t
        state.best_params = {k: v.copy() for k, v in state.best_params.items()}

    history, plan_log = [], []
    epochs_run = 0
    epoch = state.epoch
    while epoch < cfg.max_epochs and state.lr >= cfg.min_lr:
        if stop_after is not None and epochs_run >= stop_after:
            break
        if aug.enabled:
            key = aug.epoch_key(epoch)
            plans = [sample_plan(aug, rng_for(aug.rng_seed, key, e.id)) for e in train]
            plan_log.extend((e.id, epoch, p) for e, p in zip(train, plans))
            if aug.resample_per_epoch and not aug.plan_cycle:
                featurizer.clear()  # fresh draws every epoch; old ones are never reused
            feats = [featurizer(e, p) for e, p in zip(train, plans)]
        else:
            feats = clean_train
        feats = [normalize(f.astype(np.float64), normalizer) for f in feats]
        batches = make_batches([f.shape[0] for f in feats], epoch, cfg.batch_size,
                               np.random.default_rng([cfg.seed, epoch]))
        losses = []
        for idx in batches:
            X, lengths = pad_batch([feats[i] for i in idx])
            if head == "categorical":
                y = np.array([targets[i] for i in idx], dtype=np.int64)
            else:
                y = np.array([targets[i] for i in idx], dtype=np.float64)
            value, grads = model.loss_and_grads(X, lengths, y, train=True)
            if not np.isfinite(value):
                raise DivergedError(f"diverged: loss {value} at epoch {epoch}")
            opt.step(model.params, clip_gradients(grads, cfg.clip_interval), state.lr)
            losses.append(value)

        if score_fn:
            score, vloss = float(score_fn(model, epoch)), float("nan")
        else:
            score, vloss = validate(model, val_feats, val)
        # Small validation sets saturate; an equal score with lower loss still counts.
        improved = score > state.best_score or (score == state.best_score and vloss < state.best_loss)
        lr_used = state.lr
        if improved:
            state.best_score, state.best_epoch, state.best_loss = score, epoch, vloss
            state.best_params = {k: v.copy() for k, v in model.params.items()}
            state.since_improvement = 0
        else:
            state.since_improvement += 1
            if state.since_improvement >= cfg.plateau_patience:
                state.lr *= cfg.lr_factor
                state.since_improvement = 0
        row = {"epoch": epoch, "lr": lr_used, "train_loss": float(np.mean(losses)),
               "val_score": score, "val_loss": vloss, "improved": improved}
        history.append(row)
        log.debug("epoch %d lr %.2e loss %.4f val %.4f", epoch, lr_used, row["train_loss"], score)
        epoch += 1
        epochs_run += 1
        state.epoch = epoch
        state.params = {k: v.copy() for k, v in model.params.items()}
        state.adam_m = {k: v.copy() for k, v in opt.m.items()}
        state.adam_v = {k: v.copy() for k, v in opt.v.items()}
        state.adam_t = opt.t
        if on_epoch:
            on_epoch(row, state)

    best = Model(model_cfg, state.best_params or model.params)
    return FitResult(best, state, normalizer, history, plan_log)
