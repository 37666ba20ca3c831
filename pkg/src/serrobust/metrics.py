"""Leave-one-speaker-out folds and the evaluation metric suite."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ManifestError

N_CLASSES = 4
N_SESSIONS = 5
SPEAKERS_PER_SESSION = 2


@dataclass(frozen=True)
class FoldSpec:
    fold_id: int
    train_sessions: tuple
    held_out_session: str
    val_speaker: str
    test_speaker: str


def make_loso_folds(manifest) -> list[FoldSpec]:
    """Ten folds: each session held out twice, its speakers swapping val/test roles.

    ``manifest`` is any iterable of records with ``session`` and ``speaker``.
    Fold ``2i`` tests on the first (sorted) speaker of session ``i`` and
    validates on the second; fold ``2i + 1`` swaps them.
    """
    sessions: dict = {}
    bad = []
    for rec in manifest:
        sess, spk = getattr(rec, "session", None), getattr(rec, "speaker", None)
        if not sess or not spk:
            bad.append(getattr(rec, "id", "?"))
            continue
        sessions.setdefault(str(sess), set()).add(str(spk))
    if bad:
        raise ManifestError(f"{len(bad)} records lack session/speaker annotations",
                            [f"{i}: missing session or speaker" for i in bad])
    if len(sessions) != N_SESSIONS:
        raise ManifestError(f"expected {N_SESSIONS} sessions, found {len(sessions)}: {sorted(sessions)}")
    owners: dict = {}
    for sess, spks in sessions.items():
        if len(spks) != SPEAKERS_PER_SESSION:
            raise ManifestError(f"session {sess} has {len(spks)} speakers, expected {SPEAKERS_PER_SESSION}")
        for s in spks:
            if s in owners:
                raise ManifestError(f"speaker {s} appears in sessions {owners[s]} and {sess}")
            owners[s] = sess
    folds = []
    order = sorted(sessions)
    for sess in order:
        a, b = sorted(sessions[sess])
        train = tuple(s for s in order if s != sess)
        for test, val in ((a, b), (b, a)):
            folds.append(FoldSpec(len(folds), train, sess, val, test))
    return folds


def split_fold(records: Sequence, fold: FoldSpec):
    """(train, val, test) record lists for ``fold``."""
    train = [r for r in records if r.session in fold.train_sessions]
    val = [r for r in records if r.speaker == fold.val_speaker]
    test = [r for r in records if r.speaker == fold.test_speaker]
    return train, val, test


# ---------------------------------------------------------------- categorical

def confusion_matrix(preds, targets, n_classes: int = N_CLASSES) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if preds.shape != targets.shape:
        raise ValueError(f"length mismatch: {preds.shape[0]} predictions, {targets.shape[0]} targets")
    if preds.size and (preds.min() < 0 or targets.min() < 0
                       or preds.max() >= n_classes or targets.max() >= n_classes):
        raise ValueError(f"class indices must lie in [0, {n_classes - 1}]")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (targets, preds), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> dict:
    """Rows are true classes. Classes with no support contribute recall 0 and F1 0."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return {"uw_acc": float(tp.sum() / total) if total else 0.0,
            "uar": float(recall.mean()),
            "macro_f": float(f1.mean()),
            "per_class_recall": recall.tolist(),
            "per_class_f1": f1.tolist()}


def categorical_metrics(preds, targets, n_classes: int = N_CLASSES) -> dict:
    cm = confusion_matrix(preds, targets, n_classes)
    out = metrics_from_confusion(cm)
    out["confusion"] = cm
    return out


# ---------------------------------------------------------------- dimensional

def pearson(x, y) -> float | None:
    """Pearson correlation, or ``None`` when either side has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx <= 1e-24 * max(1.0, float(x @ x)) or syy <= 1e-24 * max(1.0, float(y @ y)):
        return None
    return float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def dimensional_metrics(preds, targets) -> dict:
    preds = np.asarray(preds, dtype=np.float64).reshape(-1, 2)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if preds.shape != targets.shape:
        raise ValueError(f"length mismatch: {preds.shape[0]} predictions, {targets.shape[0]} targets")
    err = np.abs(preds - targets)
    return {"arousal_mae": float(err[:, 0].mean()), "valence_mae": float(err[:, 1].mean()),
            "arousal_corr": pearson(preds[:, 0], targets[:, 0]),
            "valence_corr": pearson(preds[:, 1], targets[:, 1])}


# ---------------------------------------------------------------- relative change

def gap_percent(clean: float, degraded: float) -> float:
    if clean == 0:
        raise ZeroDivisionError("gap relative to a zero clean score is undefined")
    return (degraded - clean) / clean * 100.0


def improvement_percent(baseline_degraded: float, augmented_degraded: float,
                        lower_is_better: bool = False) -> float:
    """Relative change on the degraded set; for error metrics a reduction counts as positive."""
    if baseline_degraded == 0:
        raise ZeroDivisionError("improvement relative to a zero baseline is undefined")
    change = (augmented_degraded - baseline_degraded) / baseline_degraded * 100.0
    return -change if lower_is_better else change


# ---------------------------------------------------------------- reports

CATEGORICAL_KEYS = ("uw_acc", "uar", "macro_f")
DIMENSIONAL_KEYS = ("arousal_mae", "valence_mae", "arousal_corr", "valence_corr")
TABLE_COLUMNS = {"uw_acc": "UW Acc", "uar": "UAR", "macro_f": "F-score",
                 "arousal_mae": "Arousal MAE", "valence_mae": "Valence MAE",
                 "arousal_corr": "Arousal corr", "valence_corr": "Valence corr"}


@dataclass
class EvalReport:
    """Metrics for one model on one test condition."""
    n: int = 0
    confusion: list | None = None
    uw_acc: float | None = None
    uar: float | None = None
    macro_f: float | None = None
    arousal_mae: float | None = None
    valence_mae: float | None = None
    arousal_corr: float | None = None
    valence_corr: float | None = None
    per_fold: list = field(default_factory=list)
    std: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, preds, targets, head: str) -> "EvalReport":
        if head == "categorical":
            m = categorical_metrics(preds, targets)
            return cls(n=len(targets), confusion=m["confusion"].tolist(),
                       **{k: m[k] for k in CATEGORICAL_KEYS})
        m = dimensional_metrics(preds, targets)
        return cls(n=len(targets), **m)

    def values(self) -> dict:
        return {k: getattr(self, k) for k in CATEGORICAL_KEYS + DIMENSIONAL_KEYS
                if getattr(self, k) is not None}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_fold"] = [r if isinstance(r, dict) else asdict(r) for r in self.per_fold]
        return d

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        d = dict(d)
        folds = [cls.from_dict(f) for f in d.pop("per_fold", [])]
        return cls(per_fold=folds, **d)


def aggregate_folds(reports: Iterable[EvalReport]) -> EvalReport:
    """Per-fold mean (std kept alongside); confusion matrices are summed.

    Missing correlations are skipped in the mean, never counted as 0.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no fold reports to aggregate")
    out = EvalReport(n=sum(r.n for r in reports), per_fold=reports)
    for k in CATEGORICAL_KEYS + DIMENSIONAL_KEYS:
        vals = [getattr(r, k) for r in reports if getattr(r, k) is not None]
        if vals:
            setattr(out, k, float(np.mean(vals)))
            out.std[k] = float(np.std(vals))
    cms = [np.asarray(r.confusion) for r in reports if r.confusion is not None]
    if cms:
        out.confusion = np.sum(cms, axis=0).tolist()
    return out


def summary_rows(model_name: str, clean_noaug: EvalReport, degraded_noaug: EvalReport,
                 clean_aug: EvalReport | None = None, degraded_aug: EvalReport | None = None) -> list:
    """Rows laid out like the results table: scores, gap % and improvement %."""
    keys = [k for k in CATEGORICAL_KEYS + DIMENSIONAL_KEYS
            if getattr(clean_noaug, k) is not None or getattr(degraded_noaug, k) is not None]

    def score_row(train, test, rep):
        return {"model": model_name, "train": train, "test": test,
                **{TABLE_COLUMNS[k]: getattr(rep, k) for k in keys}}

    def rel_row(train, label, fn, a, b):
        row = {"model": model_name, "train": train, "test": label}
        for k in keys:
            x, y = getattr(a, k), getattr(b, k)
            row[TABLE_COLUMNS[k]] = fn(x, y, k) if x not in (None, 0) and y is not None else None
        return row

    def gap(x, y, k):
        return gap_percent(x, y)

    def improvement(x, y, k):
        return improvement_percent(x, y, lower_is_better=k.endswith("_mae"))

    rows = [score_row("clean", "clean", clean_noaug),
            score_row("clean", "degraded", degraded_noaug),
            rel_row("clean", "gap %", gap, clean_noaug, degraded_noaug)]
    if clean_aug is not None and degraded_aug is not None:
        rows += [score_row("augmented", "clean", clean_aug),
                 score_row("augmented", "degraded", degraded_aug),
                 rel_row("augmented", "gap %", gap, clean_aug, degraded_aug),
                 rel_row("augmented", "improvement %", improvement, degraded_noaug, degraded_aug)]
    return rows


def write_csv(path, rows: Sequence[dict]) -> None:
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else
                            (f"{r[k]:.4f}" if isinstance(r.get(k), float) else r[k])) for k in cols})
