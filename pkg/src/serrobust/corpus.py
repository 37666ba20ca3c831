"""Manifests, label mapping, noise curation and desk-scale corpus synthesis.

Manifests are JSON lines, one :class:`UtteranceRecord` per line, with audio
paths stored relative to the manifest file.
"""
from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.signal

from .audio import CANONICAL_RATE, ImpulseResponse, Waveform, read_wav, write_wav
from .augment import degrade_channel, rng_for
from .errors import ConfigError, DataError, ManifestError

log = logging.getLogger(__name__)

CLASSES = ("Angry", "Happy", "Neutral", "Sad")
CLASS_INDEX = {c: i for i, c in enumerate(CLASSES)}
_LABEL_MAP = {"angry": "Angry", "happy": "Happy", "excited": "Happy", "neutral": "Neutral", "sad": "Sad"}
IEMOCAP_COUNTS = {"Angry": 1103, "Neutral": 1708, "Happy": 1636, "Sad": 1084}
IEMOCAP_TOTAL = 5531


def map_labels(raw: str | None) -> str | None:
    """Four-class mapping with Excited merged into Happy; anything else is excluded (None)."""
    if raw is None:
        return None
    return _LABEL_MAP.get(str(raw).strip().lower())


@dataclass
class UtteranceRecord:
    id: str
    audio: str
    session: str
    speaker: str
    raw_label: str | None = None
    label: str | None = None
    arousal: float | None = None
    valence: float | None = None

    @property
    def label_index(self) -> int | None:
        return CLASS_INDEX.get(self.label) if self.label else None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class NoiseClip:
    id: str
    audio: str
    tags: frozenset
    source: str = "local"

    def to_dict(self) -> dict:
        return {"id": self.id, "audio": self.audio, "tags": sorted(self.tags), "source": self.source}


# ---------------------------------------------------------------- manifest I/O

def _resolve(base: Path, audio: str) -> str:
    p = Path(audio)
    return str(p if p.is_absolute() else (base / p))


def read_manifest(path) -> list[UtteranceRecord]:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records, diags = [], []
    known = set(UtteranceRecord.__dataclass_fields__)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            if not isinstance(d, dict):
                raise ValueError("record is not a JSON object")
            missing = {"id", "audio", "session", "speaker"} - set(d)
            if missing:
                raise ValueError(f"missing fields {sorted(missing)}")
            rec = UtteranceRecord(**{k: v for k, v in d.items() if k in known})
        except (ValueError, TypeError) as exc:
            diags.append(f"line {lineno}: {exc}")
            continue
        rec.audio = _resolve(path.parent, rec.audio)
        records.append(rec)
    if diags:
        raise ManifestError(f"{path}: {len(diags)} unparseable records", diags)
    return records


def write_manifest(path, records: Iterable[UtteranceRecord]) -> None:
    path = Path(path)
    base = path.parent.resolve()
    lines = []
    for r in records:
        d = r.to_dict()
        p = Path(d["audio"])
        try:
            d["audio"] = str(p.resolve().relative_to(base))
        except ValueError:
            d["audio"] = str(p)
        lines.append(json.dumps(d, sort_keys=True))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_noise_manifest(path) -> list[NoiseClip]:
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            out.append(NoiseClip(d["id"], _resolve(path.parent, d["audio"]),
                                 frozenset(str(t).lower() for t in d.get("tags", ())),
                                 d.get("source", "local")))
        except (ValueError, KeyError, TypeError) as exc:
            raise ManifestError(f"{path}: bad noise record on line {lineno}: {exc}") from None
    return out


def write_noise_manifest(path, clips: Iterable[NoiseClip]) -> None:
    path = Path(path)
    base = path.parent.resolve()
    lines = []
    for c in clips:
        d = c.to_dict()
        try:
            d["audio"] = str(Path(d["audio"]).resolve().relative_to(base))
        except ValueError:
            pass
        lines.append(json.dumps(d, sort_keys=True))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---------------------------------------------------------------- validation

@dataclass
class ManifestReport:
    total: int = 0
    counts: dict = field(default_factory=dict)
    excluded: int = 0
    sessions: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.diagnostics


def validate_manifest(records: Sequence[UtteranceRecord], expect_iemocap: bool = False,
                      check_audio: bool = False, n_sessions: int = 5,
                      speakers_per_session: int = 2) -> ManifestReport:
    """Structural and label checks; every problem is reported with its record id."""
    rep = ManifestReport()
    if not records:
        rep.diagnostics.append("structure: manifest is empty")
        return rep
    seen = set()
    for r in records:
        if r.id in seen:
            rep.diagnostics.append(f"{r.id}: duplicate id")
        seen.add(r.id)
        if not r.session or not r.speaker:
            rep.diagnostics.append(f"{r.id}: missing session or speaker")
        mapped = map_labels(r.raw_label) if r.raw_label is not None else r.label
        if r.raw_label is not None and r.label != mapped:
            rep.diagnostics.append(f"{r.id}: label {r.label!r} inconsistent with raw label {r.raw_label!r}")
        if r.label is not None and r.label not in CLASS_INDEX:
            rep.diagnostics.append(f"{r.id}: unknown label {r.label!r}")
        for dim in ("arousal", "valence"):
            v = getattr(r, dim)
            if v is not None and not (1.0 <= float(v) <= 5.0):
                rep.diagnostics.append(f"{r.id}: {dim} {v} outside [1, 5]")
        if check_audio and not Path(r.audio).is_file():
            rep.diagnostics.append(f"{r.id}: audio file missing: {r.audio}")
        if r.label in CLASS_INDEX:
            rep.counts[r.label] = rep.counts.get(r.label, 0) + 1
        else:
            rep.excluded += 1
        rep.sessions.setdefault(r.session, set()).add(r.speaker)
    rep.total = sum(rep.counts.values())
    if len(rep.sessions) != n_sessions:
        rep.diagnostics.append(f"coverage: {len(rep.sessions)} sessions, expected {n_sessions}")
    for s, spks in sorted(rep.sessions.items()):
        if len(spks) != speakers_per_session:
            rep.diagnostics.append(f"coverage: session {s} has {len(spks)} speakers")
    rep.sessions = {s: sorted(v) for s, v in rep.sessions.items()}
    if expect_iemocap:
        for c, n in IEMOCAP_COUNTS.items():
            if rep.counts.get(c, 0) != n:
                rep.diagnostics.append(f"counts: {c} has {rep.counts.get(c, 0)} utterances, expected {n}")
        if rep.total != IEMOCAP_TOTAL:
            rep.diagnostics.append(f"counts: {rep.total} labelled utterances, expected {IEMOCAP_TOTAL}")
    return rep


# ---------------------------------------------------------------- noise curation

DESIRED_TAGS = frozenset((
    "mash", "break", "crash", "accident", "shatter", "crack", "cracking", "kitchen", "knock",
    "knocking", "domestic-sounds", "collapse", "alarm", "warning", "horn", "fire-alarm", "alert",
    "gunfire", "siren", "tap", "beep", "falling", "snapping", "household"))
UNWANTED_TAGS = frozenset((
    "speech", "voice", "cry", "scream", "shout", "pain", "crying", "cough", "nature",
    "field-recording", "special-effects", "synthesizer", "sound-effect", "sfx"))


@dataclass(frozen=True)
class TagFilter:
    desired: frozenset = DESIRED_TAGS
    unwanted: frozenset = UNWANTED_TAGS

    def __post_init__(self):
        object.__setattr__(self, "desired", frozenset(t.lower() for t in self.desired))
        object.__setattr__(self, "unwanted", frozenset(t.lower() for t in self.unwanted))
        both = self.desired & self.unwanted
        if both:
            raise ConfigError(f"tags both desired and unwanted: {sorted(both)}")

    def accepts(self, tags: Iterable[str]) -> bool:
        tags = {t.lower() for t in tags}
        return not (tags & self.unwanted) and bool(tags & self.desired)

    @classmethod
    def from_file(cls, path) -> "TagFilter":
        """One tag per line; ``!tag`` marks an unwanted tag; ``#`` starts a comment."""
        desired, unwanted = set(), set()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            t = line.split("#", 1)[0].strip().lower()
            if not t:
                continue
            if t.startswith("!"):
                unwanted.add(t[1:].strip())
            else:
                desired.add(t)
        return cls(frozenset(desired), frozenset(unwanted))

    def to_file(self, path) -> None:
        lines = sorted(self.desired) + [f"!{t}" for t in sorted(self.unwanted)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def filter_noise(clips: Iterable[NoiseClip], f: TagFilter | None = None) -> list[NoiseClip]:
    f = f or TagFilter()
    return [c for c in clips if f.accepts(c.tags)]


# ---------------------------------------------------------------- degraded test set

def build_degraded_testset(records: Sequence[UtteranceRecord], out_dir, ir: ImpulseResponse,
                           ego_noise: Waveform, nsr_policy=0.7, seed: int = 0,
                           fmt: str = "float32") -> tuple[list[UtteranceRecord], list[dict]]:
    """Pass every utterance through the simulated channel and freeze the result.

    ``nsr_policy`` is a fixed ratio or a ``(low, high)`` range sampled per
    utterance. Each utterance reads the ego-noise bed from its own seeded
    offset. Writes ``audio/*.wav``, ``manifest.jsonl``, ``provenance.json``
    and ``skipped.json``; returns the new records and the skip list.
    """
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    noise = np.asarray(ego_noise.samples)
    out, skipped = [], []
    for r in records:
        rng = rng_for(seed, 0, r.id)
        if isinstance(nsr_policy, (tuple, list)):
            nsr = float(rng.uniform(*nsr_policy))
        else:
            nsr = float(nsr_policy)
        offset = int(rng.integers(len(noise)))
        try:
            w = read_wav(r.audio)
            bed = ego_noise.with_samples(np.roll(noise, -offset))
            y = degrade_channel(w, ir, bed, nsr)
        except DataError as exc:
            skipped.append({"id": r.id, "reason": str(exc)})
            log.warning("skipping %s: %s", r.id, exc)
            continue
        dst = out_dir / "audio" / f"{r.id}.wav"
        write_wav(dst, y, fmt)
        out.append(replace(r, audio=str(dst)))
    write_manifest(out_dir / "manifest.jsonl", out)

    def h(a):
        return hashlib.sha256(np.ascontiguousarray(a, dtype=np.float64).tobytes()).hexdigest()
    prov = {"seed": seed, "nsr_policy": nsr_policy, "ir_id": ir.ir_id, "ir_sha256": h(ir.taps),
            "ego_noise_sha256": h(ego_noise.samples), "n_records": len(records),
            "n_written": len(out), "n_skipped": len(skipped), "format": fmt}
    (out_dir / "provenance.json").write_text(json.dumps(prov, indent=1, sort_keys=True))
    (out_dir / "skipped.json").write_text(json.dumps(skipped, indent=1))
    return out, skipped


def corpus_hash(records: Sequence[UtteranceRecord]) -> str:
    h = hashlib.sha256()
    for r in sorted(records, key=lambda r: r.id):
        d = r.to_dict()
        d.pop("audio")
        h.update(json.dumps(d, sort_keys=True).encode())
        h.update(Path(r.audio).read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------- synthetic speech

# Prosodic prototypes: F0 multiplier of the speaker base, relative F0 excursion,
# voiced RMS level, syllables per second, harmonic roll-off exponent,
# aspiration noise and the (arousal, valence) rating.
CLASS_PROTOTYPES = {
    "Angry":   dict(f0_mult=1.45, f0_var=0.06, level=0.26, rate=5.4, tilt=0.9, breath=0.01, av=(4.3, 1.7)),
    "Happy":   dict(f0_mult=1.20, f0_var=0.24, level=0.20, rate=4.4, tilt=1.3, breath=0.02, av=(3.9, 4.2)),
    "Neutral": dict(f0_mult=1.00, f0_var=0.04, level=0.11, rate=3.5, tilt=1.7, breath=0.02, av=(2.8, 3.0)),
    "Sad":     dict(f0_mult=0.82, f0_var=0.03, level=0.05, rate=2.6, tilt=2.3, breath=0.06, av=(2.0, 1.9)),
}
VOWELS = ((730, 1090, 2440), (530, 1840, 2480), (270, 2290, 3010), (570, 840, 2410), (300, 870, 2240))
FORMANT_BW = (90.0, 110.0, 170.0)


@dataclass(frozen=True)
class SpeakerProfile:
    speaker: str
    session: str
    base_f0: float
    formant_scale: float
    gain_db: float
    rate_mult: float


def _speaker_profiles(seed: int, n_sessions: int = 5) -> list[SpeakerProfile]:
    rng = np.random.default_rng([seed, 7])
    out = []
    for s in range(1, n_sessions + 1):
        for g in ("F", "M"):
            f0 = rng.uniform(185, 225) if g == "F" else rng.uniform(100, 130)
            fs = rng.uniform(1.10, 1.20) if g == "F" else rng.uniform(0.95, 1.05)
            out.append(SpeakerProfile(f"Ses{s:02d}{g}", f"Ses{s:02d}", f0, fs,
                                      rng.uniform(-2.0, 2.0), rng.uniform(0.9, 1.1)))
    return out


def _resonate(x: np.ndarray, formants, sr: int) -> np.ndarray:
    y = x
    for f, bw in zip(formants, FORMANT_BW):
        r = np.exp(-np.pi * bw / sr)
        theta = 2 * np.pi * f / sr
        a = [1.0, -2 * r * np.cos(theta), r * r]
        y = scipy.signal.lfilter([1.0 - r], a, y)
    return y


def synth_utterance(cls: str, spk: SpeakerProfile, rng: np.random.Generator,
                    sr: int = CANONICAL_RATE) -> np.ndarray:
    """Vowel-like syllable train whose prosody follows the class prototype."""
    p = CLASS_PROTOTYPES[cls]
    rate = p["rate"] * spk.rate_mult * rng.uniform(0.92, 1.08)
    n_syll = max(2, int(round(rng.uniform(1.0, 1.5) * rate)))
    lead = 0.08
    n = int((2 * lead + n_syll / rate) * sr)
    x = np.zeros(n)
    voiced = np.zeros(n, dtype=bool)
    base = spk.base_f0 * p["f0_mult"]
    for j in range(n_syll):
        start = int((lead + j / rate) * sr)
        length = int(0.65 / rate * sr)
        t = np.arange(length) / sr
        decl = 1.0 - (0.12 * j / n_syll if cls == "Sad" else 0.0)
        f0_syl = base * decl * (1 + rng.normal(0, 0.03))
        shape = np.sin(np.pi * t / t[-1] * rng.uniform(0.5, 1.5) + rng.uniform(0, np.pi))
        f0 = f0_syl * (1 + p["f0_var"] * shape)
        f0 *= 1 + 0.004 * rng.standard_normal(length).cumsum() / np.sqrt(np.arange(1, length + 1))
        phase = 2 * np.pi * np.cumsum(f0) / sr + rng.uniform(0, 2 * np.pi)
        n_harm = int(7000 / f0.max())
        k = np.arange(1, n_harm + 1)
        src = (k[:, None] ** -p["tilt"] * np.sin(k[:, None] * phase[None, :])).sum(axis=0)
        vowel = VOWELS[rng.integers(len(VOWELS))]
        seg = _resonate(src, [f * spk.formant_scale for f in vowel], sr)
        seg = seg / (np.sqrt(np.mean(seg ** 2)) + 1e-12)
        seg += p["breath"] * 8 * scipy.signal.lfilter([1.0], [1.0, -0.7], rng.standard_normal(length)) / 3
        env = scipy.signal.windows.tukey(length, 0.4)
        x[start:start + length] += seg * env
        voiced[start:start + length] = True
    level = p["level"] * 10 ** ((spk.gain_db + rng.uniform(-1.0, 1.0)) / 20)
    x *= level / (np.sqrt(np.mean(x[voiced] ** 2)) + 1e-12)
    peak = np.max(np.abs(x))
    if peak > 0.98:
        x *= 0.98 / peak
    return x


def synth_minicorpus(out_dir, size: int = 400, seed: int = 0) -> list[UtteranceRecord]:
    """Generate ``size`` labelled utterances over 5 sessions x 2 speakers.

    Half the Happy utterances carry the raw label ``Excited`` so the label
    mapping is exercised. Writes ``audio/*.wav`` and ``manifest.jsonl``.
    """
    n_spk = 10
    if size < 4 * n_spk or size % (4 * n_spk):
        raise ConfigError(f"corpus size must be a positive multiple of {4 * n_spk}, got {size}")
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    per_cell = size // (4 * n_spk)
    records = []
    for spk in _speaker_profiles(seed):
        i = 0
        for cls in CLASSES:
            for rep in range(per_cell):
                uid = f"{spk.speaker}_u{i:03d}"
                rng = rng_for(seed, 1, uid)
                x = synth_utterance(cls, spk, rng)
                a, v = CLASS_PROTOTYPES[cls]["av"]
                a = float(np.clip(a + rng.normal(0, 0.3), 1, 5))
                v = float(np.clip(v + rng.normal(0, 0.3), 1, 5))
                raw = "Excited" if cls == "Happy" and rep % 2 else cls
                path = out_dir / "audio" / f"{uid}.wav"
                write_wav(path, Waveform(x), "float32")
                records.append(UtteranceRecord(uid, str(path), spk.session, spk.speaker, raw,
                                               map_labels(raw), round(a, 3), round(v, 3)))
                i += 1
    write_manifest(out_dir / "manifest.jsonl", records)
    return records


# ---------------------------------------------------------------- synthetic assets

def _norm_rms(x, target=0.1):
    return x * (target / (np.sqrt(np.mean(x ** 2)) + 1e-12))


def pink_noise(n: int, rng: np.random.Generator, exponent: float = 1.0) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n)
    f[0] = f[1]
    return np.fft.irfft(spec / f ** (exponent / 2), n=n)


def make_ego_noise(duration_s: float = 10.0, seed: int = 0, sr: int = CANONICAL_RATE) -> Waveform:
    """Fan-like bed: band-limited pink noise with a blade tone and 50 Hz hum harmonics."""
    rng = np.random.default_rng([seed, 11])
    n = int(duration_s * sr)
    t = np.arange(n) / sr
    bed = pink_noise(n, rng)
    b, a = scipy.signal.butter(4, [80, 5000], btype="band", fs=sr)
    bed = _norm_rms(scipy.signal.lfilter(b, a, bed), 0.1)
    hum = sum((1.0 / k) * np.sin(2 * np.pi * 50 * k * t + rng.uniform(0, 2 * np.pi)) for k in range(1, 9))
    blade = np.sin(2 * np.pi * 310 * t) * (1 + 0.3 * np.sin(2 * np.pi * 3 * t))
    x = bed + _norm_rms(hum, 0.05) + _norm_rms(blade, 0.02)
    return Waveform(_norm_rms(x, 0.1))


def _clip_knock(n, sr, rng):
    x = np.zeros(n)
    for _ in range(rng.integers(2, 6)):
        s = rng.integers(0, n - sr // 5)
        L = sr // 6
        env = np.exp(-np.arange(L) / (0.012 * sr))
        f = rng.uniform(150, 500)
        x[s:s + L] += env * np.sin(2 * np.pi * f * np.arange(L) / sr) + 0.3 * env * rng.standard_normal(L)
    return x + 0.01 * pink_noise(n, rng)  # room tone keeps every span non-silent


def _clip_crash(n, sr, rng):
    x = np.zeros(n)
    s = rng.integers(0, n // 2)
    L = n - s
    env = np.exp(-np.arange(L) / (rng.uniform(0.15, 0.5) * sr))
    b, a = scipy.signal.butter(2, rng.uniform(1500, 4000), btype="high", fs=sr)
    x[s:] = env * scipy.signal.lfilter(b, a, rng.standard_normal(L))
    return x + 0.05 * rng.standard_normal(n)


def _clip_alarm(n, sr, rng):
    t = np.arange(n) / sr
    f = rng.uniform(900, 3000)
    gate = (np.sin(2 * np.pi * rng.uniform(1.5, 4) * t) > 0).astype(float)
    return gate * np.sin(2 * np.pi * f * t) + 0.02 * rng.standard_normal(n)


def _clip_siren(n, sr, rng):
    t = np.arange(n) / sr
    f = 700 + 400 * np.sin(2 * np.pi * rng.uniform(0.3, 1.0) * t)
    return np.sin(2 * np.pi * np.cumsum(f) / sr) + 0.05 * rng.standard_normal(n)


def _clip_appliance(n, sr, rng):
    t = np.arange(n) / sr
    x = pink_noise(n, rng, rng.uniform(0.8, 2.0))
    b, a = scipy.signal.butter(2, [rng.uniform(60, 200), rng.uniform(2500, 7000)], btype="band", fs=sr)
    x = _norm_rms(scipy.signal.lfilter(b, a, x))
    x *= 1 + 0.2 * np.sin(2 * np.pi * rng.uniform(0.2, 2) * t)
    return x + _norm_rms(np.sin(2 * np.pi * rng.uniform(90, 400) * t), 0.02)


def _clip_tap(n, sr, rng):
    x = rng.standard_normal(n)
    b, a = scipy.signal.butter(2, rng.uniform(800, 2500), btype="high", fs=sr)
    x = scipy.signal.lfilter(b, a, x)
    env = 1 + 0.5 * np.abs(scipy.signal.lfilter([1.0], [1, -0.999], rng.standard_normal(n))) / 30
    return x * env


def _clip_falling(n, sr, rng):
    x = _clip_knock(n, sr, rng)
    b, a = scipy.signal.butter(2, 300, btype="low", fs=sr)
    return scipy.signal.lfilter(b, a, x) * 4 + 0.1 * _clip_crash(n, sr, rng)


def _clip_babble(n, sr, rng):
    spk = _speaker_profiles(int(rng.integers(1 << 30)))[0]
    x = np.zeros(n)
    for _ in range(3):
        u = synth_utterance(CLASSES[rng.integers(4)], spk, rng)
        x[:min(n, len(u))] += u[:n]
    return x


def _clip_birds(n, sr, rng):
    t = np.arange(n) / sr
    f = rng.uniform(2500, 5000) + 800 * np.sin(2 * np.pi * 12 * t)
    gate = (np.sin(2 * np.pi * 2.5 * t) > 0.6).astype(float)
    return gate * np.sin(2 * np.pi * np.cumsum(f) / sr) + 0.1 * pink_noise(n, rng)


def _clip_music(n, sr, rng):
    t = np.arange(n) / sr
    notes = 220 * 2 ** (rng.integers(0, 12, 8) / 12)
    seg = n // len(notes)
    x = np.zeros(n)
    for i, f in enumerate(notes):
        tt = t[:seg]
        x[i * seg:(i + 1) * seg] = np.exp(-3 * tt) * sum(np.sin(2 * np.pi * f * k * tt) / k for k in (1, 2, 3))
    return x + 0.01 * rng.standard_normal(n)


NOISE_KINDS = (
    ("appliance", ("household", "kitchen", "domestic-sounds"), _clip_appliance),
    ("tap", ("tap", "kitchen", "water"), _clip_tap),
    ("knock", ("knock", "knocking", "door"), _clip_knock),
    ("crash", ("crash", "break", "shatter"), _clip_crash),
    ("alarm", ("alarm", "beep", "warning"), _clip_alarm),
    ("siren", ("siren", "alert", "horn"), _clip_siren),
    ("falling", ("falling", "collapse"), _clip_falling),
    ("babble", ("speech", "voice", "crowd"), _clip_babble),
    ("birds", ("nature", "field-recording", "birds"), _clip_birds),
    ("synthcrash", ("crash", "synthesizer", "sfx"), _clip_crash),
    ("music", ("music", "piano"), _clip_music),
)


def synth_noise_clips(out_dir, per_kind: int = 3, duration_s: float = 3.0, seed: int = 0,
                      sr: int = CANONICAL_RATE) -> list[NoiseClip]:
    """Tagged stand-ins for downloaded sound-event clips, some meant to be rejected."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    n = int(duration_s * sr)
    clips = []
    for kind, tags, gen in NOISE_KINDS:
        for i in range(per_kind):
            cid = f"{kind}{i:02d}"
            rng = rng_for(seed, 2, cid)
            x = _norm_rms(gen(n, sr, rng), 0.1)
            x = np.clip(x, -1, 1)
            path = out_dir / "audio" / f"{cid}.wav"
            write_wav(path, Waveform(x), "float32")
            clips.append(NoiseClip(cid, str(path), frozenset(tags), "local"))
    write_noise_manifest(out_dir / "noise_manifest.jsonl", clips)
    return clips


def synth_room_ir(rt60_s: float, seed: int, direct_delay: int = 0, sr: int = CANONICAL_RATE,
                  drr_db: float = 3.0, ir_id: str = "") -> ImpulseResponse:
    """Direct path, a few early reflections and an exponentially decaying diffuse tail."""
    rng = np.random.default_rng([seed, 13])
    n = direct_delay + int(rt60_s * sr)
    taps = np.zeros(n)
    taps[direct_delay] = 1.0
    for _ in range(6):
        d = direct_delay + int(rng.uniform(0.002, 0.03) * sr)
        if d < n:
            taps[d] += rng.uniform(-0.5, 0.5)
    start = direct_delay + int(0.003 * sr)
    t = np.arange(n - start) / sr
    tail = rng.standard_normal(n - start) * np.exp(-6.9 * t / rt60_s)
    tail *= np.sqrt(10 ** (-drr_db / 10) / np.sum(tail ** 2))
    taps[start:] += tail
    return ImpulseResponse(taps / np.max(np.abs(taps)), sr, ir_id=ir_id)


def synth_ir_pool(out_dir, rt60s=(0.2, 0.3, 0.4, 0.5, 0.6, 0.8), seed: int = 0) -> list[str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = []
    for i, rt in enumerate(rt60s):
        iid = f"room{i:02d}"
        ir = synth_room_ir(rt, seed=seed * 1000 + i, drr_db=float(np.random.default_rng([seed, i]).uniform(0, 6)),
                           ir_id=iid)
        write_wav(out_dir / f"{iid}.wav", Waveform(ir.taps, ir.sample_rate_hz), "float32")
        ids.append(iid)
    return ids


def lab_channel_ir(seed: int = 0) -> ImpulseResponse:
    """Fixed response of the simulated recording room (1.6 m source distance)."""
    delay = int(round(1.6 / 343.0 * CANONICAL_RATE))
    return synth_room_ir(0.45, seed=10_000 + seed, direct_delay=delay, drr_db=2.0, ir_id="lab")


def label_counts(records: Sequence[UtteranceRecord]) -> Counter:
    return Counter(r.label for r in records if r.label)
