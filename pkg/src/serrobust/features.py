"""Frame-level acoustic features (32 per frame), smoothing and z-normalization.

Frames are 25 ms long with a 10 ms stride. The feature set mixes 13 MFCCs
with prosodic and spectral descriptors in the spirit of eGeMAPS; the exact
list is :data:`FEATURE_NAMES` and is part of the on-disk contract.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .audio import CANONICAL_RATE, Waveform
from .errors import EmptyInputError, SampleRateMismatch, ShapeError

EXTRACTOR_VERSION = 1

WINDOW_S = 0.025
STRIDE_S = 0.010
N_FFT = 512
N_MELS = 26
N_MFCC = 13
PRE_EMPHASIS = 0.97
F0_RANGE_HZ = (55.0, 600.0)
VOICING_THRESHOLD = 0.45
NORM_EPS = 1e-8
_LOG_FLOOR = 1e-10
_POWER_EPS = 1e-12

FORMANT_BANDS_HZ = ((200.0, 1000.0), (800.0, 2800.0), (2000.0, 3800.0))

FEATURE_NAMES = (
    tuple(f"mfcc{i}" for i in range(1, N_MFCC + 1))
    + ("f0_hz", "voicing_prob", "jitter_local", "shimmer_local", "loudness", "spectral_flux",
       "f1_centroid_hz", "f1_bandwidth_hz", "f2_centroid_hz", "f2_bandwidth_hz",
       "f3_centroid_hz", "f3_bandwidth_hz",
       "slope_0_500", "slope_500_1500", "alpha_ratio_db", "hammarberg_db",
       "h1_h2_db", "h1_a3_db", "zcr")
)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 32
COL = {name: i for i, name in enumerate(FEATURE_NAMES)}


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    frame_stride_s: float = STRIDE_S
    window_s: float = WINDOW_S
    feature_names: tuple = FEATURE_NAMES

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != len(self.feature_names):
            raise ShapeError(f"feature matrix shape {self.frames.shape} does not match "
                             f"{len(self.feature_names)} feature names")

    def __len__(self):
        return self.frames.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.frames[:, self.feature_names.index(name)]

    def replace_frames(self, frames) -> "FeatureMatrix":
        return FeatureMatrix(frames, self.frame_stride_s, self.window_s, self.feature_names)


def frame_count(n_samples: int, sample_rate: int = CANONICAL_RATE) -> int:
    win = int(round(WINDOW_S * sample_rate))
    hop = int(round(STRIDE_S * sample_rate))
    if n_samples < win:
        raise EmptyInputError(f"{n_samples} samples is shorter than one {win}-sample window")
    return (n_samples - win) // hop + 1


def frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    t = (x.shape[0] - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(t)[:, None]
    return x[idx]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = CANONICAL_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters (n_mels x n_fft//2+1) with edges equally spaced in mel."""
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def dct2_ortho_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


_FB = mel_filterbank()
_DCT = dct2_ortho_matrix(N_MELS)
_FREQS = np.arange(N_FFT // 2 + 1) * CANONICAL_RATE / N_FFT


def pre_emphasis(x: np.ndarray, coef: float = PRE_EMPHASIS) -> np.ndarray:
    return np.concatenate([x[:1], x[1:] - coef * x[:-1]])


def power_spectrum(frames: np.ndarray, n_fft: int = N_FFT) -> np.ndarray:
    win = np.hamming(frames.shape[1])
    spec = np.fft.rfft(frames * win, n=n_fft, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def mfcc_from_power(pspec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (MFCC 1..13, mel energies) from a pre-emphasized power spectrum."""
    mel_e = pspec @ _FB.T
    logmel = np.log(np.maximum(mel_e, _LOG_FLOOR))
    ceps = logmel @ _DCT.T
    return ceps[:, 1:N_MFCC + 1], mel_e


# ---------------------------------------------------------------- pitch

def normalized_autocorrelation(frames: np.ndarray, min_lag: int, max_lag: int) -> np.ndarray:
    """r[t, j] for lags ``min_lag + j``; overlap-normalized, rows of silence give 0."""
    n = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    acf = np.fft.irfft(spec.real ** 2 + spec.imag ** 2, n=nfft, axis=1)
    lags = np.arange(min_lag, max_lag + 1)
    cs = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    head = cs[:, n - lags]            # sum of x[0 : n-lag]^2
    tail = cs[:, n:n + 1] - cs[:, lags]  # sum of x[lag : n]^2
    denom = np.sqrt(head * tail)
    num = acf[:, lags]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 1e-10, num / denom, 0.0)
    return np.clip(r, -1.0, 1.0)


def _pick_period(r_row: np.ndarray, min_lag: int) -> tuple[float, float]:
    """Lag (fractional) and height of the first strong local peak."""
    best = float(np.max(r_row))
    if best <= 0:
        return 0.0, 0.0
    inner = r_row[1:-1]
    peaks = np.nonzero((inner >= r_row[:-2]) & (inner > r_row[2:]) & (inner >= 0.9 * best))[0] + 1
    j = int(peaks[0]) if peaks.size else int(np.argmax(r_row))
    frac = 0.0
    if 0 < j < r_row.size - 1:
        a, b, c = r_row[j - 1], r_row[j], r_row[j + 1]
        d = a - 2 * b + c
        if d < 0:
            frac = float(np.clip(0.5 * (a - c) / d, -0.5, 0.5))
    return min_lag + j + frac, float(r_row[j])


def _interp_peak(x: np.ndarray, i: int) -> tuple[float, float]:
    if 0 < i < x.size - 1:
        a, b, c = x[i - 1], x[i], x[i + 1]
        d = a - 2 * b + c
        if d < 0:
            # clamp: a window-edge argmax need not be a true local maximum
            off = float(np.clip(0.5 * (a - c) / d, -0.5, 0.5))
            return i + off, b - 0.25 * (a - c) * off
    return float(i), float(x[i])


def cycle_perturbation(frame: np.ndarray, period: float) -> tuple[float, float]:
    """Local jitter and shimmer from successive waveform maxima one period apart."""
    n = frame.size
    p_int = int(round(period))
    if p_int < 2 or 3 * p_int > n:
        return 0.0, 0.0
    i = int(np.argmax(frame[:p_int]))
    positions, amps = [], []
    while True:
        pos, amp = _interp_peak(frame, i)
        positions.append(pos)
        amps.append(amp)
        lo = int(np.floor(pos + 0.75 * period))
        hi = int(np.ceil(pos + 1.25 * period)) + 1
        if hi > n:
            break
        i = lo + int(np.argmax(frame[lo:hi]))
    if len(positions) < 3:
        return 0.0, 0.0
    periods = np.diff(positions)
    amps = np.abs(np.asarray(amps))
    jitter = float(np.mean(np.abs(np.diff(periods))) / np.mean(periods))
    mean_amp = float(np.mean(amps))
    shimmer = float(np.mean(np.abs(np.diff(amps))) / mean_amp) if mean_amp > 0 else 0.0
    return jitter, shimmer


# ---------------------------------------------------------------- spectral helpers

def _band(lo: float, hi: float) -> np.ndarray:
    return (_FREQS >= lo) & (_FREQS < hi)


def _band_moments(p: np.ndarray, lo: float, hi: float):
    sel = _band(lo, hi)
    f = _FREQS[sel]
    w = p[:, sel] + _POWER_EPS
    w = w / w.sum(axis=1, keepdims=True)
    c = w @ f
    bw = np.sqrt(np.maximum(w @ (f ** 2) - c ** 2, 0.0))
    return c, bw


def _band_slope(db: np.ndarray, lo: float, hi: float) -> np.ndarray:
    sel = _band(lo, hi)
    f = _FREQS[sel] / 1000.0
    fc = f - f.mean()
    return (db[:, sel] @ fc) / np.sum(fc ** 2)


def _harmonic_db(db: np.ndarray, f0: np.ndarray, multiple: float) -> np.ndarray:
    """dB level of the strongest bin within a quarter-F0 of ``multiple * f0``."""
    out = np.zeros(f0.shape[0])
    bin_hz = _FREQS[1]
    for t in np.nonzero(f0 > 0)[0]:
        centre = multiple * f0[t]
        half = max(f0[t] / 4.0, bin_hz)
        sel = np.abs(_FREQS - centre) <= half
        if np.any(sel):
            out[t] = np.max(db[t, sel])
    return out


# ---------------------------------------------------------------- extract

def raw_features(w: Waveform) -> np.ndarray:
    if w.sample_rate_hz != CANONICAL_RATE:
        raise SampleRateMismatch(f"feature extraction needs {CANONICAL_RATE} Hz, got {w.sample_rate_hz}")
    sr = CANONICAL_RATE
    win = int(round(WINDOW_S * sr))
    hop = int(round(STRIDE_S * sr))
    frame_count(len(w), sr)
    x = np.asarray(w.samples, dtype=np.float64)
    frames = frame_signal(x, win, hop)
    t_frames = frames.shape[0]
    out = np.zeros((t_frames, N_FEATURES))

    pspec_pe = power_spectrum(frame_signal(pre_emphasis(x), win, hop))
    mfcc, mel_e = mfcc_from_power(pspec_pe)
    out[:, :N_MFCC] = mfcc
    out[:, COL["loudness"]] = np.log(np.maximum(mel_e.sum(axis=1), _LOG_FLOOR))

    pspec = power_spectrum(frames)
    # Flux between power spectra normalized to unit sum: level-invariant.
    share = pspec / np.maximum(pspec.sum(axis=1, keepdims=True), _LOG_FLOOR)
    flux = np.zeros(t_frames)
    flux[1:] = np.sum(np.diff(share, axis=0) ** 2, axis=1)
    out[:, COL["spectral_flux"]] = flux

    # Pitch, voicing, jitter, shimmer.
    min_lag = int(np.floor(sr / F0_RANGE_HZ[1]))
    max_lag = int(np.ceil(sr / F0_RANGE_HZ[0]))
    centred = frames - frames.mean(axis=1, keepdims=True)
    r = normalized_autocorrelation(centred, min_lag, max_lag)
    energy = np.mean(centred ** 2, axis=1)
    f0 = np.zeros(t_frames)
    vprob = np.zeros(t_frames)
    jit = np.zeros(t_frames)
    shim = np.zeros(t_frames)
    for t in range(t_frames):
        if energy[t] < 1e-10:
            continue
        lag, height = _pick_period(r[t], min_lag)
        vprob[t] = max(height, 0.0)
        if height >= VOICING_THRESHOLD and lag > 0:
            f0[t] = sr / lag
            jit[t], shim[t] = cycle_perturbation(centred[t], lag)
    out[:, COL["f0_hz"]] = f0
    out[:, COL["voicing_prob"]] = vprob
    out[:, COL["jitter_local"]] = jit
    out[:, COL["shimmer_local"]] = shim

    for k, (lo, hi) in enumerate(FORMANT_BANDS_HZ, start=1):
        c, bw = _band_moments(pspec, lo, hi)
        out[:, COL[f"f{k}_centroid_hz"]] = c
        out[:, COL[f"f{k}_bandwidth_hz"]] = bw

    db = 10.0 * np.log10(pspec + _POWER_EPS)
    out[:, COL["slope_0_500"]] = _band_slope(db, 0.0, 500.0)
    out[:, COL["slope_500_1500"]] = _band_slope(db, 500.0, 1500.0)
    e_low = pspec[:, _band(50.0, 1000.0)].sum(axis=1) + _POWER_EPS
    e_high = pspec[:, _band(1000.0, 5000.0)].sum(axis=1) + _POWER_EPS
    out[:, COL["alpha_ratio_db"]] = 10.0 * np.log10(e_low / e_high)
    m_low = pspec[:, _band(0.0, 2000.0)].max(axis=1) + _POWER_EPS
    m_high = pspec[:, _band(2000.0, 5000.0)].max(axis=1) + _POWER_EPS
    out[:, COL["hammarberg_db"]] = 10.0 * np.log10(m_low / m_high)

    h1 = _harmonic_db(db, f0, 1.0)
    h2 = _harmonic_db(db, f0, 2.0)
    a3 = np.where(f0 > 0, db[:, _band(*FORMANT_BANDS_HZ[2])].max(axis=1), 0.0)
    voiced = f0 > 0
    out[:, COL["h1_h2_db"]] = np.where(voiced, h1 - h2, 0.0)
    out[:, COL["h1_a3_db"]] = np.where(voiced, h1 - a3, 0.0)

    signs = np.signbit(frames)
    out[:, COL["zcr"]] = np.mean(signs[:, 1:] != signs[:, :-1], axis=1)
    return out


def smooth(m: FeatureMatrix, width: int = 3) -> FeatureMatrix:
    """Centred moving average per column; edges average the neighbours that exist."""
    x = m.frames
    t = x.shape[0]
    if t <= 1 or width <= 1:
        return m.replace_frames(x.copy())
    half = width // 2
    cs = np.concatenate([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    idx = np.arange(t)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, t)
    return m.replace_frames((cs[hi] - cs[lo]) / (hi - lo)[:, None])


def extract(w: Waveform, smoothing: bool = True) -> FeatureMatrix:
    m = FeatureMatrix(raw_features(w))
    return smooth(m) if smoothing else m


# ---------------------------------------------------------------- normalizer

@dataclass
class FeatureNormalizer:
    mean: np.ndarray
    std: np.ndarray
    source_ids: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), NORM_EPS)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "source_ids": sorted(self.source_ids)}

    @classmethod
    def from_dict(cls, d) -> "FeatureNormalizer":
        return cls(np.array(d["mean"]), np.array(d["std"]), frozenset(d.get("source_ids", [])))


def _partial_stats(x: np.ndarray):
    n = x.shape[0]
    mu = x.mean(axis=0)
    return n, mu, np.sum((x - mu) ** 2, axis=0)


def _combine(a, b):
    na, ma, m2a = a
    nb, mb, m2b = b
    n = na + nb
    d = mb - ma
    return n, ma + d * nb / n, m2a + m2b + d ** 2 * na * nb / n


def fit_normalizer(train: Sequence[FeatureMatrix] | Sequence[np.ndarray],
                   ids: Iterable[str] | None = None) -> FeatureNormalizer:
    """Pooled per-feature mean and population std over all training frames."""
    mats = [m.frames if isinstance(m, FeatureMatrix) else np.asarray(m) for m in train]
    mats = [m for m in mats if m.shape[0] > 0]
    if not mats:
        raise EmptyInputError("cannot fit a normalizer on an empty training set")
    acc = _partial_stats(mats[0])
    for m in mats[1:]:
        acc = _combine(acc, _partial_stats(m))
    n, mu, m2 = acc
    return FeatureNormalizer(mu, np.sqrt(m2 / n), frozenset(ids or ()))


def normalize(m, nz: FeatureNormalizer):
    x = m.frames if isinstance(m, FeatureMatrix) else np.asarray(m)
    if x.ndim != 2 or x.shape[1] != nz.mean.shape[0]:
        raise ShapeError(f"feature dimension {x.shape[-1]} != normalizer dimension {nz.mean.shape[0]}")
    y = (x - nz.mean) / nz.std
    return m.replace_frames(y) if isinstance(m, FeatureMatrix) else y


def denormalize(m, nz: FeatureNormalizer):
    x = m.frames if isinstance(m, FeatureMatrix) else np.asarray(m)
    if x.ndim != 2 or x.shape[1] != nz.mean.shape[0]:
        raise ShapeError(f"feature dimension {x.shape[-1]} != normalizer dimension {nz.mean.shape[0]}")
    y = x * nz.std + nz.mean
    return m.replace_frames(y) if isinstance(m, FeatureMatrix) else y


# ---------------------------------------------------------------- cache

_MAGIC = b"SERFEAT\0"
_HEADER = struct.Struct("<8sIII")


def waveform_key(w: Waveform) -> str:
    h = hashlib.sha256()
    h.update(struct.pack("<II", w.sample_rate_hz, EXTRACTOR_VERSION))
    h.update(np.ascontiguousarray(w.samples, dtype=np.float64).tobytes())
    return h.hexdigest()


def write_features(path, m: FeatureMatrix, key: str | None = None) -> None:
    """Binary container (magic, version, T, D, row-major float32) plus a JSON sidecar."""
    path = Path(path)
    data = np.ascontiguousarray(m.frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, EXTRACTOR_VERSION, data.shape[0], data.shape[1]))
        fh.write(data.tobytes())
    side = {"feature_names": list(m.feature_names), "extractor_version": EXTRACTOR_VERSION,
            "frame_stride_s": m.frame_stride_s, "window_s": m.window_s, "key": key}
    path.with_suffix(".json").write_text(json.dumps(side, indent=1))


def read_features(path) -> FeatureMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ShapeError(f"{path}: truncated feature file")
        magic, version, t, d = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise ShapeError(f"{path}: not a feature file")
        if version != EXTRACTOR_VERSION:
            raise ShapeError(f"{path}: extractor version {version}, expected {EXTRACTOR_VERSION}")
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != t * d:
        raise ShapeError(f"{path}: payload size {data.size} != {t}x{d}")
    side_path = path.with_suffix(".json")
    names = FEATURE_NAMES
    if side_path.exists():
        names = tuple(json.loads(side_path.read_text())["feature_names"])
    return FeatureMatrix(data.reshape(t, d).astype(np.float64), feature_names=names)


class FeatureCache:
    """Directory cache keyed by waveform content hash and extractor version."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, key: str) -> Path:
        return self.root / f"{key[:32]}.feat"

    def get_or_compute(self, w: Waveform) -> FeatureMatrix:
        key = waveform_key(w)
        p = self.path_for(key)
        if p.exists():
            return read_features(p)
        m = extract(w)
        tmp = p.with_name(p.name + f".{os.getpid()}.tmp")
        write_features(tmp, m, key)
        os.replace(tmp, p)
        os.replace(tmp.with_suffix(".json"), p.with_suffix(".json"))
        return read_features(p)
