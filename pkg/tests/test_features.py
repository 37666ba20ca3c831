"""Frame-level features against a hand-coded reference chain and tone oracles."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from serrobust.audio import Waveform
from serrobust.errors import EmptyInputError, SampleRateMismatch, ShapeError
from serrobust.features import (COL, FEATURE_NAMES, FeatureCache, FeatureMatrix, denormalize, extract,
                                fit_normalizer, frame_count, normalize, read_features, smooth,
                                write_features)

SR = 16000


def tone(f, dur=1.0, amp=0.5):
    t = np.arange(int(dur * SR)) / SR
    return Waveform(amp * np.sin(2 * np.pi * f * t))


def reference_mfcc(x):
    """Loop-level MFCC: pre-emphasis, Hamming, direct DFT, HTK mel triangles, DCT-II."""
    x = np.asarray(x, dtype=np.float64)
    pe = np.empty_like(x)
    pe[0] = x[0]
    for i in range(1, len(x)):
        pe[i] = x[i] - 0.97 * x[i - 1]
    N, H, NFFT, M = 400, 160, 512, 26
    n = np.arange(N)
    ham = 0.54 - 0.46 * np.cos(2 * np.pi * n / (N - 1))
    k = np.arange(NFFT // 2 + 1)
    dft = np.exp(-2j * np.pi * np.outer(k, n) / NFFT)  # zero padding -> only N terms contribute
    mel = lambda f: 2595 * np.log10(1 + f / 700)  # noqa: E731
    imel = lambda m: 700 * (10 ** (m / 2595) - 1)  # noqa: E731
    edges = [imel(mel(8000.0) * i / (M + 1)) for i in range(M + 2)]
    fb = np.zeros((M, len(k)))
    for m in range(M):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        for b in k:
            f = b * SR / NFFT
            if lo < f <= c:
                fb[m, b] = (f - lo) / (c - lo)
            elif c < f < hi:
                fb[m, b] = (hi - f) / (hi - c)
    out = []
    for t in range((len(x) - N) // H + 1):
        seg = pe[t * H:t * H + N] * ham
        p = np.abs(dft @ seg) ** 2
        e = np.log(np.maximum(fb @ p, 1e-10))
        c = [np.sqrt((1 if q == 0 else 2) / M) * sum(e[i] * np.cos(np.pi * q * (2 * i + 1) / (2 * M))
                                                     for i in range(M)) for q in range(1, 14)]
        out.append(c)
    return np.array(out)


def test_feature_names():
    assert len(FEATURE_NAMES) == 32 and len(set(FEATURE_NAMES)) == 32
    assert FEATURE_NAMES[:13] == tuple(f"mfcc{i}" for i in range(1, 14))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(400, 40000))
def test_frame_count_formula(n):
    assert frame_count(n) == (n - 400) // 160 + 1


def test_frame_count_examples():
    assert frame_count(16000) == 98
    assert len(extract(tone(200, dur=1.0))) == 98
    assert frame_count(400) == 1
    with pytest.raises(EmptyInputError):
        extract(Waveform(np.zeros(399)))
    with pytest.raises(SampleRateMismatch):
        extract(Waveform(np.zeros(8000), 8000))


@pytest.mark.parametrize("seed", range(10))
def test_mfcc_matches_reference(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(400, 2400))
    x = rng.uniform(0.01, 0.5) * rng.standard_normal(n)
    m = extract(Waveform(x), smoothing=False)
    assert np.max(np.abs(m.frames[:, :13] - reference_mfcc(x))) <= 1e-4


@pytest.mark.parametrize("f", [80.0, 110.0, 220.0, 330.0, 440.0, 580.0])
def test_pure_tone_pitch_and_jitter(f):
    m = extract(tone(f), smoothing=False)
    f0 = m.column("f0_hz")
    voiced = f0 > 0
    assert voiced.mean() > 0.95
    assert abs(np.median(f0[voiced]) - f) <= 2.0
    assert np.median(m.column("jitter_local")[voiced]) < 0.005


def test_silence_is_unvoiced_and_finite():
    x = np.zeros(8000)
    x[4000:] = tone(200, 0.25).samples
    m = extract(Waveform(x), smoothing=False)
    assert np.all(np.isfinite(m.frames))
    assert np.all(m.column("f0_hz")[:20] == 0)


def test_stationary_sine_has_no_flux():
    flux = extract(tone(220), smoothing=False).column("spectral_flux")
    assert np.all(flux[2:] < 1e-3)


def test_scaling_invariance_and_loudness():
    w = tone(200, amp=0.4)
    a = extract(w, smoothing=False)
    b = extract(w.with_samples(np.asarray(w.samples) * 0.25), smoothing=False)
    for name in ("f0_hz", "jitter_local", "spectral_flux"):
        assert np.allclose(a.column(name), b.column(name), atol=1e-6)
    assert np.all(b.column("loudness") < a.column("loudness"))


def test_deterministic():
    w = Waveform(np.random.default_rng(0).standard_normal(5000) * 0.1)
    assert np.array_equal(extract(w).frames, extract(w).frames)


# ---------------------------------------------------------------- smoothing

def _fm(col):
    x = np.zeros((len(col), 32))
    x[:, 0] = col
    return FeatureMatrix(x)


def test_smoothing_examples():
    assert np.array_equal(smooth(_fm([0.0, 3.0, 0.0])).frames[:, 0], [1.5, 1.0, 1.5])
    assert np.array_equal(smooth(_fm([7.0] * 5)).frames[:, 0], [7.0] * 5)
    assert np.array_equal(smooth(_fm([4.0])).frames[:, 0], [4.0])
    x = np.random.default_rng(1).standard_normal(9)
    ref = [np.mean(x[max(0, i - 1):i + 2]) for i in range(9)]
    assert np.allclose(smooth(_fm(x)).frames[:, 0], ref, atol=1e-12)


# ---------------------------------------------------------------- normalization

def test_normalizer_examples():
    const = np.full((5, 32), 2.5)
    nz = fit_normalizer([const])
    assert np.all(nz.mean == 2.5) and np.all(nz.std == 1e-8)
    nz = fit_normalizer([np.zeros((3, 32)), np.full((3, 32), 2.0)])
    assert np.allclose(nz.mean, 1.0, atol=0) and np.allclose(nz.std, 1.0, atol=0)
    with pytest.raises(EmptyInputError):
        fit_normalizer([])


@pytest.mark.parametrize("seed", range(3))
def test_normalize_properties(seed):
    rng = np.random.default_rng(seed)
    mats = [rng.normal(5, 3, (int(rng.integers(1, 50)), 32)) for _ in range(7)]
    nz = fit_normalizer(mats)
    pooled = np.concatenate(mats)
    assert np.allclose(nz.mean, pooled.mean(axis=0), atol=1e-12)
    assert np.allclose(nz.std, pooled.std(axis=0), atol=1e-12)
    z = np.concatenate([normalize(m, nz) for m in mats])
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9) and np.all(np.abs(z.std(axis=0) - 1) < 1e-6)
    for m in mats:
        assert np.max(np.abs(denormalize(normalize(m, nz), nz) - m)) < 1e-9
    ident = type(nz)(np.zeros(32), np.ones(32))
    assert np.array_equal(normalize(mats[0], ident), mats[0])
    with pytest.raises(ShapeError):
        normalize(np.zeros((3, 31)), nz)


def test_normalizer_records_sources():
    nz = fit_normalizer([np.zeros((2, 32))], ids=["a"])
    assert nz.source_ids == frozenset({"a"})
    assert type(nz).from_dict(nz.to_dict()).source_ids == nz.source_ids


# ---------------------------------------------------------------- cache

def test_cache_roundtrip(tmp_path):
    w = tone(150, 0.5)
    m = extract(w)
    write_features(tmp_path / "m.feat", m)
    r = read_features(tmp_path / "m.feat")
    assert np.array_equal(r.frames, m.frames.astype(np.float32))
    assert r.feature_names == m.feature_names
    cache = FeatureCache(tmp_path / "cache")
    a = cache.get_or_compute(w)
    assert len(list((tmp_path / "cache").glob("*"))) >= 1
    b = cache.get_or_compute(w)
    assert np.array_equal(a.frames, b.frames)
