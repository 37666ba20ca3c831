"""WSOLA (waveform-similarity overlap-add) time-scale modification."""
from __future__ import annotations

import numpy as np

from .audio import Waveform, _clamp
from .errors import ConfigError

TEMPO_LIMITS = (0.5, 2.0)


def wsola(x: np.ndarray, factor: float, frame: int, hop: int, tolerance: int) -> np.ndarray:
    """Stretch ``x`` to ``round(len(x) / factor)`` samples without changing pitch.

    ``frame`` is the analysis window length, ``hop`` the synthesis hop and
    ``tolerance`` the largest shift (either direction) searched around each
    nominal analysis position.
    """
    n_in = x.shape[0]
    n_out = int(round(n_in / factor))
    if n_out == 0:
        return np.zeros(0)
    window = np.hanning(frame + 1)[:frame]  # periodic Hann: sums to 1 at 50 % overlap
    analysis_hop = hop * factor
    n_frames = int(np.ceil(n_out / hop)) + 1

    # xp[i + tolerance] == x[i]; zeros beyond both ends.
    pad_tail = int(np.ceil(n_frames * analysis_hop)) + frame + 2 * tolerance + hop
    xp = np.concatenate([np.zeros(tolerance), x, np.zeros(pad_tail)])
    sq = np.concatenate([[0.0], np.cumsum(xp * xp)])

    out = np.zeros((n_frames - 1) * hop + frame)
    norm = np.zeros_like(out)
    pos = 0  # chosen analysis start, in x coordinates
    for k in range(n_frames):
        if k > 0:
            natural = pos + hop
            template = xp[natural + tolerance:natural + tolerance + frame]
            nominal = int(round(k * analysis_hop))
            lo = nominal  # == nominal - tolerance in x coordinates, shifted by the pad
            region = xp[lo:lo + 2 * tolerance + frame]
            corr = np.correlate(region, template, mode="valid")
            energy = sq[lo + frame:lo + frame + 2 * tolerance + 1] - sq[lo:lo + 2 * tolerance + 1]
            score = corr / np.sqrt(energy + 1e-12)
            pos = nominal - tolerance + int(np.argmax(score))
            pos = max(pos, -tolerance)
        seg = xp[pos + tolerance:pos + tolerance + frame]
        out[k * hop:k * hop + frame] += window * seg
        norm[k * hop:k * hop + frame] += window
    # Only the first half-frame has an incomplete window sum.
    norm = np.where(norm > 1e-3, norm, 1.0)
    return (out / norm)[:n_out]


def change_tempo(w: Waveform, factor: float, window_s: float = 0.020, hop_s: float = 0.010,
                 seek_s: float = 0.015) -> Waveform:
    """Speed up (factor > 1) or slow down speech, keeping its pitch.

    Duration becomes ``duration / factor``. The seek window is centred on
    the nominal position, so shifts of up to ``seek_s / 2`` are searched.
    """
    lo, hi = TEMPO_LIMITS
    if not (lo <= factor <= hi):
        raise ConfigError(f"tempo factor {factor} outside [{lo}, {hi}]")
    if factor == 1.0:
        return w.with_samples(w.samples)
    sr = w.sample_rate_hz
    frame = int(round(window_s * sr))
    hop = int(round(hop_s * sr))
    tol = int(round(seek_s * sr / 2))
    y, n = _clamp(wsola(w.samples, factor, frame, hop, tol))
    return w.with_samples(y, n)
