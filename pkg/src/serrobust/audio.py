"""Mono audio primitives: WAV I/O, level measurement, gain, mixing and
impulse-response convolution.

Every function here is pure: inputs are never modified and a new
:class:`Waveform` is returned.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from math import gcd

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import (AudioFileNotFound, ConfigError, EmptyInputError, MalformedWavError,
                     SampleRateMismatch, SilentInputError,
                     UnsupportedCodecError)

CANONICAL_RATE = 16000

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def _frozen(x):
    a = np.array(x, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono signal with its sample rate.

    ``n_clipped`` counts samples that were clamped to [-1, 1] by the
    operation that produced this waveform.
    """
    samples: np.ndarray
    sample_rate_hz: int = CANONICAL_RATE
    n_clipped: int = 0

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 1:
            raise ValueError(f"expected 1-D samples, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", _frozen(s))
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_seconds(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples, n_clipped: int = 0) -> "Waveform":
        return Waveform(samples, self.sample_rate_hz, n_clipped)


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    taps: np.ndarray
    sample_rate_hz: int = CANONICAL_RATE
    ir_id: str = field(default="")

    def __post_init__(self):
        t = np.asarray(self.taps, dtype=np.float64)
        if t.ndim != 1 or t.size == 0:
            raise EmptyInputError("impulse response must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(t)) or float(np.sum(t * t)) <= 0.0:
            raise SilentInputError("impulse response must have positive finite energy")
        object.__setattr__(self, "taps", _frozen(t))

    @classmethod
    def unit(cls, delay: int = 0, sample_rate_hz: int = CANONICAL_RATE) -> "ImpulseResponse":
        taps = np.zeros(delay + 1)
        taps[delay] = 1.0
        return cls(taps, sample_rate_hz, ir_id=f"delta{delay}")


def _clamp(x: np.ndarray):
    n = int(np.count_nonzero(np.abs(x) > 1.0))
    return np.clip(x, -1.0, 1.0), n


# ---------------------------------------------------------------- WAV I/O

def _parse_riff(data: bytes, path):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError(f"{path}: truncated fmt chunk")
            fmt = body
        elif cid == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise MalformedWavError(f"{path}: missing fmt chunk")
    if payload is None:
        raise MalformedWavError(f"{path}: missing data chunk")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise MalformedWavError(f"{path}: truncated extensible fmt chunk")
        (tag,) = struct.unpack("<H", fmt[24:26])
    if channels < 1 or rate < 1:
        raise MalformedWavError(f"{path}: invalid channel count or sample rate")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise UnsupportedCodecError(
            f"{path}: format tag 0x{tag:04x} with {bits} bits is not PCM16 or float32")
    if block_align != channels * dtype.itemsize:
        raise MalformedWavError(f"{path}: block alignment {block_align} inconsistent with format")
    n = len(payload) // block_align
    frames = np.frombuffer(payload[:n * block_align], dtype=dtype).reshape(n, channels)
    return frames, rate


def read_wav(path, target_rate: int | None = CANONICAL_RATE) -> Waveform:
    """Load a PCM16 or float32 WAV file as a mono waveform.

    Multichannel input is averaged across channels. PCM16 is scaled by
    1/32768. If ``target_rate`` is given and differs from the file rate
    the signal is resampled.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise AudioFileNotFound(f"no such audio file: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    frames, rate = _parse_riff(data, path)
    if frames.shape[0] == 0:
        raise EmptyInputError(f"{path}: no audio frames")
    if frames.dtype.kind == "i":
        x = frames.astype(np.float64) / 32768.0
    else:
        x = frames.astype(np.float64)
    x = x.mean(axis=1) if x.shape[1] > 1 else x[:, 0]
    x = np.nan_to_num(x, nan=0.0, posinf=1.0, neginf=-1.0)
    w = Waveform(x, rate)
    if target_rate is not None and rate != target_rate:
        w = resample(w, target_rate)
    return w


def write_wav(path, w: Waveform, fmt: str = "pcm16") -> None:
    """Write a mono WAV file; ``fmt`` is ``"pcm16"`` or ``"float32"``."""
    path = os.fspath(path)
    if fmt == "pcm16":
        data = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = w.samples.astype(np.float32)
    else:
        raise UnsupportedCodecError(f"cannot write format {fmt!r}")
    scipy.io.wavfile.write(path, w.sample_rate_hz, data)


def resample(w: Waveform, rate: int) -> Waveform:
    if rate == w.sample_rate_hz:
        return w
    g = gcd(rate, w.sample_rate_hz)
    y = scipy.signal.resample_poly(w.samples, rate // g, w.sample_rate_hz // g)
    y, n = _clamp(y)
    return Waveform(y, rate, n)


# ---------------------------------------------------------------- levels

def rms(w: Waveform) -> float:
    if len(w) == 0:
        raise EmptyInputError("rms of an empty waveform")
    return float(np.sqrt(np.mean(w.samples ** 2)))


def db_to_amplitude(gain_db: float) -> float:
    return 10.0 ** (gain_db / 20.0)


def apply_gain_db(w: Waveform, gain_db: float) -> Waveform:
    if not np.isfinite(gain_db):
        raise ValueError(f"gain must be finite, got {gain_db}")
    if gain_db == 0:
        return w.with_samples(w.samples)
    y, n = _clamp(w.samples * db_to_amplitude(gain_db))
    return w.with_samples(y, n)


def fit_noise(noise: Waveform, n: int) -> np.ndarray:
    """Loop or truncate ``noise`` to exactly ``n`` samples."""
    if len(noise) == 0:
        raise EmptyInputError("empty noise waveform")
    return np.resize(noise.samples, n)


def mix_at_nsr(signal: Waveform, noise: Waveform, nsr: float) -> Waveform:
    """Add ``noise`` scaled so that rms(noise)/rms(signal) equals ``nsr``.

    The ratio is on RMS amplitudes and holds exactly before the final
    clamp to [-1, 1].
    """
    if signal.sample_rate_hz != noise.sample_rate_hz:
        raise SampleRateMismatch(
            f"signal at {signal.sample_rate_hz} Hz, noise at {noise.sample_rate_hz} Hz")
    if nsr < 0 or not np.isfinite(nsr):
        raise ConfigError(f"nsr must be non-negative, got {nsr}")
    s_rms = rms(signal)
    if s_rms == 0.0:
        raise SilentInputError("cannot mix at a ratio relative to a silent signal")
    if nsr == 0:
        return signal.with_samples(signal.samples)
    bed = fit_noise(noise, len(signal))
    n_rms = float(np.sqrt(np.mean(bed ** 2)))
    if n_rms == 0.0:
        raise SilentInputError("noise is silent over the signal span")
    alpha = nsr * s_rms / n_rms
    y, n = _clamp(signal.samples + alpha * bed)
    return signal.with_samples(y, n)


# ---------------------------------------------------------------- convolution

def convolve_ir(w: Waveform, ir: ImpulseResponse, normalize: bool = True) -> Waveform:
    """FFT convolution truncated to the input length.

    With ``normalize`` the output is rescaled to the input's peak
    amplitude so loudness statistics stay comparable.
    """
    if w.sample_rate_hz != ir.sample_rate_hz:
        raise SampleRateMismatch(
            f"waveform at {w.sample_rate_hz} Hz, impulse response at {ir.sample_rate_hz} Hz")
    if len(w) == 0:
        return w.with_samples(w.samples)
    y = scipy.signal.fftconvolve(w.samples, ir.taps, mode="full")[:len(w)]
    if normalize:
        peak_in = float(np.max(np.abs(w.samples)))
        peak_out = float(np.max(np.abs(y)))
        if peak_out > 0.0:
            y = y * (peak_in / peak_out)
    y, n = _clamp(y)
    return w.with_samples(y, n)
