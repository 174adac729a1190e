"""Mono waveform container, 16-bit PCM WAV I/O, mu-law companding and tone synthesis."""
from __future__ import annotations

import warnings
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CANONICAL_RATE = 16000
PCM_SCALE = 32768


class AudioFormatError(ValueError):
    """Raised for WAV files this package does not read."""


class AliasingWarning(UserWarning):
    """A requested harmonic lies at or above Nyquist and was dropped."""


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = CANONICAL_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if np.max(np.abs(samples)) > 1.0:
            raise ValueError("waveform samples must lie in [-1, 1]")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample rate must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True, eq=False)
class QuantizedWaveform:
    levels: np.ndarray
    quantization_levels: int = 256
    sample_rate_hz: int = CANONICAL_RATE

    def __post_init__(self):
        q = int(self.quantization_levels)
        if q < 2:
            raise ValueError("quantization_levels must be >= 2")
        levels = np.asarray(self.levels, dtype=np.int64)
        if levels.ndim != 1 or levels.size < 1:
            raise ValueError("levels must be a non-empty 1-D array")
        if levels.min() < 0 or levels.max() > q - 1:
            raise ValueError(f"levels must lie in [0, {q - 1}]")
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "quantization_levels", q)

    def __len__(self):
        return self.levels.size


def read_wav(path, expected_rate: int | None = CANONICAL_RATE) -> Waveform:
    """Read a 16-bit PCM mono WAV file, scaling samples by 1/32768.

    Files at any rate other than `expected_rate` are rejected; pass None to
    accept any rate.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            n_frames = fh.getnframes()
            raw = fh.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: unsupported or corrupt WAV ({exc})") from exc
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono, found {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM, found {8 * width}-bit")
    if len(raw) != 2 * n_frames:
        raise AudioFormatError(
            f"{path}: truncated data chunk ({len(raw) // 2} of {n_frames} frames)"
        )
    if n_frames == 0:
        raise AudioFormatError(f"{path}: no audio frames")
    if expected_rate is not None and rate != expected_rate:
        raise AudioFormatError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return Waveform(pcm / PCM_SCALE, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.rint(clipped * PCM_SCALE), -PCM_SCALE, PCM_SCALE - 1).astype("<i2")


def write_wav(w: Waveform, path) -> None:
    """Write `w` as 16-bit PCM mono. Clamp, scale by 32768, round, saturate at 32767."""
    pcm = to_pcm16(w.samples)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate_hz)
        fh.writeframes(pcm.tobytes())


def mu_law_compand(x: np.ndarray, q: int = 256) -> np.ndarray:
    mu = q - 1
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    return np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)


def mu_law_expand(y: np.ndarray, q: int = 256) -> np.ndarray:
    mu = q - 1
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * np.expm1(np.abs(y) * np.log1p(mu)) / mu


def levels_to_companded(levels: np.ndarray, q: int = 256) -> np.ndarray:
    return 2.0 * np.asarray(levels, dtype=np.float64) / (q - 1) - 1.0


def encode_levels(x: np.ndarray, q: int = 256) -> np.ndarray:
    y = mu_law_compand(x, q)
    return np.clip(np.rint((y + 1.0) * 0.5 * (q - 1)), 0, q - 1).astype(np.int64)


def decode_levels(levels: np.ndarray, q: int = 256) -> np.ndarray:
    return mu_law_expand(levels_to_companded(levels, q), q)


def silence_level(q: int = 256) -> int:
    return int(encode_levels(np.zeros(1), q)[0])


def mu_law_encode(w: Waveform, q: int = 256) -> QuantizedWaveform:
    if q < 2:
        raise ValueError("Q must be >= 2")
    return QuantizedWaveform(encode_levels(w.samples, q), q, w.sample_rate_hz)


def mu_law_decode(qw: QuantizedWaveform) -> Waveform:
    x = decode_levels(qw.levels, qw.quantization_levels)
    return Waveform(np.clip(x, -1.0, 1.0), qw.sample_rate_hz)


def synth_tone(freq_hz: float, duration_s: float, sample_rate_hz: int = CANONICAL_RATE,
               timbre=(1.0,), phase: float = 0.0) -> Waveform:
    """Harmonic tone: sum over k of timbre[k-1] * sin(2 pi k f t + k phase), peak 0.9.

    Harmonics at or above Nyquist are dropped with an AliasingWarning.
    """
    nyquist = sample_rate_hz / 2
    if not 0 < freq_hz < nyquist:
        raise ValueError(f"freq_hz must lie in (0, {nyquist}), got {freq_hz}")
    n = int(round(duration_s * sample_rate_hz))
    if n < 1:
        raise ValueError("duration too short for a single sample")
    t = np.arange(n) / sample_rate_hz
    out = np.zeros(n)
    dropped = []
    for k, amp in enumerate(timbre, start=1):
        if k * freq_hz >= nyquist:
            dropped.append(k)
            continue
        out += amp * np.sin(2 * np.pi * k * freq_hz * t + k * phase)
    if dropped:
        warnings.warn(f"dropped aliasing harmonics {dropped} of {freq_hz} Hz", AliasingWarning,
                      stacklevel=2)
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.9 / peak
    return Waveform(out, sample_rate_hz)
