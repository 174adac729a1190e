"""Log-mel front-end, autocorrelation f0 tracking and the MELF matrix file format."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import get_window

from .audio import Waveform

LOG_FLOOR = 1e-10
MELF_MAGIC = b"MELF"


class MelfFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    frames: np.ndarray  # (T, B)
    frame_hop_s: float = 0.010
    frame_len_s: float = 0.025
    log_floor: float = LOG_FLOOR

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError("mel frames must be a (T >= 1, B >= 1) matrix")
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_bands(self) -> int:
        return self.frames.shape[1]

    def replace(self, frames) -> "MelSpectrogram":
        return MelSpectrogram(frames, self.frame_hop_s, self.frame_len_s, self.log_floor)


@dataclass(frozen=True, eq=False)
class F0Track:
    f0_hz: np.ndarray
    voiced: np.ndarray
    frame_hop_s: float = 0.010
    frame_len_s: float = 0.025

    def __post_init__(self):
        f0 = np.asarray(self.f0_hz, dtype=np.float64)
        voiced = np.asarray(self.voiced, dtype=bool)
        if f0.shape != voiced.shape or f0.ndim != 1:
            raise ValueError("f0_hz and voiced must be 1-D and equally long")
        if np.any(voiced != (f0 > 0)):
            raise ValueError("voiced[t] must be true exactly where f0_hz[t] > 0")
        object.__setattr__(self, "f0_hz", f0)
        object.__setattr__(self, "voiced", voiced)

    def __len__(self):
        return self.f0_hz.size


def frame_params(sample_rate_hz: int, frame_len_s: float, frame_hop_s: float) -> tuple[int, int]:
    win = int(round(frame_len_s * sample_rate_hz))
    hop = int(round(frame_hop_s * sample_rate_hz))
    if win < 1 or hop < 1:
        raise ValueError("frame length and hop must cover at least one sample")
    return win, hop


def num_frames(n_samples: int, win: int, hop: int) -> int:
    if n_samples < win:
        return 0
    return (n_samples - win) // hop + 1


def frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    n = num_frames(x.size, win, hop)
    if n == 0:
        raise ValueError(f"signal of {x.size} samples is shorter than one {win}-sample frame")
    return np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(bands: int, sample_rate_hz: int, fmin: float = 0.0,
                   fmax: float | None = None) -> np.ndarray:
    """`bands + 2` HTK-mel-spaced edge frequencies; entry k+1 is band k's center."""
    fmax = sample_rate_hz / 2 if fmax is None else fmax
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), bands + 2))


def mel_centers(bands: int, sample_rate_hz: int) -> np.ndarray:
    return mel_band_edges(bands, sample_rate_hz)[1:-1]


def mel_filterbank(bands: int, n_fft: int, sample_rate_hz: int) -> np.ndarray:
    """Triangular filters with unit peak, shape (bands, n_fft // 2 + 1)."""
    edges = mel_band_edges(bands, sample_rate_hz)
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate_hz)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def log_mel(w: Waveform, bands: int = 40, frame_len_s: float = 0.025,
            frame_hop_s: float = 0.010, log_floor: float = LOG_FLOOR) -> MelSpectrogram:
    """Hann-windowed magnitude STFT -> HTK triangular mel filterbank -> ln(x + floor)."""
    if bands < 1:
        raise ValueError("bands must be >= 1")
    win, hop = frame_params(w.sample_rate_hz, frame_len_s, frame_hop_s)
    frames = frame_signal(w.samples, win, hop)
    n_fft = next_pow2(win)
    window = get_window("hann", win)
    mag = np.abs(np.fft.rfft(frames * window, n=n_fft, axis=1))
    fb = mel_filterbank(bands, n_fft, w.sample_rate_hz)
    mel = mag @ fb.T
    return MelSpectrogram(np.log(mel + log_floor), frame_hop_s, frame_len_s, log_floor)


def _nccf(frames: np.ndarray, min_lag: int, max_lag: int) -> np.ndarray:
    """Normalized autocorrelation r[t, lag] for lags in [min_lag, max_lag]."""
    n = frames.shape[1]
    n_fft = next_pow2(2 * n)
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), n=n_fft, axis=1)[:, : max_lag + 1]
    energy = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    head = energy[:, n - lags]  # sum of x[0 : n - lag]^2
    tail = energy[:, [n]] - energy[:, lags]  # sum of x[lag : n]^2
    denom = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 1e-12, acf / np.where(denom > 0, denom, 1.0), 0.0)
    r[:, :min_lag] = 0.0
    return r


def estimate_f0(w: Waveform, fmin_hz: float = 50.0, fmax_hz: float = 500.0,
                frame_len_s: float = 0.025, frame_hop_s: float = 0.010,
                voicing_threshold: float = 0.45, octave_tolerance: float = 0.9) -> F0Track:
    """Per-frame normalized-autocorrelation pitch with parabolic lag refinement.

    The shortest lag whose local peak reaches `octave_tolerance` times the
    strongest peak wins, which suppresses octave-down errors on periodic input.
    """
    rate = w.sample_rate_hz
    if not 0 < fmin_hz < fmax_hz < rate / 2:
        raise ValueError("require 0 < fmin < fmax < Nyquist")
    win, hop = frame_params(rate, frame_len_s, frame_hop_s)
    frames = frame_signal(w.samples, win, hop)
    min_lag = max(2, int(np.floor(rate / fmax_hz)))
    max_lag = min(win - 2, int(np.ceil(rate / fmin_hz)))
    r = _nccf(frames, min_lag, max_lag + 1)

    f0 = np.zeros(frames.shape[0])
    for t in range(frames.shape[0]):
        row = r[t]
        inner = row[min_lag:max_lag + 1]
        best = inner.max() if inner.size else 0.0
        if best < voicing_threshold:
            continue
        lags = np.arange(min_lag, max_lag + 1)
        is_peak = (row[lags] >= row[lags - 1]) & (row[lags] >= row[lags + 1])
        cand = lags[is_peak & (row[lags] >= octave_tolerance * best)]
        lag = int(cand[0]) if cand.size else int(lags[np.argmax(inner)])
        a, b, c = row[lag - 1], row[lag], row[lag + 1]
        curvature = a - 2 * b + c
        shift = 0.5 * (a - c) / curvature if curvature < 0 else 0.0
        freq = rate / (lag + float(np.clip(shift, -0.5, 0.5)))
        if fmin_hz <= freq <= fmax_hz:
            f0[t] = freq
    return F0Track(f0, f0 > 0, frame_hop_s, frame_len_s)


def write_melf(m: MelSpectrogram, path) -> None:
    t, b = m.frames.shape
    with open(path, "wb") as fh:
        fh.write(MELF_MAGIC + struct.pack("<III", t, b, 0))
        fh.write(np.ascontiguousarray(m.frames, dtype="<f4").tobytes())


def read_melf(path, frame_hop_s: float = 0.010, frame_len_s: float = 0.025) -> MelSpectrogram:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != MELF_MAGIC:
        raise MelfFormatError(f"{path}: missing MELF header")
    t, b, _ = struct.unpack("<III", data[4:16])
    if t < 1 or b < 1 or len(data) != 16 + 4 * t * b:
        raise MelfFormatError(f"{path}: header declares {t}x{b} but payload is {len(data) - 16} bytes")
    frames = np.frombuffer(data, dtype="<f4", offset=16).reshape(t, b).astype(np.float64)
    return MelSpectrogram(frames, frame_hop_s, frame_len_s)
