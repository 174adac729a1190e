"""SpecAugment (time warp, frequency and time masks) and its batch-probability variant."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import MelSpectrogram


@dataclass(frozen=True)
class SpecAugmentPolicy:
    """Defaults are the LibriSpeech-double (LD) policy."""
    warp_w: int = 80
    freq_mask_f: int = 27
    n_freq_masks: int = 2
    time_mask_t: int = 100
    n_time_masks: int = 2
    time_mask_ratio_cap: float = 1.0
    mask_value: float | str = "mean"

    def __post_init__(self):
        for name in ("warp_w", "freq_mask_f", "n_freq_masks", "time_mask_t", "n_time_masks"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.time_mask_ratio_cap <= 1.0:
            raise ValueError("time_mask_ratio_cap must lie in [0, 1]")
        if isinstance(self.mask_value, str) and self.mask_value not in ("mean", "zero"):
            raise ValueError("mask_value must be a number, 'mean' or 'zero'")

    def max_time_width(self, n_frames: int) -> int:
        return min(self.time_mask_t, int(np.floor(self.time_mask_ratio_cap * n_frames)))

    def mask_budget(self, n_frames: int, n_bands: int) -> int:
        """Upper bound on entries apply_masks can change."""
        return (self.n_freq_masks * self.freq_mask_f * n_frames
                + self.n_time_masks * self.time_mask_t * n_bands)


@dataclass(frozen=True)
class BatchAugmentor:
    policy: SpecAugmentPolicy = SpecAugmentPolicy()
    apply_prob: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ValueError("apply_prob must lie in [0, 1]")

    def batch_rng(self, batch_index: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.rng_seed, batch_index]))


def time_warp(m: MelSpectrogram, w: int, rng: np.random.Generator) -> MelSpectrogram:
    """Move a random anchor frame by up to `w` frames, re-timing both sides linearly."""
    frames = m.frames
    n = frames.shape[0]
    if w == 0 or n <= 2 * w:
        return m
    anchor = int(rng.integers(w, n - w))
    dest = anchor + int(rng.integers(-w, w + 1))
    out_idx = np.arange(n, dtype=np.float64)
    src = np.empty(n)
    left = out_idx <= dest
    src[left] = out_idx[left] * (anchor / dest) if dest > 0 else 0.0
    right = ~left
    if np.any(right):
        src[right] = anchor + (out_idx[right] - dest) * ((n - 1 - anchor) / (n - 1 - dest))
    src = np.clip(src, 0.0, n - 1)
    lo = np.minimum(np.floor(src).astype(int), n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = (src - lo)[:, None]
    base = frames[lo]
    # base + frac * delta keeps constant runs bit-exact
    return m.replace(base + frac * (frames[hi] - base))


def _mask_fill(m: MelSpectrogram, policy: SpecAugmentPolicy) -> float:
    if policy.mask_value == "mean":
        return float(m.frames.mean())
    if policy.mask_value == "zero":
        return 0.0
    return float(policy.mask_value)


def apply_masks(m: MelSpectrogram, policy: SpecAugmentPolicy,
                rng: np.random.Generator) -> MelSpectrogram:
    n_frames, n_bands = m.frames.shape
    if policy.freq_mask_f > n_bands:
        raise ValueError(f"freq mask width {policy.freq_mask_f} exceeds {n_bands} bands")
    fill = _mask_fill(m, policy)
    out = m.frames.copy()
    for _ in range(policy.n_freq_masks):
        f = int(rng.integers(0, policy.freq_mask_f + 1))
        f0 = int(rng.integers(0, n_bands - f + 1))
        out[:, f0: f0 + f] = fill
    t_max = policy.max_time_width(n_frames)
    for _ in range(policy.n_time_masks):
        t = int(rng.integers(0, t_max + 1))
        t0 = int(rng.integers(0, n_frames - t + 1))
        out[t0: t0 + t, :] = fill
    return m.replace(out)


def spec_augment(m: MelSpectrogram, policy: SpecAugmentPolicy,
                 rng: np.random.Generator) -> MelSpectrogram:
    return apply_masks(time_warp(m, policy.warp_w, rng), policy, rng)


def _batch_draw(aug: BatchAugmentor, batch_index: int):
    rng = aug.batch_rng(batch_index)
    return bool(rng.random() < aug.apply_prob), rng


def batch_is_augmented(aug: BatchAugmentor, batch_index: int) -> bool:
    return _batch_draw(aug, batch_index)[0]


def augment_batch(batch, aug: BatchAugmentor, batch_index: int = 0) -> list:
    """One Bernoulli(p) draw decides whether the whole batch is augmented.

    Each spectrogram then gets a time warp and masks with its own draws.
    Batches that lose the draw come back as the very same objects.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("batch must be non-empty")
    hit, rng = _batch_draw(aug, batch_index)
    if not hit:
        return batch
    return [spec_augment(m, aug.policy, rng) for m in batch]
