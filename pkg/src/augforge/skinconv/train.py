"""Adam training of the converter on cropped windows, plus new-speaker fine-tuning."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..audio import levels_to_companded
from .model import (Batch, ConverterModel, TrainSample, batch_loss_and_grad, check_sample,
                    decoder_inputs, f0_conditioning)

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    batch_size: int = 8
    crop_len: int = 1024
    history_noise: float = 0.0
    seed: int = 0


@dataclass
class TrainHistory:
    epoch_loss: list = field(default_factory=list)


class _Prepared:
    __slots__ = ("levels", "comp", "u", "f0cond", "speaker")

    def __init__(self, model: ConverterModel, sample: TrainSample):
        cfg = model.config
        self.levels = np.asarray(sample.quantized.levels)
        self.comp = levels_to_companded(self.levels, cfg.quantization_levels)
        self.u = decoder_inputs(self.levels, cfg)
        self.f0cond = f0_conditioning(sample.f0, self.levels.size, cfg)
        self.speaker = sample.speaker_index


def encoder_halo(model: ConverterModel) -> int:
    cfg = model.config
    reach = (cfg.enc_kernel - 1) * sum(cfg.enc_stride ** i for i in range(cfg.enc_layers))
    return reach + 2 * cfg.downsample


def crop_batch(model: ConverterModel, prep: _Prepared, start: int, length: int,
               u: np.ndarray | None = None) -> Batch:
    """Window whose masked losses equal the full-utterance losses on [start, start + length)."""
    cfg = model.config
    n = prep.levels.size
    length = min(length, n - start)
    a = max(0, start - (cfg.receptive_field - 1))
    b = start + length
    d, halo = cfg.downsample, encoder_halo(model)
    e0 = max(0, ((a - halo) // d) * d)
    e1 = min(n, -(-(b + halo) // d) * d)
    u = prep.u if u is None else u
    mask = np.zeros((1, b - a))
    mask[0, start - a:] = 1.0
    return Batch(
        enc_x=prep.comp[None, e0:e1],
        dec_offset=a - e0,
        u=u[None, a:b],
        targets=prep.levels[None, a:b],
        f0cond=prep.f0cond[None, a:b],
        speakers=np.array([prep.speaker]),
        mask=mask,
    )


class Adam:
    def __init__(self, params: dict, cfg: TrainConfig, names=None):
        self.cfg = cfg
        self.names = list(params) if names is None else list(names)
        self.m = {k: np.zeros_like(params[k]) for k in self.names}
        self.v = {k: np.zeros_like(params[k]) for k in self.names}
        self.t = 0

    def step(self, params: dict, grads: dict, row_mask: dict | None = None):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k in self.names:
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            update = c.learning_rate * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)
            if row_mask is not None and k in row_mask:
                update = update * row_mask[k]
            params[k] -= update


def clip_gradients(grads: dict, names, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in names)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for k in names:
            grads[k] *= scale
    return norm


def _noisy_inputs(u: np.ndarray, sigma: float, q: int, rng) -> np.ndarray:
    if sigma <= 0:
        return u
    jitter = np.rint(rng.normal(0.0, sigma, u.shape)).astype(u.dtype)
    return np.clip(u + jitter, 0, q - 1)


def run_epochs(model: ConverterModel, corpus, cfg: TrainConfig, trainable=None,
               row_mask: dict | None = None, history: TrainHistory | None = None,
               callback=None) -> TrainHistory:
    """Shared optimization loop; `trainable` restricts which parameters move."""
    if not corpus:
        raise ValueError("training corpus is empty")
    n_spk = model.params["Z"].shape[0]
    for s in corpus:
        check_sample(model.config, s, n_spk)
    history = TrainHistory() if history is None else history
    names = list(model.params) if trainable is None else list(trainable)
    opt = Adam(model.params, cfg, names)
    rng = np.random.default_rng(cfg.seed)
    prepared = [_Prepared(model, s) for s in corpus]
    q = model.config.quantization_levels
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(prepared))
        epoch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo: lo + cfg.batch_size]
            total = {k: np.zeros_like(model.params[k]) for k in names}
            for i in idx:
                prep = prepared[i]
                n = prep.levels.size
                start = int(rng.integers(0, max(0, n - cfg.crop_len) + 1))
                u = _noisy_inputs(prep.u, cfg.history_noise, q, rng)
                batch = crop_batch(model, prep, start, cfg.crop_len, u)
                value, grads = batch_loss_and_grad(model, batch)
                if not np.isfinite(value):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, sample {int(i)}")
                epoch_losses.append(value)
                for k in names:
                    total[k] += grads[k]
            for k in names:
                total[k] /= len(idx)
            clip_gradients(total, names, cfg.clip_norm)
            opt.step(model.params, total, row_mask)
        mean = float(np.mean(epoch_losses))
        history.epoch_loss.append(mean)
        log.info("epoch %d loss %.4f", epoch, mean)
        if callback is not None:
            callback(epoch, mean)
    return history


def train(model: ConverterModel, corpus, cfg: TrainConfig | None = None,
          callback=None) -> tuple[ConverterModel, TrainHistory]:
    """Minimize the summed teacher-forced cross-entropy; returns a new model."""
    cfg = TrainConfig() if cfg is None else cfg
    trained = model.copy()
    history = run_epochs(trained, list(corpus), cfg, callback=callback)
    return trained, history


def finetune_new_speaker(model: ConverterModel, new_corpus, cfg: TrainConfig | None = None,
                         speaker_id=None, full: bool = False, callback=None):
    """Append a fresh speaker row and fit it on (QuantizedWaveform, F0Track) pairs.

    Only the new row moves unless `full` is set.
    """
    cfg = TrainConfig() if cfg is None else cfg
    new_corpus = list(new_corpus)
    if not new_corpus:
        raise ValueError("fine-tuning corpus is empty")
    tuned = model.copy()
    if speaker_id is None:
        k = len(tuned.speaker_ids)
        while f"new{k}" in tuned.speaker_ids:
            k += 1
        speaker_id = f"new{k}"
    if speaker_id in tuned.speaker_ids:
        raise ValueError(f"speaker {speaker_id!r} already exists")
    rng = np.random.default_rng(cfg.seed)
    row = rng.normal(0.0, tuned.config.z_init_std, (1, tuned.config.speaker_dim))
    tuned.params["Z"] = np.concatenate([tuned.params["Z"], row], axis=0)
    tuned.speaker_ids.append(speaker_id)
    index = len(tuned.speaker_ids) - 1
    samples = [TrainSample(qw, f0, index) for qw, f0 in new_corpus]
    if full:
        history = run_epochs(tuned, samples, cfg, callback=callback)
    else:
        mask = np.zeros_like(tuned.params["Z"])
        mask[index] = 1.0
        history = run_epochs(tuned, samples, cfg, trainable=["Z"], row_mask={"Z": mask},
                             callback=callback)
    return tuned, speaker_id, history
