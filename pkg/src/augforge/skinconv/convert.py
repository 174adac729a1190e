"""Autoregressive voice conversion with the trained converter."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..audio import Waveform, decode_levels, encode_levels, levels_to_companded, silence_level
from ..features import estimate_f0
from .model import ConverterModel, _sigmoid, encoder_forward, f0_conditioning, upsample_latent


@dataclass
class ConversionResult:
    waveform: Waveform
    levels: np.ndarray
    path_cross_entropy: float  # mean -log p of the emitted levels along the decoded path


def _f0_of(model: ConverterModel, w: Waveform):
    cfg = model.config
    return estimate_f0(w, cfg.f0_fmin_hz, cfg.f0_fmax_hz, cfg.f0_frame_len_s, cfg.f0_frame_hop_s)


def decode(model: ConverterModel, enc_x: np.ndarray, f0cond: np.ndarray, speakers: np.ndarray,
           temperature: float = 0.0, rng=None, chunk: int = 512):
    """Generate levels for a batch of equal-length inputs.

    enc_x: (B, n) companded source audio; f0cond: (B, n, F) from f0_conditioning; speakers: (B,)
    row indices into Z.  temperature 0 means greedy argmax.
    """
    cfg, p = model.config, model.params
    bsz, n = enc_x.shape
    hd, q = cfg.dec_hidden, cfg.quantization_levels
    latent, _ = encoder_forward(p, enc_x, cfg)
    zrows = p["Z"][speakers]
    n_layers = len(cfg.dilations)
    w_hist = [p[f"dec{l}.Wx"][: 2 * hd] for l in range(n_layers)]
    w_cond = [p[f"dec{l}.Wx"][2 * hd:] for l in range(n_layers)]
    zb = [zrows @ p[f"dec{l}.Vz"] + p[f"dec{l}.b"] for l in range(n_layers)]
    w_out = [p[f"dec{l}.Wo"] for l in range(n_layers)]
    b_out = [p[f"dec{l}.bo"] for l in range(n_layers)]
    bufs = [np.zeros((bsz, d, hd)) for d in cfg.dilations]
    embed = p["embed"]
    out_w, out_b = p["out.W"], p["out.b"]
    rows = np.arange(bsz)
    levels = np.empty((bsz, n), dtype=np.int64)
    nll = np.zeros(bsz)
    silence = silence_level(q)
    last = n_layers - 1
    proj = None
    for t in range(n):
        if t % chunk == 0:
            stop = min(n, t + chunk)
            lat = upsample_latent(latent, cfg.downsample, t, stop - t)
            cond = np.concatenate([lat, f0cond[:, t:stop]], axis=-1)
            proj = [cond @ w_cond[l] + zb[l][:, None, :] for l in range(n_layers)]
        u = levels[:, t - cfg.shift] if t >= cfg.shift else np.full(bsz, silence)
        h = embed[u]
        skip = 0.0
        for l, d in enumerate(cfg.dilations):
            slot = t % d
            a = np.concatenate([bufs[l][:, slot], h], axis=1) @ w_hist[l] + proj[l][:, t % chunk]
            g = np.tanh(a[:, :hd]) * _sigmoid(a[:, hd:])
            o = g @ w_out[l] + b_out[l]
            bufs[l][:, slot] = h
            if l == last:
                skip = skip + o
            else:
                h = h + o[:, :hd]
                skip = skip + o[:, hd:]
        logits = np.tanh(skip) @ out_w + out_b
        logits = logits - logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        if temperature > 0:
            probs = np.exp(logp / temperature)
            probs /= probs.sum(axis=1, keepdims=True)
            r = rng.random(bsz)[:, None]
            choice = np.minimum((probs.cumsum(axis=1) < r).sum(axis=1), q - 1)
        else:
            choice = logp.argmax(axis=1)
        levels[:, t] = choice
        nll -= logp[rows, choice]
    return levels, nll / n


def convert_batch(model: ConverterModel, waveforms, target_speakers, temperature: float = 0.0,
                  seed: int = 0) -> list[ConversionResult]:
    """Convert equal-length waveforms, each into its own target voice."""
    cfg = model.config
    waveforms = list(waveforms)
    targets = list(target_speakers)
    if len(waveforms) != len(targets):
        raise ValueError("one target speaker per waveform")
    if not waveforms:
        return []
    lengths = {len(w) for w in waveforms}
    if len(lengths) != 1:
        raise ValueError("convert_batch needs equal-length waveforms")
    table = model.speaker_table
    speakers = np.array([table.index(s) for s in targets])
    for w in waveforms:
        if w.sample_rate_hz != cfg.sample_rate_hz:
            raise ValueError(f"model expects {cfg.sample_rate_hz} Hz audio, got {w.sample_rate_hz}")
    n = lengths.pop()
    q = cfg.quantization_levels
    enc_levels = np.stack([encode_levels(w.samples, q) for w in waveforms])
    f0cond = np.stack([f0_conditioning(_f0_of(model, w), n, cfg) for w in waveforms])
    rng = np.random.default_rng(seed)
    levels, nll = decode(model, levels_to_companded(enc_levels, q), f0cond, speakers,
                         temperature, rng)
    results = []
    for row, ce in zip(levels, nll):
        x = np.clip(decode_levels(row, q), -1.0, 1.0)
        results.append(ConversionResult(Waveform(x, cfg.sample_rate_hz), row, float(ce)))
    return results


def convert(model: ConverterModel, w: Waveform, target_speaker, temperature: float = 0.0,
            seed: int = 0) -> Waveform:
    """Re-voice `w` as `target_speaker`; output has the input's length."""
    return convert_batch(model, [w], [target_speaker], temperature, seed)[0].waveform
