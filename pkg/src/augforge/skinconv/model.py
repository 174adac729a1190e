"""Conditioned autoencoder: strided-conv content encoder + causal dilated decoder.

All parameters live in one ordered dict of float64 arrays; forward and
backward passes are written out by hand so gradients can be checked against
finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..audio import QuantizedWaveform, levels_to_companded, mu_law_encode, silence_level
from ..features import F0Track, estimate_f0, frame_params, num_frames

F0_REF_HZ = 150.0


@dataclass(frozen=True)
class ConverterConfig:
    quantization_levels: int = 256
    speaker_dim: int = 32
    enc_layers: int = 3
    enc_kernel: int = 8
    enc_stride: int = 4
    enc_hidden: int = 64
    latent_channels: int = 4
    dec_hidden: int = 64
    dilations: tuple = (1, 2, 4, 8, 16, 32, 64, 128)
    shift: int = 1
    sample_rate_hz: int = 16000
    f0_frame_len_s: float = 0.025
    f0_frame_hop_s: float = 0.010
    f0_fmin_hz: float = 50.0
    f0_fmax_hz: float = 500.0
    f0_phase: bool = True
    z_init_std: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.quantization_levels < 2:
            raise ValueError("quantization_levels must be >= 2")
        if self.shift < 1:
            raise ValueError("shift must be >= 1 for a causal decoder")
        if not self.dilations or min(self.dilations) < 1:
            raise ValueError("decoder needs at least one layer with positive dilation")
        if self.receptive_field < 2:
            raise ValueError("decoder receptive field must be >= 2")
        if self.enc_kernel < self.enc_stride:
            raise ValueError("encoder kernel must be at least its stride")

    @property
    def downsample(self) -> int:
        return self.enc_stride ** self.enc_layers

    @property
    def receptive_field(self) -> int:
        return 1 + sum(self.dilations)

    @property
    def f0_channels(self) -> int:
        return 4 if self.f0_phase else 2

    @property
    def cond_channels(self) -> int:
        return self.latent_channels + self.f0_channels

    def f0_frames(self) -> tuple[int, int]:
        return frame_params(self.sample_rate_hz, self.f0_frame_len_s, self.f0_frame_hop_s)


@dataclass(frozen=True)
class SpeakerTable:
    embeddings: np.ndarray
    speaker_ids: tuple

    def __post_init__(self):
        if len(self.speaker_ids) < 1:
            raise ValueError("speaker table needs at least one speaker")
        if len(set(self.speaker_ids)) != len(self.speaker_ids):
            raise ValueError("speaker ids must be unique")
        if self.embeddings.shape[0] != len(self.speaker_ids):
            raise ValueError("one embedding row per speaker id")
        if not np.all(np.isfinite(self.embeddings)):
            raise ValueError("speaker embeddings must be finite")

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def index(self, speaker_id) -> int:
        try:
            return self.speaker_ids.index(speaker_id)
        except ValueError:
            raise KeyError(f"unknown speaker {speaker_id!r}; known speakers: "
                           f"{', '.join(map(str, self.speaker_ids))}") from None


@dataclass(eq=False)
class ConverterModel:
    config: ConverterConfig
    params: dict
    speaker_ids: list = field(default_factory=list)

    @property
    def speaker_table(self) -> SpeakerTable:
        return SpeakerTable(self.params["Z"], tuple(self.speaker_ids))

    def copy(self) -> "ConverterModel":
        return ConverterModel(self.config, {k: v.copy() for k, v in self.params.items()},
                              list(self.speaker_ids))

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def param_shapes(cfg: ConverterConfig, n_speakers: int) -> dict:
    """Parameter names and shapes in checkpoint declaration order."""
    shapes = {}
    cin = 1
    for i in range(cfg.enc_layers):
        cout = cfg.latent_channels if i == cfg.enc_layers - 1 else cfg.enc_hidden
        shapes[f"enc{i}.W"] = (cfg.enc_kernel * cin, cout)
        shapes[f"enc{i}.b"] = (cout,)
        cin = cout
    h, q = cfg.dec_hidden, cfg.quantization_levels
    shapes["embed"] = (q, h)
    last = len(cfg.dilations) - 1
    for l in range(len(cfg.dilations)):
        shapes[f"dec{l}.Wx"] = (2 * h + cfg.cond_channels, 2 * h)
        shapes[f"dec{l}.Vz"] = (cfg.speaker_dim, 2 * h)
        shapes[f"dec{l}.b"] = (2 * h,)
        # the last layer feeds only the skip path
        shapes[f"dec{l}.Wo"] = (h, h if l == last else 2 * h)
        shapes[f"dec{l}.bo"] = (h if l == last else 2 * h,)
    shapes["out.W"] = (h, q)
    shapes["out.b"] = (q,)
    shapes["Z"] = (n_speakers, cfg.speaker_dim)
    return shapes


def init_model(cfg: ConverterConfig, speaker_ids, seed: int = 0,
               zero_output: bool = True) -> ConverterModel:
    """Random init. With `zero_output` the logits start exactly uniform."""
    speaker_ids = list(speaker_ids)
    if len(set(speaker_ids)) != len(speaker_ids) or not speaker_ids:
        raise ValueError("speaker ids must be unique and non-empty")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg, len(speaker_ids)).items():
        if name == "Z":
            params[name] = rng.normal(0.0, cfg.z_init_std, shape)
        elif name.endswith(".b") or name.endswith(".bo"):
            params[name] = np.zeros(shape)
        elif name == "embed":
            params[name] = rng.normal(0.0, 1.0, shape)
        else:
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape)
    if zero_output:
        params["out.W"][:] = 0.0
        params["out.b"][:] = 0.0
    return ConverterModel(cfg, params, speaker_ids)


@dataclass(frozen=True, eq=False)
class TrainSample:
    quantized: QuantizedWaveform
    f0: F0Track
    speaker_index: int


def check_sample(cfg: ConverterConfig, sample: TrainSample, n_speakers: int | None = None):
    n = len(sample.quantized)
    win, hop = cfg.f0_frames()
    expected = num_frames(n, win, hop)
    if len(sample.f0) != expected:
        raise ValueError(f"f0 track has {len(sample.f0)} frames but {n} samples imply {expected}")
    if sample.quantized.quantization_levels != cfg.quantization_levels:
        raise ValueError("sample quantization does not match the model")
    if n_speakers is not None and not 0 <= sample.speaker_index < n_speakers:
        raise ValueError(f"speaker index {sample.speaker_index} outside table of {n_speakers}")


def prepare_audio(model: ConverterModel, w) -> tuple[QuantizedWaveform, F0Track]:
    """mu-law levels and f0 track of a waveform under the model's settings."""
    cfg = model.config
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise ValueError(f"model expects {cfg.sample_rate_hz} Hz audio, got {w.sample_rate_hz}")
    f0 = estimate_f0(w, cfg.f0_fmin_hz, cfg.f0_fmax_hz, cfg.f0_frame_len_s, cfg.f0_frame_hop_s)
    return mu_law_encode(w, cfg.quantization_levels), f0


def sample_from_waveform(model: ConverterModel, w, speaker_id) -> TrainSample:
    qw, f0 = prepare_audio(model, w)
    return TrainSample(qw, f0, model.speaker_table.index(speaker_id))


def f0_conditioning(track: F0Track, n_samples: int, cfg: ConverterConfig) -> np.ndarray:
    """Per-sample f0 features: normalized log-f0 (linearly upsampled), the unvoiced
    flag and, with `cfg.f0_phase`, sin/cos of the phase accumulated from f0."""
    win, hop = cfg.f0_frames()
    centers = np.arange(len(track)) * hop + win / 2.0
    logf0 = np.where(track.voiced, np.log(np.where(track.voiced, track.f0_hz, 1.0) / F0_REF_HZ), 0.0)
    logf0 = logf0 / np.log(2.0)
    t = np.arange(n_samples)
    nearest = np.clip(np.rint((t - win / 2.0) / hop).astype(int), 0, len(track) - 1)
    out = np.empty((n_samples, cfg.f0_channels))
    out[:, 0] = np.interp(t, centers, logf0)
    unvoiced = ~track.voiced[nearest]
    out[:, 1] = unvoiced.astype(np.float64)
    if cfg.f0_phase:
        # phase stands still through unvoiced stretches
        hz = np.where(unvoiced, 0.0, F0_REF_HZ * np.exp2(out[:, 0]))
        phase = 2.0 * np.pi * np.cumsum(hz) / cfg.sample_rate_hz
        out[:, 2] = np.sin(phase)
        out[:, 3] = np.cos(phase)
    return out


def decoder_inputs(levels: np.ndarray, cfg: ConverterConfig) -> np.ndarray:
    """Teacher-forced inputs: the level `shift` steps back, silence before the start."""
    u = np.empty_like(levels)
    u[..., : cfg.shift] = silence_level(cfg.quantization_levels)
    u[..., cfg.shift:] = levels[..., : -cfg.shift]
    return u


# ---------------------------------------------------------------- encoder

def _conv_geometry(length: int, cfg: ConverterConfig):
    k, s = cfg.enc_kernel, cfg.enc_stride
    out = -(-length // s)
    left = (k - s) // 2
    right = s * (out - 1) + k - length - left
    return out, left, right


def encoder_forward(params, x: np.ndarray, cfg: ConverterConfig):
    """x: (B, L) companded waveform -> latent (B, ceil(L / D), latent_channels)."""
    h = x[:, :, None]
    cache = []
    k, s = cfg.enc_kernel, cfg.enc_stride
    for i in range(cfg.enc_layers):
        length = h.shape[1]
        out, left, right = _conv_geometry(length, cfg)
        hp = np.pad(h, ((0, 0), (left, right), (0, 0)))
        cols = np.lib.stride_tricks.sliding_window_view(hp, k, axis=1)[:, ::s][:, :out]
        cols = cols.transpose(0, 1, 3, 2).reshape(h.shape[0], out, -1)
        y = np.tanh(cols @ params[f"enc{i}.W"] + params[f"enc{i}.b"])
        cache.append((cols, y, length, left, hp.shape[1]))
        h = y
    return h, cache


def _outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum over batch and time of a[..., i] * b[..., j], as one matrix product."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def encoder_backward(params, cache, dlatent, cfg: ConverterConfig, grads):
    k, s = cfg.enc_kernel, cfg.enc_stride
    dy = dlatent
    for i in reversed(range(cfg.enc_layers)):
        cols, y, length, left, padded = cache[i]
        dpre = dy * (1.0 - y * y)
        W = params[f"enc{i}.W"]
        grads[f"enc{i}.W"] += _outer_sum(cols, dpre)
        grads[f"enc{i}.b"] += dpre.sum(axis=(0, 1))
        if i == 0:
            break
        dcols = (dpre @ W.T).reshape(dpre.shape[0], dpre.shape[1], k, -1)
        out = dpre.shape[1]
        dhp = np.zeros((dpre.shape[0], padded, dcols.shape[-1]))
        for j in range(k):
            dhp[:, j: j + s * (out - 1) + 1: s] += dcols[:, :, j]
        dy = dhp[:, left: left + length]


# ---------------------------------------------------------------- decoder

def _shift_time(h: np.ndarray, d: int) -> np.ndarray:
    out = np.zeros_like(h)
    if d < h.shape[1]:
        out[:, d:] = h[:, :-d]
    return out


def _unshift_time(g: np.ndarray, d: int) -> np.ndarray:
    out = np.zeros_like(g)
    if d < g.shape[1]:
        out[:, :-d] = g[:, d:]
    return out


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decoder_forward(params, u: np.ndarray, cond: np.ndarray, zrows: np.ndarray,
                    cfg: ConverterConfig):
    """u: (B, L) input levels; cond: (B, L, C); zrows: (B, d) -> logits (B, L, Q)."""
    hd = cfg.dec_hidden
    h = params["embed"][u]
    skip = 0.0
    cache = []
    last = len(cfg.dilations) - 1
    for l, d in enumerate(cfg.dilations):
        x = np.concatenate([_shift_time(h, d), h, cond], axis=-1)
        a = x @ params[f"dec{l}.Wx"] + (zrows @ params[f"dec{l}.Vz"] + params[f"dec{l}.b"])[:, None, :]
        th = np.tanh(a[..., :hd])
        sg = _sigmoid(a[..., hd:])
        g = th * sg
        o = g @ params[f"dec{l}.Wo"] + params[f"dec{l}.bo"]
        if l == last:
            skip = skip + o
        else:
            h = h + o[..., :hd]
            skip = skip + o[..., hd:]
        cache.append((x, th, sg, g))
    s = np.tanh(skip)
    logits = s @ params["out.W"] + params["out.b"]
    return logits, (cache, s)


def decoder_backward(params, u, zrows, dec_cache, dlogits, cfg: ConverterConfig, grads, z_index):
    hd = cfg.dec_hidden
    cache, s = dec_cache
    grads["out.W"] += _outer_sum(s, dlogits)
    grads["out.b"] += dlogits.sum(axis=(0, 1))
    dskip = (dlogits @ params["out.W"].T) * (1.0 - s * s)
    dh = np.zeros(u.shape + (hd,))
    dcond = 0.0
    last = len(cfg.dilations) - 1
    for l in reversed(range(len(cfg.dilations))):
        d = cfg.dilations[l]
        x, th, sg, g = cache[l]
        do = dskip if l == last else np.concatenate([dh, dskip], axis=-1)
        grads[f"dec{l}.Wo"] += _outer_sum(g, do)
        grads[f"dec{l}.bo"] += do.sum(axis=(0, 1))
        dg = do @ params[f"dec{l}.Wo"].T
        da = np.concatenate([dg * sg * (1.0 - th * th), dg * th * sg * (1.0 - sg)], axis=-1)
        grads[f"dec{l}.Wx"] += _outer_sum(x, da)
        da_t = da.sum(axis=1)
        grads[f"dec{l}.b"] += da_t.sum(axis=0)
        grads[f"dec{l}.Vz"] += zrows.T @ da_t
        np.add.at(grads["Z"], z_index, da_t @ params[f"dec{l}.Vz"].T)
        dx = da @ params[f"dec{l}.Wx"].T
        dh = dh + _unshift_time(dx[..., :hd], d) + dx[..., hd: 2 * hd]
        dcond = dcond + dx[..., 2 * hd:]
    flat = u.reshape(-1)
    np.add.at(grads["embed"], flat, dh.reshape(-1, hd))
    return dcond


# ---------------------------------------------------------------- full model

@dataclass
class Batch:
    """A batch of aligned windows.

    enc_x covers samples [enc_start, enc_start + enc_len) of each utterance
    (enc_start a multiple of the encoder downsampling factor); the decoder
    window starts `dec_offset` samples into that span.  `mask` selects the
    steps whose cross-entropy counts.
    """
    enc_x: np.ndarray
    dec_offset: int
    u: np.ndarray
    targets: np.ndarray
    f0cond: np.ndarray
    speakers: np.ndarray
    mask: np.ndarray


def upsample_latent(latent: np.ndarray, factor: int, start: int, length: int) -> np.ndarray:
    """Nearest (repeat) upsampling, then the window [start, start + length)."""
    first = start // factor
    last = -(-(start + length) // factor)
    up = np.repeat(latent[:, first:last], factor, axis=1)
    off = start - first * factor
    return up[:, off: off + length]


def forward(model: ConverterModel, batch: Batch):
    cfg, p = model.config, model.params
    latent, enc_cache = encoder_forward(p, batch.enc_x, cfg)
    length = batch.u.shape[1]
    lat = upsample_latent(latent, cfg.downsample, batch.dec_offset, length)
    cond = np.concatenate([lat, batch.f0cond], axis=-1)
    zrows = p["Z"][batch.speakers]
    logits, dec_cache = decoder_forward(p, batch.u, cond, zrows, cfg)
    return logits, (latent.shape, enc_cache, zrows, dec_cache)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def step_losses(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    logp = log_softmax(logits)
    return -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]


def batch_loss_and_grad(model: ConverterModel, batch: Batch, need_grad: bool = True):
    """Masked mean cross-entropy over the batch and, optionally, its gradient."""
    cfg, p = model.config, model.params
    logits, (lat_shape, enc_cache, zrows, dec_cache) = forward(model, batch)
    logp = log_softmax(logits)
    ce = -np.take_along_axis(logp, batch.targets[..., None], axis=-1)[..., 0]
    count = batch.mask.sum()
    loss = float((ce * batch.mask).sum() / count)
    if not need_grad:
        return loss, None
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, batch.targets[..., None],
                      np.take_along_axis(dlogits, batch.targets[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= (batch.mask / count)[..., None]
    dcond = decoder_backward(p, batch.u, zrows, dec_cache, dlogits, cfg, grads, batch.speakers)
    dlat_win = dcond[..., : cfg.latent_channels]
    factor = cfg.downsample
    dlat = np.zeros(lat_shape)
    first = batch.dec_offset // factor
    pad_front = batch.dec_offset - first * factor
    length = dlat_win.shape[1]
    n_frames = -(-(pad_front + length) // factor)
    buf = np.zeros((dlat_win.shape[0], n_frames * factor, dlat_win.shape[2]))
    buf[:, pad_front: pad_front + length] = dlat_win
    dlat[:, first: first + n_frames] += buf.reshape(buf.shape[0], n_frames, factor, -1).sum(axis=2)
    encoder_backward(p, enc_cache, dlat, cfg, grads)
    return loss, grads


def full_batch(model: ConverterModel, samples) -> Batch:
    """Whole-utterance batch; all samples must share one length."""
    cfg = model.config
    lengths = {len(s.quantized) for s in samples}
    if len(lengths) != 1:
        raise ValueError("full_batch needs equal-length samples")
    n_spk = model.params["Z"].shape[0]
    for s in samples:
        check_sample(cfg, s, n_spk)
    levels = np.stack([s.quantized.levels for s in samples])
    n = levels.shape[1]
    return Batch(
        enc_x=levels_to_companded(levels, cfg.quantization_levels),
        dec_offset=0,
        u=decoder_inputs(levels, cfg),
        targets=levels,
        f0cond=np.stack([f0_conditioning(s.f0, n, cfg) for s in samples]),
        speakers=np.array([s.speaker_index for s in samples]),
        mask=np.ones(levels.shape),
    )


def loss(model: ConverterModel, sample: TrainSample) -> float:
    """Mean per-step cross-entropy of the teacher-forced decoder on one utterance."""
    value, _ = batch_loss_and_grad(model, full_batch(model, [sample]), need_grad=False)
    return value


def loss_gradient(model: ConverterModel, sample: TrainSample) -> tuple[float, dict]:
    return batch_loss_and_grad(model, full_batch(model, [sample]), need_grad=True)


def corpus_loss(model: ConverterModel, corpus) -> float:
    """Mean of per-utterance losses (each utterance weighted equally)."""
    values = np.array([loss(model, s) for s in corpus])
    return float(np.mean(values))
