"""Synthetic multi-speaker corpus: harmonic tones whose timbre identifies the speaker."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, synth_tone
from .features import log_mel

# converter and training settings the fixture experiments are tuned for
FIXTURE_CONVERTER = dict(enc_hidden=32, dec_hidden=32, latent_channels=4)
FIXTURE_TRAINING = dict(epochs=200, batch_size=1, crop_len=1024)

# relative harmonic amplitudes per synthetic voice
TIMBRES = {
    "spk_a": (1.0, 0.1),
    "spk_b": (1.0, 0.8, 0.65, 0.5, 0.4, 0.3),
    "spk_c": (1.0, 0.0, 0.6, 0.0, 0.35),
}


@dataclass(frozen=True)
class FixtureUtterance:
    utt_id: str
    speaker_id: str
    f0_hz: float
    waveform: Waveform


def make_fixture(speakers=("spk_a", "spk_b"), n_per_speaker: int = 20, duration_s: float = 1.0,
                 f0_range=(110.0, 220.0), seed: int = 0, sample_rate_hz: int = 16000):
    """Utterances are steady tones; pitch is drawn independently of the speaker."""
    rng = np.random.default_rng(seed)
    out = []
    for spk in speakers:
        timbre = TIMBRES[spk]
        for k in range(n_per_speaker):
            f0 = float(rng.uniform(*f0_range))
            phase = float(rng.uniform(0, 2 * np.pi))
            w = synth_tone(f0, duration_s, sample_rate_hz, timbre, phase=phase)
            out.append(FixtureUtterance(f"{spk}_{k:03d}", spk, f0, w))
    return out


def fixture_samples(model, utterances):
    """TrainSamples for a model whose speaker ids cover the fixture speakers."""
    from .skinconv.model import sample_from_waveform

    return [sample_from_waveform(model, u.waveform, u.speaker_id) for u in utterances]


def mel_statistics(w: Waveform) -> np.ndarray:
    """Band-wise mean log-mel with the overall level removed."""
    stats = log_mel(w).frames.mean(axis=0)
    return stats - stats.mean()


class CentroidProbe:
    """Nearest-centroid speaker classifier over `mel_statistics`."""

    def __init__(self, labelled):
        groups = {}
        for spk, w in labelled:
            groups.setdefault(spk, []).append(mel_statistics(w))
        self.labels = sorted(groups)
        self.centroids = np.stack([np.mean(groups[s], axis=0) for s in self.labels])

    def classify(self, w: Waveform):
        d = np.linalg.norm(self.centroids - mel_statistics(w)[None, :], axis=1)
        return self.labels[int(np.argmin(d))]


_WORDS = ("the", "tone", "rises", "falls", "a", "quiet", "voice", "sings", "low", "high",
          "note", "again", "slowly", "bright", "dark", "sound")
_WORDS_FR = ("le", "ton", "monte", "descend", "une", "douce", "voix", "chante", "bas", "haut",
             "note", "encore", "lentement", "clair", "sombre", "son")


def _sentence(rng, vocab) -> tuple[str, list]:
    idx = list(rng.integers(0, len(_WORDS), int(rng.integers(3, 8))))
    return " ".join(vocab[i] for i in idx) + ".", idx


def write_fixture_corpus(out_dir, n_per_speaker: int = 20, n_test_per_speaker: int = 5,
                         duration_s: float = 1.0, seed: int = 0,
                         train_speakers=("spk_a", "spk_b"), test_speakers=("spk_c",)):
    """Write wavs plus train.tsv / test.tsv manifests; test voices are disjoint from train."""
    from .audio import write_wav
    from .corpus import CorpusManifest, UtteranceRecord, write_manifest

    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed + 1)
    paths = []
    for name, speakers, n, s in (("train", train_speakers, n_per_speaker, seed),
                                 ("test", test_speakers, n_test_per_speaker, seed + 1000)):
        records = []
        for u in make_fixture(speakers, n, duration_s, seed=s):
            wav = audio_dir / f"{u.utt_id}.wav"
            write_wav(u.waveform, wav)
            en, idx = _sentence(rng, _WORDS)
            fr = " ".join(_WORDS_FR[i] for i in idx) + "."
            records.append(UtteranceRecord(u.utt_id, str(wav.resolve()), u.speaker_id, en, fr))
        path = out_dir / f"{name}.tsv"
        write_manifest(CorpusManifest(tuple(records)), path)
        paths.append(path)
    return tuple(paths)
