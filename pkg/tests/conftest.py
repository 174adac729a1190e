import numpy as np
import pytest

from augforge.audio import synth_tone, write_wav
from augforge.corpus import CorpusManifest, UtteranceRecord
from augforge.skinconv.model import ConverterConfig, init_model

TINY = ConverterConfig(quantization_levels=16, speaker_dim=4, enc_layers=2, enc_kernel=4,
                       enc_stride=2, enc_hidden=4, latent_channels=2, dec_hidden=4,
                       dilations=(1, 2))


def tiny_model(speakers=("v0", "v1"), seed=0, zero_output=False):
    return init_model(TINY, list(speakers), seed=seed, zero_output=zero_output)


@pytest.fixture
def tiny():
    return tiny_model()


def make_manifest(n, speaker_of=lambda i: f"s{i % 5}", transcript_of=lambda i: f"sentence {i}",
                  audio_dir=None):
    records = []
    for i in range(n):
        path = f"/nonexistent/u{i}.wav"
        if audio_dir is not None:
            path = str(audio_dir / f"u{i:03d}.wav")
            write_wav(synth_tone(120 + 7 * i, 0.05, 16000, [1, 0.3]), path)
        records.append(UtteranceRecord(f"u{i:03d}", path, speaker_of(i), transcript_of(i),
                                       f"traduction {i}"))
    return CorpusManifest(tuple(records))


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE = {}


def record_acceptance(number, ok, detail, seconds, runtime_bound=None):
    bound = f" [bound {runtime_bound}]" if runtime_bound else ""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}; {seconds:.1f} s{bound}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


# ---------------------------------------------------------------- trained fixture model

class FixtureTraining:
    def __init__(self):
        import time

        from augforge.fixtures import FIXTURE_CONVERTER, FIXTURE_TRAINING, fixture_samples, make_fixture
        from augforge.skinconv.model import corpus_loss
        from augforge.skinconv.train import TrainConfig, train

        self.utterances = make_fixture(("spk_a", "spk_b"), n_per_speaker=20, duration_s=1.0, seed=0)
        init = init_model(ConverterConfig(**FIXTURE_CONVERTER), ["spk_a", "spk_b"], seed=0)
        self.samples = fixture_samples(init, self.utterances)
        self.initial_loss = corpus_loss(init, self.samples)
        t0 = time.perf_counter()
        self.model, self.history = train(init, self.samples, TrainConfig(**FIXTURE_TRAINING, seed=0))
        self.train_seconds = time.perf_counter() - t0
        self.final_loss = corpus_loss(self.model, self.samples)


@pytest.fixture(scope="session")
def fixture_training():
    """The two-speaker fixture converter, trained once per session (several minutes)."""
    return FixtureTraining()
