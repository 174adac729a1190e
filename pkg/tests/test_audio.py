import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augforge.audio import (AliasingWarning, AudioFormatError, QuantizedWaveform, Waveform,
                            decode_levels, mu_law_decode, mu_law_encode, read_wav, synth_tone,
                            write_wav)


def _write_pcm(path, samples, rate=16000, channels=1, bits=16, fmt=1, truncate=0):
    data = np.asarray(samples, dtype="<i2").tobytes()
    block = channels * bits // 8
    declared = len(data)
    data = data[: len(data) - truncate]
    header = b"RIFF" + struct.pack("<I", 36 + declared) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, fmt, channels, rate, rate * block, block, bits)
    header += b"data" + struct.pack("<I", declared)
    path.write_bytes(header + data)


def test_read_scales_by_32768(tmp_path):
    p = tmp_path / "a.wav"
    _write_pcm(p, [16384])
    assert read_wav(p).samples.tolist() == [0.5]
    _write_pcm(p, [0, -32768])
    assert read_wav(p).samples.tolist() == [0.0, -1.0]


@pytest.mark.parametrize("value,stored", [(1.0, 32767), (0.0, 0), (2.0, 32767), (-1.0, -32768)])
def test_write_scale_and_clamp(tmp_path, value, stored):
    p = tmp_path / "b.wav"
    write_wav(Waveform(np.clip([value], -1, 1)), p)
    raw = p.read_bytes()[44:]
    assert struct.unpack("<h", raw)[0] == stored


def test_write_clamps_out_of_range_samples(tmp_path):
    # Waveform rejects |x| > 1, so the clamp is exercised through to_pcm16 directly
    from augforge.audio import to_pcm16
    assert to_pcm16(np.array([2.0, -3.0])).tolist() == [32767, -32768]


def test_round_trip_levels_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    w = Waveform(rng.uniform(-1, 1, 1000))
    p1, p2 = tmp_path / "1.wav", tmp_path / "2.wav"
    write_wav(w, p1)
    once = read_wav(p1)
    write_wav(once, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(read_wav(p2).samples, once.samples)


@pytest.mark.parametrize("kwargs,match", [
    ({"channels": 2}, "mono"),
    ({"bits": 8}, "16-bit"),
    ({"fmt": 3}, "unsupported"),
    ({"truncate": 4}, "truncated"),
    ({"rate": 8000}, "sample rate"),
])
def test_read_rejects_unsupported(tmp_path, kwargs, match):
    p = tmp_path / "bad.wav"
    samples = [1, 2, 3, 4, 5, 6]
    _write_pcm(p, samples, **kwargs)
    with pytest.raises(AudioFormatError, match=match):
        read_wav(p)


def test_waveform_invariants():
    with pytest.raises(ValueError):
        Waveform(np.array([]))
    with pytest.raises(ValueError):
        Waveform(np.array([np.nan]))
    with pytest.raises(ValueError):
        Waveform(np.array([1.5]))
    with pytest.raises(ValueError):
        Waveform(np.array([0.1]), 0)
    with pytest.raises(ValueError):
        QuantizedWaveform(np.array([256]), 256)


def test_mu_law_endpoints_and_center():
    q = mu_law_encode(Waveform(np.array([0.0, 1.0, -1.0])), 256).levels
    assert q[0] in (127, 128)
    assert q[1] == 255 and q[2] == 0


def test_mu_law_round_trip_error():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, 10_000)
    back = mu_law_decode(mu_law_encode(Waveform(x), 256)).samples
    assert np.max(np.abs(back - x)) < 0.04


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=2, max_size=200), st.sampled_from([4, 16, 256]))
def test_mu_law_monotone_and_within_one_bin(xs, q):
    x = np.sort(np.array(xs))
    levels = mu_law_encode(Waveform(x), q).levels
    assert np.all(np.diff(levels) >= 0)
    back = decode_levels(levels, q)
    assert np.all(np.diff(back) >= 0)
    grid = decode_levels(np.arange(q), q)
    widths = np.diff(grid)
    lo = np.clip(levels - 1, 0, q - 2)
    hi = np.clip(levels, 0, q - 2)
    bound = np.maximum(widths[lo], widths[hi])
    assert np.all(np.abs(back - x) <= bound + 1e-12)


def test_synth_tone_zero_crossings():
    w = synth_tone(220, 1.0, 16000, [1])
    s = w.samples
    crossings = np.count_nonzero(np.signbit(s[1:]) != np.signbit(s[:-1]))
    assert abs(crossings - 440) <= 2
    assert np.isclose(np.max(np.abs(s)), 0.9)


def test_synth_tone_length_and_nyquist():
    assert len(synth_tone(100, 0.5, 16000, [1, 0.5])) == 8000
    with pytest.raises(ValueError):
        synth_tone(9000, 1.0, 16000, [1])


def test_synth_tone_drops_aliasing_harmonics():
    with pytest.warns(AliasingWarning):
        w = synth_tone(3000, 0.1, 16000, [1, 1, 1])  # 9 kHz harmonic dropped
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ref = synth_tone(3000, 0.1, 16000, [1, 1])
    assert np.allclose(w.samples, ref.samples)


@pytest.mark.parametrize("freq", [100, 160, 200, 250, 400])
def test_synth_tone_periodic(freq):
    period = 16000 // freq
    s = synth_tone(freq, 0.25, 16000, [1, 0.4, 0.2]).samples
    assert np.max(np.abs(s[period:] - s[:-period])) < 1e-6
