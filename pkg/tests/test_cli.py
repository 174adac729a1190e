import numpy as np
import pytest
import yaml

from augforge.cli import main
from augforge.config import ConfigError, build_config, load_config
from augforge.corpus import CorpusManifest, read_manifest, write_manifest
from augforge.features import MelSpectrogram, read_melf, write_melf
from augforge.skinconv import checkpoint

from conftest import make_manifest, tiny_model

VOICES = [f"v{k:02d}" for k in range(16)]


def _write_config(path, raw):
    path.write_text(yaml.safe_dump(raw))
    return str(path)


@pytest.fixture(scope="module")
def augment_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("aug")
    audio = root / "audio"
    audio.mkdir()
    manifest = make_manifest(100, audio_dir=audio)
    write_manifest(manifest, root / "train.tsv")
    checkpoint.save(tiny_model(VOICES), root / "skin.ckpt")
    return root


def _augment(root, tmp_path, capsys, **augment):
    cfg = _write_config(tmp_path / "c.yaml", {
        "seed": 1,
        "paths": {"train_manifest": str(root / "train.tsv"), "checkpoint": str(root / "skin.ckpt")},
        "augment": augment,
    })
    code = main(["augment", "--config", cfg, "--out", str(tmp_path / "out"), "--workers", "1"])
    return code, capsys.readouterr(), tmp_path / "out" / "augmented.tsv"


def test_augment_four_x(augment_setup, tmp_path, capsys):
    code, out, path = _augment(augment_setup, tmp_path, capsys, fraction=0.25, num_skins=16)
    assert code == 0
    assert "4.0x" in out.out
    m = read_manifest(path)
    assert len(m) == 500
    assert m.origin_counts() == {"original": 100, "skinned": 400, "machine_translated": 0}


def test_augment_tenth_with_eight_skins(augment_setup, tmp_path, capsys):
    code, out, path = _augment(augment_setup, tmp_path, capsys, fraction=0.1, num_skins=8)
    assert code == 0
    assert len(read_manifest(path).with_origin("skinned")) == 80


def test_augment_skins_only(augment_setup, tmp_path, capsys):
    code, _, path = _augment(augment_setup, tmp_path, capsys, fraction=0.1, num_skins=2,
                             include_original=False)
    assert code == 0
    m = read_manifest(path)
    assert len(m) == 20 and set(m.origin_counts()) and m.origin_counts()["original"] == 0


def test_augment_ledger_errors_exit_two(tmp_path, capsys):
    audio = tmp_path / "audio"
    audio.mkdir()
    m = make_manifest(4, audio_dir=audio)
    (audio / "u002.wav").write_bytes(b"RIFF....WAVEjunk")
    write_manifest(m, tmp_path / "train.tsv")
    checkpoint.save(tiny_model(VOICES), tmp_path / "skin.ckpt")
    cfg = _write_config(tmp_path / "c.yaml", {
        "paths": {"train_manifest": "train.tsv", "checkpoint": "skin.ckpt", "out_dir": "out"},
        "augment": {"fraction": 1.0, "num_skins": 2}})
    # manifest validation only checks existence, so the broken file reaches the ledger
    assert main(["augment", "--config", cfg, "--workers", "1"]) == 2
    ledger = (tmp_path / "out" / "errors.tsv").read_text().splitlines()
    assert len(ledger) == 3 and all("u002" in line for line in ledger[1:])
    assert len(read_manifest(tmp_path / "out" / "augmented.tsv")) == 4 + 6


def test_augment_validation_writes_nothing(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.yaml", {
        "paths": {"train_manifest": "missing.tsv", "checkpoint": "missing.ckpt",
                  "out_dir": str(tmp_path / "out")}})
    assert main(["augment", "--config", cfg]) == 1
    err = capsys.readouterr().err
    assert "missing.tsv" in err and "missing.ckpt" in err
    assert not (tmp_path / "out").exists()


def test_unknown_key_gets_suggestion():
    with pytest.raises(ConfigError, match="did you mean 'learning_rate'"):
        build_config({"training": {"learningrate": 0.1}})
    with pytest.raises(ConfigError, match="did you mean 'augment'"):
        build_config({"augmnt": {}})


def test_cli_reports_unknown_key(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.yaml", {"training": {"learningrate": 0.1}})
    assert main(["train-skin", "--config", cfg]) == 1
    assert "learning_rate" in capsys.readouterr().err


def test_config_collects_all_problems():
    with pytest.raises(ConfigError) as exc:
        build_config({"seed": "x", "augment": {"fraction": 2.0}, "leakage": {"mode": "nope"}})
    assert len(exc.value.problems) == 3


def test_seed_propagates_and_flags_override(tmp_path):
    cfg = load_config(_write_config(tmp_path / "c.yaml", {"seed": 11, "paths": {"out_dir": "o"}}))
    assert cfg.training.seed == 11
    assert cfg.path("out_dir") == tmp_path / "o"
    with pytest.raises(ConfigError):
        build_config({"training": {"seed": 3}})


def test_train_skin_requires_leakage_decision(tmp_path, capsys):
    write_manifest(make_manifest(2, audio_dir=tmp_path), tmp_path / "train.tsv")
    cfg = _write_config(tmp_path / "c.yaml", {
        "paths": {"train_manifest": "train.tsv", "checkpoint": "m.ckpt"}})
    assert main(["train-skin", "--config", cfg]) == 1
    assert "waived" in capsys.readouterr().err
    assert not (tmp_path / "m.ckpt").exists()


def _lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def test_score_identity_and_mismatch(tmp_path, capsys):
    a = _lines(tmp_path / "a.txt", ["the cat sat .", "an other line", "é à ü"])
    assert main(["score", a, a, "--metric", "bleu", "--report", str(tmp_path / "r.txt")]) == 0
    assert capsys.readouterr().out.strip() == "BLEU 100.00"
    assert "score=100.000000" in (tmp_path / "r.txt").read_text()
    assert main(["score", a, a, "--metric", "wer"]) == 0
    assert capsys.readouterr().out.strip() == "WER 0.00"
    b = _lines(tmp_path / "b.txt", ["x", "y", "z", "w"])
    assert main(["score", a, b]) == 1
    assert "3 vs 4" in capsys.readouterr().err


def test_score_manifests_by_source(tmp_path, capsys):
    m = make_manifest(3, transcript_of=lambda i: f"this is sentence number {i} .")
    write_manifest(m, tmp_path / "ref.tsv")
    write_manifest(CorpusManifest(tuple(reversed(m.records))), tmp_path / "hyp.tsv")
    assert main(["score", str(tmp_path / "hyp.tsv"), str(tmp_path / "ref.tsv"), "--manifests",
                 "--field", "transcript"]) == 0
    assert "100.00" in capsys.readouterr().out


def test_report_command(tmp_path, capsys):
    out = tmp_path / "rep.txt"
    argv = ["report", "--per-voice", *map(str, range(1, 9)), "--unmodified", "4.5",
            "--output", str(out)]
    assert main(argv) == 0
    text = out.read_text()
    assert "within_one_std=true" in text and "std=2.291288" in text
    assert main(["report", "--per-voice", "1", "2", "3", "--unmodified", "2"]) == 1


def _melf_dir(root, n, t=30, b=12):
    root.mkdir()
    rng = np.random.default_rng(0)
    for i in range(n):
        write_melf(MelSpectrogram(rng.normal(size=(t, b))), root / f"f{i:05d}.melf")
    return root


@pytest.mark.parametrize("section", [
    {"p": 0.0, "freq_mask_f": 5},
    {"p": 1.0, "warp_w": 0, "freq_mask_f": 0, "time_mask_t": 0},
])
def test_specaugment_identity_cases(tmp_path, capsys, section):
    src = _melf_dir(tmp_path / "in", 5)
    cfg = _write_config(tmp_path / "c.yaml", {"specaugment": section})
    assert main(["specaugment", str(src), str(tmp_path / "out"), "--config", cfg]) == 0
    for f in sorted(src.glob("*.melf")):
        assert (tmp_path / "out" / f.name).read_bytes() == f.read_bytes()


def test_specaugment_realized_fraction(tmp_path, capsys, caplog):
    src = _melf_dir(tmp_path / "in", 10_000, t=4, b=2)
    cfg = _write_config(tmp_path / "c.yaml", {"seed": 3, "specaugment": {
        "p": 0.5, "warp_w": 0, "freq_mask_f": 1, "time_mask_t": 2}})
    with caplog.at_level("INFO", logger="augforge"):
        assert main(["specaugment", str(src), str(tmp_path / "out"), "--config", cfg]) == 0
    frac = float(capsys.readouterr().out.split()[3])
    assert 0.48 <= frac <= 0.52
    assert any("batches" in r.message for r in caplog.records)


def test_specaugment_rejects_bad_header(tmp_path, capsys):
    src = _melf_dir(tmp_path / "in", 2, b=30)
    (src / "f00001.melf").write_bytes(b"BAD!" + bytes(12))
    assert main(["specaugment", str(src), str(tmp_path / "out")]) == 1
    assert "f00001.melf" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()
    out = read_melf(src / "f00000.melf")
    assert out.n_bands == 30


def test_normalize_command(tmp_path, capsys):
    audio = tmp_path / "audio"
    audio.mkdir()
    write_manifest(make_manifest(50, audio_dir=audio), tmp_path / "test.tsv")
    checkpoint.save(tiny_model(VOICES[:8]), tmp_path / "skin.ckpt")
    cfg = _write_config(tmp_path / "c.yaml", {
        "paths": {"test_manifest": "test.tsv", "checkpoint": "skin.ckpt", "out_dir": "out"}})
    assert main(["normalize", "--config", cfg, "--workers", "1"]) == 0
    norm = tmp_path / "out" / "normalized"
    for v in VOICES[:8]:
        m = read_manifest(norm / f"test_voice_{v}.tsv")
        assert len(m) == 50 and {r.speaker_id for r in m} == {v}
    assert len(list(norm.glob("voice_*/*.wav"))) == 400
    assert (norm / "report_skeleton.txt").exists()


def test_normalize_rejects_too_few_voices(tmp_path, capsys):
    audio = tmp_path / "audio"
    audio.mkdir()
    write_manifest(make_manifest(2, audio_dir=audio), tmp_path / "test.tsv")
    checkpoint.save(tiny_model(VOICES[:3]), tmp_path / "skin.ckpt")
    cfg = _write_config(tmp_path / "c.yaml", {
        "paths": {"test_manifest": "test.tsv", "checkpoint": "skin.ckpt", "out_dir": "out"}})
    assert main(["normalize", "--config", cfg]) == 1
    assert "8 voices" in capsys.readouterr().err


def test_merge_and_filter_commands(tmp_path, capsys):
    a = make_manifest(4)
    write_manifest(a, tmp_path / "a.tsv")
    assert main(["merge", str(tmp_path / "a.tsv"), str(tmp_path / "a.tsv"),
                 "--output", str(tmp_path / "m.tsv")]) == 1
    assert "duplicate id" in capsys.readouterr().err
    test = make_manifest(1, speaker_of=lambda i: "s2")
    write_manifest(test, tmp_path / "t.tsv")
    assert main(["filter", "--train", str(tmp_path / "a.tsv"), "--test", str(tmp_path / "t.tsv"),
                 "--output", str(tmp_path / "f.tsv")]) == 0
    assert read_manifest(tmp_path / "f.tsv").ids == ["u000", "u001", "u003"]


def test_train_then_finetune_then_augment(tmp_path, capsys):
    assert main(["fixture", str(tmp_path / "corpus"), "--per-speaker", "2", "--test-per-speaker",
                 "2", "--duration", "0.2"]) == 0
    cfg = _write_config(tmp_path / "c.yaml", {
        "paths": {"train_manifest": "corpus/train.tsv", "test_manifest": "corpus/test.tsv",
                  "checkpoint": "out/skin.ckpt", "out_dir": "out"},
        "converter": {"quantization_levels": 32, "speaker_dim": 4, "enc_hidden": 4,
                      "dec_hidden": 4, "latent_channels": 2, "dilations": [1, 2]},
        "training": {"epochs": 2, "crop_len": 256},
        "augment": {"fraction": 0.5, "num_skins": 2},
    })
    assert main(["train-skin", "--config", cfg]) == 0
    assert "sha256=" in capsys.readouterr().out
    log_lines = (tmp_path / "out" / "skin.log.tsv").read_text().splitlines()
    assert log_lines[0] == "epoch\tmean_loss" and len(log_lines) == 3
    model = checkpoint.load(tmp_path / "out" / "skin.ckpt")
    assert model.speaker_ids == ["spk_a", "spk_b"]

    test_manifest = read_manifest(tmp_path / "corpus" / "test.tsv")
    write_manifest(CorpusManifest(test_manifest.records[:1]), tmp_path / "new.tsv")
    assert main(["finetune-skin", str(tmp_path / "new.tsv"), "--config", cfg, "--speaker", "spk_c",
                 "--output", str(tmp_path / "out" / "tuned.ckpt")]) == 0
    tuned = checkpoint.load(tmp_path / "out" / "tuned.ckpt")
    assert tuned.speaker_ids == ["spk_a", "spk_b", "spk_c"]
    assert np.array_equal(tuned.params["Z"][:2], model.params["Z"])

    assert main(["augment", "--config", cfg, "--workers", "1"]) == 0
    assert len(read_manifest(tmp_path / "out" / "augmented.tsv")) == 4 + 2 * 2
