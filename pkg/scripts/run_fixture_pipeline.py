"""Drive the whole CLI workflow on the synthetic corpus.

fixture -> train-skin -> augment -> normalize -> log-mel features ->
specaugment -> score. Everything lands in the given work directory.
"""
import argparse
from pathlib import Path

import yaml

from augforge.audio import read_wav
from augforge.cli import main as cli
from augforge.corpus import read_manifest
from augforge.features import log_mel, write_melf

CONFIG = {
    "seed": 7,
    "paths": {"train_manifest": "corpus/train.tsv", "test_manifest": "corpus/test.tsv",
              "checkpoint": "out/skin.ckpt", "out_dir": "out"},
    "converter": {"quantization_levels": 256, "enc_hidden": 16, "dec_hidden": 16},
    "training": {"epochs": 20, "batch_size": 1},
    "leakage": {"mode": "by_speaker"},
    "augment": {"fraction": 0.5, "num_skins": 2},
    "normalize": {"voices": ["spk_a", "spk_b"], "expected_voices": 2},
    "specaugment": {"p": 0.5, "batch_size": 4},
}


def run(argv):
    print("$ augforge " + " ".join(argv), flush=True)
    code = cli(argv)
    if code != 0:
        raise SystemExit(f"step failed with exit status {code}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("work_dir")
    ap.add_argument("--epochs", type=int, default=CONFIG["training"]["epochs"])
    args = ap.parse_args()
    root = Path(args.work_dir)
    root.mkdir(parents=True, exist_ok=True)
    CONFIG["training"]["epochs"] = args.epochs
    cfg = root / "pipeline.yaml"
    cfg.write_text(yaml.safe_dump(CONFIG))

    run(["fixture", str(root / "corpus"), "--per-speaker", "6", "--test-per-speaker", "4",
         "--duration", "0.5", "--seed", "7"])
    run(["train-skin", "--config", str(cfg)])
    run(["augment", "--config", str(cfg)])
    run(["normalize", "--config", str(cfg)])

    feats = root / "out" / "features"
    feats.mkdir(exist_ok=True)
    for rec in read_manifest(root / "out" / "augmented.tsv"):
        name = rec.id.replace("#", "_").replace("=", "_")
        write_melf(log_mel(read_wav(rec.audio_path)), feats / f"{name}.melf")
    run(["specaugment", str(feats), str(root / "out" / "features_aug"), "--config", str(cfg)])
    # the external translation system is out of scope; score references against themselves
    run(["score", str(root / "out" / "augmented.tsv"), str(root / "corpus" / "train.tsv"),
         "--manifests", "--field", "translation", "--config", str(cfg)])


if __name__ == "__main__":
    main()
