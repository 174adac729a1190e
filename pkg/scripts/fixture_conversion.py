"""Train the converter on the two-speaker fixture and measure conversion quality.

Prints the training curve every 10 epochs, then, over 40 held-out source
utterances converted to the other voice: probe accuracy and the median
relative f0 deviation. Optionally saves the checkpoint.

    python scripts/fixture_conversion.py --epochs 200 --save fixture.ckpt
"""
import argparse
import dataclasses
import time

import numpy as np

from augforge.audio import mu_law_decode, mu_law_encode
from augforge.features import estimate_f0
from augforge.fixtures import (FIXTURE_CONVERTER, FIXTURE_TRAINING, CentroidProbe,
                               fixture_samples, make_fixture)
from augforge.skinconv import checkpoint
from augforge.skinconv.convert import convert_batch
from augforge.skinconv.model import ConverterConfig, corpus_loss, init_model
from augforge.skinconv.train import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--epochs", type=int, default=FIXTURE_TRAINING["epochs"])
    ap.add_argument("--batch-size", type=int, default=FIXTURE_TRAINING["batch_size"])
    ap.add_argument("--hidden", type=int, default=FIXTURE_CONVERTER["dec_hidden"])
    ap.add_argument("--latent", type=int, default=FIXTURE_CONVERTER["latent_channels"])
    ap.add_argument("--history-noise", type=float, default=0.0)
    ap.add_argument("--no-phase", action="store_true", help="drop the f0 phase channels")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--save", help="write the trained checkpoint here")
    args = ap.parse_args()

    cfg = ConverterConfig(enc_hidden=args.hidden, dec_hidden=args.hidden,
                          latent_channels=args.latent, f0_phase=not args.no_phase)
    utts = make_fixture(seed=0)
    model = init_model(cfg, ["spk_a", "spk_b"], seed=args.seed)
    samples = fixture_samples(model, utts)
    initial = corpus_loss(model, samples)
    print(f"initial loss {initial:.6f} ({model.n_parameters()} parameters)")
    tc = dataclasses.replace(TrainConfig(**FIXTURE_TRAINING), epochs=args.epochs,
                             batch_size=args.batch_size, history_noise=args.history_noise,
                             seed=args.seed)
    t0 = time.perf_counter()

    def report(epoch, value):
        if epoch % 10 == 0 or epoch == args.epochs - 1:
            print(f"epoch {epoch:4d}  crop loss {value:.4f}  {time.perf_counter() - t0:7.1f} s",
                  flush=True)

    trained, _ = train(model, samples, tc, callback=report)
    final = corpus_loss(trained, samples)
    print(f"final loss {final:.4f} = {final / initial:.1%} of initial, "
          f"{time.perf_counter() - t0:.0f} s")
    if args.save:
        print(f"saved {args.save} sha256={checkpoint.save(trained, args.save)}")

    held = make_fixture(seed=99, n_per_speaker=10)
    probe = CentroidProbe([(u.speaker_id, mu_law_decode(mu_law_encode(u.waveform))) for u in held])
    sources = make_fixture(seed=1234, n_per_speaker=20)
    targets = ["spk_b" if u.speaker_id == "spk_a" else "spk_a" for u in sources]
    results = convert_batch(trained, [u.waveform for u in sources], targets)
    hits, pooled = 0, []
    for u, target, res in zip(sources, targets, results):
        label = probe.classify(res.waveform)
        hits += label == target
        src, out = estimate_f0(u.waveform), estimate_f0(res.waveform)
        both = src.voiced & out.voiced
        dev = np.abs(out.f0_hz[both] - src.f0_hz[both]) / src.f0_hz[both]
        pooled += list(dev) + [1.0] * int(np.sum(src.voiced & ~out.voiced))
        med = np.median(out.f0_hz[out.voiced]) if out.voiced.any() else float("nan")
        print(f"{u.utt_id} -> {target}: probe {label}, f0 {u.f0_hz:6.1f} -> {med:6.1f} Hz, "
              f"path CE {res.path_cross_entropy:.3f}")
    print(f"probe accuracy {hits}/{len(sources)}, median |df0|/f0 {np.median(pooled):.1%}")


if __name__ == "__main__":
    main()
