"""Realized fraction of augmented batches against the configured probability."""
import argparse

import numpy as np

from augforge.specaugment import BatchAugmentor, batch_is_augmented


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batches", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    n = args.batches
    for p in np.linspace(0, 1, 11):
        aug = BatchAugmentor(apply_prob=float(p), rng_seed=args.seed)
        frac = sum(batch_is_augmented(aug, i) for i in range(n)) / n
        half_width = 3 * np.sqrt(p * (1 - p) / n)
        print(f"p={p:.1f}  realized={frac:.4f}  3-sigma band=[{p - half_width:.4f}, {p + half_width:.4f}]")


if __name__ == "__main__":
    main()
