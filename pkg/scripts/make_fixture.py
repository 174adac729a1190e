"""Write the synthetic two-speaker corpus (wavs + train/test manifests)."""
import argparse

from augforge.fixtures import write_fixture_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--per-speaker", type=int, default=20)
    ap.add_argument("--test-per-speaker", type=int, default=5)
    ap.add_argument("--duration", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    train, test = write_fixture_corpus(args.out_dir, args.per_speaker, args.test_per_speaker,
                                       args.duration, args.seed)
    print(train)
    print(test)


if __name__ == "__main__":
    main()
