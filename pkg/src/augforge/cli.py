"""augforge command line.

Exit status: 0 success, 1 validation error, 2 finished with ledger errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path


from . import corpus, metrics
from .audio import AudioFormatError, read_wav
from .config import ConfigError, PipelineConfig, build_config, load_config
from .features import MelfFormatError, read_melf, write_melf

log = logging.getLogger("augforge")

EXIT_OK, EXIT_INVALID, EXIT_LEDGER = 0, 1, 2


class ValidationError(Exception):
    def __init__(self, problems):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("\n".join(self.problems))


# ---------------------------------------------------------------- helpers

def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else build_config({})
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.training = dataclasses.replace(cfg.training, seed=args.seed)
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "out", None) is not None:
        cfg.paths.out_dir = str(Path(args.out).resolve())
    return cfg


def _workers(cfg: PipelineConfig) -> int:
    return cfg.workers or os.cpu_count() or 1


def _require(cfg: PipelineConfig, problems: list, *names, outputs=("out_dir", "log_file")) -> dict:
    """Resolve the named paths; everything not listed in `outputs` must already exist."""
    found = {}
    for name in names:
        p = cfg.path(name)
        if p is None:
            problems.append(f"paths.{name} is not set")
        elif name not in outputs and not p.exists():
            problems.append(f"paths.{name}: {p} does not exist")
        found[name] = p
    return found


def _load_manifest(path: Path, problems: list, check_audio: bool = True):
    try:
        m = corpus.read_manifest(path)
    except (corpus.ManifestError, OSError) as exc:
        problems.append(str(exc))
        return None
    if check_audio:
        missing = [r.audio_path for r in m if not Path(r.audio_path).exists()]
        for a in missing[:10]:
            problems.append(f"{path}: audio file {a} does not exist")
        if len(missing) > 10:
            problems.append(f"{path}: ... and {len(missing) - 10} more missing audio files")
    return m


def _load_checkpoint(path: Path, problems: list):
    from .skinconv import checkpoint

    try:
        return checkpoint.load(path)
    except (checkpoint.CheckpointError, OSError) as exc:
        problems.append(f"{path}: {exc}")
        return None


def _fail_if(problems):
    if problems:
        raise ValidationError(problems)


def _samples_from_manifest(m, model):
    from .skinconv.model import sample_from_waveform

    return [sample_from_waveform(model, read_wav(r.audio_path), r.speaker_id) for r in m]


# ---------------------------------------------------------------- commands

def cmd_train_skin(args) -> int:
    from .skinconv import checkpoint
    from .skinconv.model import init_model
    from .skinconv.train import train

    cfg = _config(args)
    problems = []
    paths = _require(cfg, problems, "train_manifest", "checkpoint",
                     outputs=("checkpoint", "log_file"))
    train_m = _load_manifest(paths["train_manifest"], problems) if paths["train_manifest"] and \
        paths["train_manifest"].exists() else None
    test_m = None
    if cfg.leakage.mode != "waived":
        test_path = cfg.path("test_manifest")
        if test_path is None:
            problems.append("leakage filtering needs paths.test_manifest "
                            "(or set leakage.mode: waived)")
        elif not test_path.exists():
            problems.append(f"paths.test_manifest: {test_path} does not exist")
        else:
            test_m = _load_manifest(test_path, problems, check_audio=False)
    if train_m is not None and len(train_m) == 0:
        problems.append("training manifest is empty")
    _fail_if(problems)

    if test_m is not None:
        before = len(train_m)
        train_m = corpus.filter_leakage(train_m, test_m, cfg.leakage.mode)
        log.info("leakage filter (%s) kept %d of %d records", cfg.leakage.mode, len(train_m), before)
        if len(train_m) == 0:
            raise ValidationError("leakage filter removed every training record")
    speakers = sorted({r.speaker_id for r in train_m})
    model = init_model(cfg.converter, speakers, seed=cfg.seed)
    samples = _samples_from_manifest(train_m, model)
    log_path = cfg.path("log_file") or paths["checkpoint"].with_suffix(".log.tsv")
    trained, history = train(model, samples, cfg.training)
    ckpt = paths["checkpoint"]
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    digest = checkpoint.save(trained, ckpt)
    lines = ["epoch\tmean_loss"] + [f"{i}\t{v:.6f}" for i, v in enumerate(history.epoch_loss)]
    log_path.write_text("\n".join(lines) + "\n")
    print(f"checkpoint {ckpt} sha256={digest}")
    if history.epoch_loss:
        print(f"final mean loss {history.epoch_loss[-1]:.4f}")
    return EXIT_OK


def cmd_finetune_skin(args) -> int:
    from .skinconv import checkpoint
    from .skinconv.train import finetune_new_speaker

    cfg = _config(args)
    problems = []
    paths = _require(cfg, problems, "checkpoint")
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        problems.append(f"{manifest_path} does not exist")
    _fail_if(problems)
    m = _load_manifest(manifest_path, problems)
    model = _load_checkpoint(paths["checkpoint"], problems)
    if m is not None and len(m) == 0:
        problems.append("fine-tuning manifest is empty")
    _fail_if(problems)
    from .skinconv.model import prepare_audio

    pairs = [prepare_audio(model, read_wav(r.audio_path)) for r in m]
    tuned, new_id, history = finetune_new_speaker(model, pairs, cfg.training,
                                                  speaker_id=args.speaker, full=args.full)
    out = Path(args.output) if args.output else paths["checkpoint"]
    digest = checkpoint.save(tuned, out)
    print(f"added speaker {new_id}; checkpoint {out} sha256={digest}")
    return EXIT_OK


def cmd_augment(args) -> int:
    cfg = _config(args)
    problems = []
    paths = _require(cfg, problems, "train_manifest", "checkpoint", "out_dir")
    _fail_if(problems)
    manifest = _load_manifest(paths["train_manifest"], problems)
    model = _load_checkpoint(paths["checkpoint"], problems)
    policy = None
    if model is not None:
        a = cfg.augment
        try:
            voices = tuple(a.voices) if a.voices else corpus.default_voices(model.speaker_ids,
                                                                            a.num_skins)
            policy = corpus.AugmentPolicy(a.fraction, a.num_skins, voices, cfg.seed)
            policy.check_voices(model.speaker_ids)
        except ValueError as exc:
            problems.append(f"augment: {exc}")
    if manifest is not None and policy is not None:
        if len(manifest) == 0:
            problems.append("training manifest is empty")
        elif corpus.sample_count(policy.fraction, len(manifest)) == 0:
            problems.append(f"augment.fraction {policy.fraction} selects no utterances")
    _fail_if(problems)

    plan = corpus.plan_augmentation(manifest, policy)
    out_dir = paths["out_dir"]
    result = corpus.execute_plan(plan, model, out_dir / "skins", _workers(cfg))
    final = corpus.merge([manifest, result.manifest]) if cfg.augment.include_original \
        else result.manifest
    out_manifest = out_dir / "augmented.tsv"
    corpus.write_manifest(final, out_manifest)
    ratio = corpus.augmentation_ratio(plan, manifest)
    print(f"planned {len(plan)} conversions over {len(manifest)} utterances: {ratio:.1f}x")
    print(f"converted {result.converted}, reused {result.skipped}, failed {len(result.errors)}")
    print(f"wrote {out_manifest} ({len(final)} records)")
    if result.errors:
        corpus.write_ledger(result.errors, out_dir / "errors.tsv")
        print(f"error ledger: {out_dir / 'errors.tsv'}", file=sys.stderr)
        return EXIT_LEDGER
    return EXIT_OK


def _melf_inputs(spec: str) -> list[Path]:
    p = Path(spec)
    if p.is_dir():
        return sorted(p.glob("*.melf"))
    return [p]


def cmd_specaugment(args) -> int:
    from .specaugment import BatchAugmentor, SpecAugmentPolicy, augment_batch, batch_is_augmented

    cfg = _config(args)
    s = cfg.specaugment
    problems = []
    inputs = _melf_inputs(args.features_in)
    if not inputs or not all(p.exists() for p in inputs):
        problems.append(f"no MELF inputs found at {args.features_in}")
    try:
        policy = SpecAugmentPolicy(s.warp_w, s.freq_mask_f, s.n_freq_masks, s.time_mask_t,
                                   s.n_time_masks, s.time_mask_ratio_cap, s.mask_value)
        aug = BatchAugmentor(policy, s.p, cfg.seed)
    except ValueError as exc:
        problems.append(f"specaugment: {exc}")
    feats = []
    if not problems:
        for p in inputs:
            try:
                m = read_melf(p)
            except MelfFormatError as exc:
                problems.append(str(exc))
                continue
            if s.freq_mask_f > m.n_bands:
                problems.append(f"{p}: freq_mask_f {s.freq_mask_f} exceeds {m.n_bands} bands")
            feats.append(m)
    _fail_if(problems)

    out_dir = Path(args.features_out)
    out_dir.mkdir(parents=True, exist_ok=True)
    hits = 0
    n_batches = 0
    for bi, lo in enumerate(range(0, len(feats), s.batch_size)):
        batch = feats[lo: lo + s.batch_size]
        names = inputs[lo: lo + s.batch_size]
        hits += batch_is_augmented(aug, bi)
        n_batches += 1
        for name, m in zip(names, augment_batch(batch, aug, bi)):
            write_melf(m, out_dir / name.name)
    frac = hits / n_batches
    if s.p < 1:
        log.info("augmented %d of %d batches (%.4f)", hits, n_batches, frac)
    print(f"augmented batch fraction {frac:.4f} ({hits}/{n_batches})")
    return EXIT_OK


def cmd_normalize(args) -> int:
    cfg = _config(args)
    problems = []
    paths = _require(cfg, problems, "test_manifest", "checkpoint", "out_dir")
    _fail_if(problems)
    test = _load_manifest(paths["test_manifest"], problems)
    model = _load_checkpoint(paths["checkpoint"], problems)
    n = cfg.normalize
    expected = 8 if n.expected_voices is None else n.expected_voices
    voices = None
    if model is not None:
        try:
            voices = list(n.voices) if n.voices else list(
                corpus.default_voices(model.speaker_ids, min(expected, len(model.speaker_ids))))
        except ValueError as exc:
            problems.append(str(exc))
        if voices is not None:
            if len(voices) != expected:
                problems.append(f"normalization needs {expected} voices, {len(voices)} configured "
                                f"(set normalize.expected_voices to override)")
            missing = [v for v in voices if v not in model.speaker_ids]
            if missing:
                problems.append(f"voices not in the converter's speaker table: {missing}")
    _fail_if(problems)

    out_dir = paths["out_dir"] / "normalized"
    manifests, errors = corpus.normalize_testset(test, model, voices, out_dir, expected,
                                                 _workers(cfg))
    for v, m in zip(voices, manifests):
        corpus.write_manifest(m, out_dir / f"test_voice_{v}.tsv")
    skeleton = [f"voice_{i}_id={v}" for i, v in enumerate(voices)]
    skeleton += [f"voice_{i}=" for i in range(len(voices))] + ["unmodified="]
    (out_dir / "report_skeleton.txt").write_text("\n".join(skeleton) + "\n")
    print(f"wrote {len(manifests)} normalized test sets of {len(test)} utterances to {out_dir}")
    if errors:
        corpus.write_ledger(errors, out_dir / "errors.tsv")
        return EXIT_LEDGER
    return EXIT_OK


def cmd_report(args) -> int:
    expected = args.expected if args.expected else len(args.per_voice)
    try:
        report = metrics.normalization_report(args.per_voice, args.unmodified, expected)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    text = "\n".join(report.to_lines()) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    print(f"mean {report.mean:.2f} std {report.std:.2f} unmodified {report.unmodified_score:.2f} "
          f"within_one_std={str(report.within_one_std).lower()}")
    return EXIT_OK


def _read_lines(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").splitlines()


def _manifest_texts(path: Path, field_name: str) -> dict:
    m = corpus.read_manifest(path)
    return {(r.source_id or r.id): getattr(r, field_name) or "" for r in m}


def score_texts(hyps, refs, metric: str, cfg: PipelineConfig) -> float:
    lc = cfg.metrics.lowercase
    pairs = [metrics.ScoredPair(metrics.tokenize(h, lc), metrics.tokenize(r, lc))
             for h, r in zip(hyps, refs)]
    if metric == "bleu":
        return metrics.bleu(pairs, cfg.metrics.max_n, cfg.metrics.smoothing)
    return 100.0 * metrics.wer(pairs)


def cmd_score(args) -> int:
    cfg = _config(args)
    hyp, ref = Path(args.hyp), Path(args.ref)
    problems = [f"{p} does not exist" for p in (hyp, ref) if not p.exists()]
    _fail_if(problems)
    if args.manifests:
        h, r = _manifest_texts(hyp, args.field), _manifest_texts(ref, args.field)
        missing = sorted(set(r) - set(h))
        if missing or set(h) - set(r):
            raise ValidationError(f"manifests are not aligned ({len(h)} vs {len(r)} ids)")
        keys = sorted(r)
        hyps, refs = [h[k] for k in keys], [r[k] for k in keys]
    else:
        hyps, refs = _read_lines(hyp), _read_lines(ref)
        if len(hyps) != len(refs):
            raise ValidationError(f"line count mismatch: {len(hyps)} vs {len(refs)}")
    try:
        value = score_texts(hyps, refs, args.metric, cfg)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    print(f"{args.metric.upper()} {value:.2f}")
    if args.report:
        Path(args.report).write_text(f"metric={args.metric}\nscore={value:.6f}\n"
                                     f"segments={len(hyps)}\n")
    return EXIT_OK


def cmd_merge(args) -> int:
    problems = []
    manifests = [_load_manifest(Path(p), problems, check_audio=False) for p in args.inputs]
    _fail_if(problems)
    try:
        merged = corpus.merge(manifests)
    except corpus.ManifestError as exc:
        raise ValidationError(str(exc)) from None
    if args.origin:
        merged = merged.with_origin(*args.origin)
    corpus.write_manifest(merged, args.output)
    counts = merged.origin_counts()
    print(f"merged {len(merged)} records: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def cmd_filter(args) -> int:
    problems = []
    train_m = _load_manifest(Path(args.train), problems, check_audio=False)
    test_m = _load_manifest(Path(args.test), problems, check_audio=False)
    _fail_if(problems)
    kept = corpus.filter_leakage(train_m, test_m, args.mode)
    corpus.write_manifest(kept, args.output)
    print(f"kept {len(kept)} of {len(train_m)} records ({args.mode})")
    return EXIT_OK


def cmd_fixture(args) -> int:
    from .fixtures import write_fixture_corpus

    out = Path(args.output)
    train_path, test_path = write_fixture_corpus(out, n_per_speaker=args.per_speaker,
                                                 n_test_per_speaker=args.test_per_speaker,
                                                 duration_s=args.duration, seed=args.seed or 0)
    print(f"wrote {train_path} and {test_path}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="augforge", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config (YAML)")
    common.add_argument("--seed", type=int, help="global seed (overrides config)")
    common.add_argument("--workers", type=int, help="worker processes (overrides config)")
    common.add_argument("--out", help="output directory (overrides paths.out_dir)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train-skin", parents=[common], help="train the voice converter")
    s.set_defaults(func=cmd_train_skin)

    s = sub.add_parser("finetune-skin", parents=[common], help="add a new speaker by fine-tuning")
    s.add_argument("manifest", help="manifest of the new speaker's audio")
    s.add_argument("--speaker", help="id for the new speaker")
    s.add_argument("--full", action="store_true", help="fine-tune every parameter")
    s.add_argument("--output", help="checkpoint to write (default: overwrite paths.checkpoint)")
    s.set_defaults(func=cmd_finetune_skin)

    s = sub.add_parser("augment", parents=[common], help="plan and generate skinned copies")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("specaugment", parents=[common], help="SpecAugment(-p) over MELF files")
    s.add_argument("features_in", help="MELF file or directory of .melf files")
    s.add_argument("features_out", help="output directory")
    s.set_defaults(func=cmd_specaugment)

    s = sub.add_parser("normalize", parents=[common], help="build single-voice test sets")
    s.set_defaults(func=cmd_normalize)

    s = sub.add_parser("report", help="mean/std report over per-voice scores")
    s.add_argument("--per-voice", type=float, nargs="+", required=True)
    s.add_argument("--unmodified", type=float, required=True)
    s.add_argument("--expected", type=int, default=8, help="required score count (0: any)")
    s.add_argument("--output", help="write key=value report here")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("score", parents=[common], help="tokenized BLEU or WER")
    s.add_argument("hyp")
    s.add_argument("ref")
    s.add_argument("--metric", choices=("bleu", "wer"), default="bleu")
    s.add_argument("--manifests", action="store_true",
                   help="inputs are manifests aligned by source id")
    s.add_argument("--field", choices=("transcript", "translation"), default="translation")
    s.add_argument("--report", help="write key=value lines here")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("merge", help="concatenate manifests")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--output", required=True)
    s.add_argument("--origin", nargs="+", choices=corpus.ORIGINS, help="keep only these origins")
    s.set_defaults(func=cmd_merge)

    s = sub.add_parser("filter", help="drop train records leaking into the test set")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--mode", choices=("by_speaker", "by_transcript"), default="by_speaker")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("fixture", help="write the synthetic two-speaker corpus")
    s.add_argument("output")
    s.add_argument("--per-speaker", type=int, default=20)
    s.add_argument("--test-per-speaker", type=int, default=5)
    s.add_argument("--duration", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_fixture)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("AUGFORGE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ConfigError) as exc:
        for line in getattr(exc, "problems", [str(exc)]):
            print(f"error: {line}", file=sys.stderr)
        return EXIT_INVALID
    except (AudioFormatError, MelfFormatError, corpus.ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
