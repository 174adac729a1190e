"""Corpus manifests and the skin-augmentation policy engine."""
from __future__ import annotations

import hashlib
import logging
import math
import os
import re
import string
import unicodedata
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import read_wav, write_wav

log = logging.getLogger(__name__)

ORIGINS = ("original", "skinned", "machine_translated")
FIELDS = ("id", "audio_path", "speaker_id", "transcript", "translation", "origin",
          "source_id", "skin_voice")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    audio_path: str
    speaker_id: str
    transcript: str | None = None
    translation: str | None = None
    origin: str = "original"
    source_id: str | None = None
    skin_voice: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ManifestError("record id must be non-empty")
        if self.origin not in ORIGINS:
            raise ManifestError(f"{self.id}: unknown origin {self.origin!r}")
        if self.origin == "skinned" and not (self.source_id and self.skin_voice):
            raise ManifestError(f"{self.id}: skinned records need source_id and skin_voice")
        if self.origin == "original" and (self.source_id or self.skin_voice):
            raise ManifestError(f"{self.id}: original records carry no source_id/skin_voice")
        for name in FIELDS:
            value = getattr(self, name)
            if value is not None and ("\t" in value or "\n" in value or "\r" in value):
                raise ManifestError(f"{self.id}: field {name} contains a tab or newline")


@dataclass(frozen=True)
class CorpusManifest:
    records: tuple = ()

    def __post_init__(self):
        records = tuple(self.records)
        seen = set()
        for r in records:
            if r.id in seen:
                raise ManifestError(f"duplicate id {r.id!r}")
            seen.add(r.id)
        object.__setattr__(self, "records", records)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def with_origin(self, *origins) -> "CorpusManifest":
        return CorpusManifest(tuple(r for r in self.records if r.origin in origins))

    def origin_counts(self) -> dict:
        counts = {o: 0 for o in ORIGINS}
        for r in self.records:
            counts[r.origin] += 1
        return counts


# ---------------------------------------------------------------- file format

def read_manifest(path) -> CorpusManifest:
    """Parse the tab-separated manifest; relative audio paths resolve against its directory."""
    path = Path(path)
    root = path.parent
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != len(FIELDS):
            raise ManifestError(f"{path}:{lineno}: expected {len(FIELDS)} fields, got {len(cols)}")
        values = dict(zip(FIELDS, cols))
        for k in ("transcript", "translation", "source_id", "skin_voice"):
            values[k] = values[k] or None
        audio = values["audio_path"]
        if audio and not os.path.isabs(audio):
            values["audio_path"] = str((root / audio).resolve())
        try:
            records.append(UtteranceRecord(**values))
        except ManifestError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
    try:
        return CorpusManifest(tuple(records))
    except ManifestError as exc:
        raise ManifestError(f"{path}: {exc}") from None


def _row(rec: UtteranceRecord, root: Path | None) -> list[str]:
    audio = rec.audio_path
    if root is not None and audio and os.path.isabs(audio):
        audio = os.path.relpath(audio, root)
    return [rec.id, audio, rec.speaker_id, rec.transcript or "", rec.translation or "",
            rec.origin, rec.source_id or "", rec.skin_voice or ""]


def format_manifest(manifest: CorpusManifest, root: Path | None = None) -> str:
    lines = ["# " + "\t".join(FIELDS)]
    lines += ["\t".join(_row(r, root)) for r in manifest]
    return "\n".join(lines) + "\n"


def write_manifest(manifest: CorpusManifest, path) -> None:
    path = Path(path)
    path.write_text(format_manifest(manifest, path.resolve().parent), encoding="utf-8")


@dataclass(frozen=True)
class LedgerEntry:
    record: UtteranceRecord
    error: str


def write_ledger(entries, path) -> None:
    path = Path(path)
    root = path.resolve().parent
    lines = ["# " + "\t".join(FIELDS + ("error",))]
    for e in entries:
        msg = " ".join(str(e.error).split())
        lines.append("\t".join(_row(e.record, root) + [msg]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- policy

@dataclass(frozen=True)
class AugmentPolicy:
    fraction: float
    num_skins: int
    voice_ids: tuple
    sampling_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "voice_ids", tuple(self.voice_ids))
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")
        if self.num_skins < 1:
            raise ValueError("num_skins must be >= 1")
        if len(self.voice_ids) != self.num_skins:
            raise ValueError(f"need {self.num_skins} voices, got {len(self.voice_ids)}")
        if len(set(self.voice_ids)) != len(self.voice_ids):
            raise ValueError("voice ids must be distinct")

    def check_voices(self, known) -> None:
        missing = [v for v in self.voice_ids if v not in set(known)]
        if missing:
            raise ValueError(f"voices not in the converter's speaker table: {missing}")


def default_voices(speaker_ids, k: int) -> tuple:
    """The first k speaker ids in lexicographic order."""
    ordered = sorted(speaker_ids)
    if k > len(ordered):
        raise ValueError(f"asked for {k} voices but only {len(ordered)} speakers exist")
    return tuple(ordered[:k])


def sample_count(fraction: float, n: int) -> int:
    """round(f * N) with halves rounded up."""
    return int(math.floor(fraction * n + 0.5))


@dataclass(frozen=True)
class PlanEntry:
    source: UtteranceRecord
    voice: str

    @property
    def skinned_id(self) -> str:
        return skinned_id(self.source.id, self.voice)


def skinned_id(source_id: str, voice: str) -> str:
    return f"{source_id}#skin={voice}"


def plan_augmentation(manifest: CorpusManifest, policy: AugmentPolicy) -> list[PlanEntry]:
    """Sample round(f N) utterances once, then pair each with every one of the K voices.

    Sampling is keyed by sorted ids so record order does not matter.
    """
    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    k = sample_count(policy.fraction, len(manifest))
    if k == 0:
        raise ValueError(f"fraction {policy.fraction} of {len(manifest)} utterances selects none")
    by_id = {r.id: r for r in manifest}
    ordered = sorted(by_id)
    rng = np.random.default_rng(policy.sampling_seed)
    chosen = sorted(ordered[i] for i in rng.choice(len(ordered), size=k, replace=False))
    return [PlanEntry(by_id[i], v) for i in chosen for v in policy.voice_ids]


def augmentation_ratio(plan, manifest: CorpusManifest) -> float:
    return len(plan) / len(manifest)


# ---------------------------------------------------------------- execution

@dataclass
class ExecutionResult:
    manifest: CorpusManifest
    errors: list = field(default_factory=list)
    converted: int = 0
    skipped: int = 0


def _safe_name(record_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._#=+-]", "_", record_id)


def _file_sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _job_key(model_digest: str, source_sha: str, voice: str) -> str:
    return hashlib.sha256(f"{model_digest}|{source_sha}|{voice}".encode()).hexdigest()


def _convert_group(model, items, batch_size: int = 16):
    """items: list of (index, waveform, voice). Yields (index, waveform or exception)."""
    from .skinconv.convert import convert_batch

    results = []
    for lo in range(0, len(items), batch_size):
        chunk = items[lo: lo + batch_size]
        try:
            outs = convert_batch(model, [w for _, w, _ in chunk], [v for _, _, v in chunk])
            results += [(i, o.waveform) for (i, _, _), o in zip(chunk, outs)]
        except Exception:
            for i, w, v in chunk:
                try:
                    results.append((i, convert_batch(model, [w], [v])[0].waveform))
                except Exception as exc:  # recorded in the ledger, plan continues
                    results.append((i, exc))
    return results


def _convert_group_job(args):
    from .skinconv import checkpoint

    blob, items = args
    return _convert_group(checkpoint.loads(blob), items)


def execute_plan(plan, model, out_dir, workers: int = 1, batch_size: int = 16) -> ExecutionResult:
    """Write one skinned wav per plan entry and return the skinned manifest.

    Outputs whose sidecar key (model digest, source audio hash, voice) and
    content hash still match are reused. Failures go to `errors`.
    """
    from .skinconv import checkpoint

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = list(plan)
    model.speaker_table  # validates the table
    known = set(model.speaker_ids)
    blob = checkpoint.dumps(model)
    model_digest = hashlib.sha256(blob).hexdigest()

    outputs = [None] * len(plan)
    errors = {}
    pending = {}
    skipped = 0
    source_cache = {}
    for idx, entry in enumerate(plan):
        rec = entry.source
        target = out_dir / f"{_safe_name(entry.skinned_id)}.wav"
        sidecar = target.with_suffix(".wav.key")
        try:
            if entry.voice not in known:
                raise KeyError(f"unknown voice {entry.voice!r}")
            if rec.audio_path not in source_cache:
                src = Path(rec.audio_path)
                source_cache[rec.audio_path] = (read_wav(src), _file_sha(src))
            wav, src_sha = source_cache[rec.audio_path]
        except Exception as exc:
            errors[idx] = f"{type(exc).__name__}: {exc}"
            continue
        key = _job_key(model_digest, src_sha, entry.voice)
        outputs[idx] = (target, key)
        if target.exists() and sidecar.exists():
            stored = sidecar.read_text().split()
            if len(stored) == 2 and stored[0] == key and stored[1] == _file_sha(target):
                skipped += 1
                continue
        pending.setdefault(len(wav), []).append((idx, wav, entry.voice))

    groups = [pending[n] for n in sorted(pending)]
    if workers > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_convert_group_job, [(blob, g) for g in groups]))
    else:
        results = [_convert_group(model, g, batch_size) for g in groups]

    converted = 0
    for group in results:  # single writer, plan order within each group
        for idx, out in group:
            if isinstance(out, Exception):
                errors[idx] = f"{type(out).__name__}: {out}"
                outputs[idx] = None
                continue
            target, key = outputs[idx]
            write_wav(out, target)
            target.with_suffix(".wav.key").write_text(f"{key} {_file_sha(target)}\n")
            converted += 1

    records = []
    ledger = []
    for idx, entry in enumerate(plan):
        if idx in errors:
            ledger.append(LedgerEntry(entry.source, errors[idx]))
            continue
        target, _ = outputs[idx]
        src = entry.source
        records.append(UtteranceRecord(
            id=entry.skinned_id, audio_path=str(target.resolve()), speaker_id=entry.voice,
            transcript=src.transcript, translation=src.translation, origin="skinned",
            source_id=src.id, skin_voice=entry.voice))
    for e in ledger:
        log.warning("conversion failed for %s: %s", e.record.id, e.error)
    return ExecutionResult(CorpusManifest(tuple(records)), ledger, converted, skipped)


# ---------------------------------------------------------------- manifest algebra

def merge(manifests) -> CorpusManifest:
    """Concatenate manifests; any id shared between inputs is an error."""
    records = []
    seen = {}
    for k, m in enumerate(manifests):
        for r in m:
            if r.id in seen:
                raise ManifestError(f"duplicate id {r.id!r} in inputs {seen[r.id]} and {k}")
            seen[r.id] = k
            records.append(r)
    return CorpusManifest(tuple(records))


def normalize_transcript(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    text = "".join(" " if (ch in string.punctuation or unicodedata.category(ch).startswith("P"))
                   else ch for ch in text.lower())
    return " ".join(text.split())


def filter_leakage(train: CorpusManifest, test: CorpusManifest, mode: str = "by_speaker"
                   ) -> CorpusManifest:
    if mode == "by_speaker":
        banned = {r.speaker_id for r in test}
        kept = [r for r in train if r.speaker_id not in banned]
    elif mode == "by_transcript":
        banned = {normalize_transcript(r.transcript) for r in test if r.transcript is not None}
        kept = [r for r in train
                if r.transcript is None or normalize_transcript(r.transcript) not in banned]
    else:
        raise ValueError(f"unknown leakage mode {mode!r}")
    return CorpusManifest(tuple(kept))


def normalize_testset(test: CorpusManifest, model, voices, out_dir, expected_voices: int | None = 8,
                      workers: int = 1):
    """One fully skinned copy of the test set per voice.

    Returns (manifests, errors); manifest k is entirely in voices[k].
    """
    voices = list(voices)
    if expected_voices is not None and len(voices) != expected_voices:
        raise ValueError(f"expected {expected_voices} normalization voices, got {len(voices)}")
    known = set(model.speaker_ids)
    missing = [v for v in voices if v not in known]
    if missing:
        raise ValueError(f"voices not in the converter's speaker table: {missing}")
    out_dir = Path(out_dir)
    manifests, errors = [], []
    for v in voices:
        plan = [PlanEntry(r, v) for r in test]
        res = execute_plan(plan, model, out_dir / f"voice_{_safe_name(v)}", workers)
        manifests.append(res.manifest)
        errors += res.errors
    return manifests, errors
