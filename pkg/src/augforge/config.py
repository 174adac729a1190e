"""Pipeline configuration: one YAML file of nested sections, strictly validated.

Precedence: command-line flags > config file > built-in defaults.
"""
from __future__ import annotations

import dataclasses
import difflib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .skinconv.model import ConverterConfig
from .skinconv.train import TrainConfig


class ConfigError(ValueError):
    """Carries every validation problem found, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


@dataclass
class PathsSection:
    train_manifest: str | None = None
    test_manifest: str | None = None
    checkpoint: str | None = None
    out_dir: str | None = None
    log_file: str | None = None


@dataclass
class LeakageSection:
    mode: str = "by_speaker"  # by_speaker | by_transcript | waived


@dataclass
class AugmentSection:
    fraction: float = 0.25
    num_skins: int = 16
    voices: list | None = None
    include_original: bool = True


@dataclass
class SpecAugmentSection:
    warp_w: int = 80
    freq_mask_f: int = 27
    n_freq_masks: int = 2
    time_mask_t: int = 100
    n_time_masks: int = 2
    time_mask_ratio_cap: float = 1.0
    mask_value: float | str = "mean"
    p: float = 0.5
    batch_size: int = 1


@dataclass
class NormalizeSection:
    voices: list | None = None
    expected_voices: int | None = None


@dataclass
class MetricsSection:
    max_n: int = 4
    smoothing: str = "none"
    lowercase: bool = False


@dataclass
class PipelineConfig:
    seed: int = 0
    workers: int | None = None
    paths: PathsSection = field(default_factory=PathsSection)
    converter: ConverterConfig = field(default_factory=ConverterConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    leakage: LeakageSection = field(default_factory=LeakageSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    specaugment: SpecAugmentSection = field(default_factory=SpecAugmentSection)
    normalize: NormalizeSection = field(default_factory=NormalizeSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    base_dir: Path = field(default_factory=Path.cwd, repr=False)

    def path(self, name: str) -> Path | None:
        value = getattr(self.paths, name)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


SECTIONS = {
    "paths": PathsSection, "converter": ConverterConfig, "training": TrainConfig,
    "leakage": LeakageSection, "augment": AugmentSection, "specaugment": SpecAugmentSection,
    "normalize": NormalizeSection, "metrics": MetricsSection,
}
TOP_SCALARS = ("seed", "workers")
# stochastic stages take the global seed instead
SEEDED_ELSEWHERE = {"training": ("seed",)}


def _field_names(cls, section: str):
    skip = SEEDED_ELSEWHERE.get(section, ())
    return [f.name for f in dataclasses.fields(cls) if f.name not in skip]


def _unknown(key: str, allowed, where: str) -> str:
    msg = f"unknown key {key!r} in {where}"
    close = difflib.get_close_matches(key, list(allowed), n=1, cutoff=0.6)
    if close:
        msg += f"; did you mean {close[0]!r}?"
    return msg


def build_config(raw: dict | None, base_dir: Path | None = None) -> PipelineConfig:
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    problems = []
    kwargs = {}
    allowed_top = list(TOP_SCALARS) + list(SECTIONS)
    for key, value in raw.items():
        if key in TOP_SCALARS:
            kwargs[key] = value
        elif key in SECTIONS:
            cls = SECTIONS[key]
            names = _field_names(cls, key)
            if value is None:
                value = {}
            if not isinstance(value, dict):
                problems.append(f"section {key!r} must be a mapping")
                continue
            bad = [k for k in value if k not in names]
            problems += [_unknown(k, names, f"section {key!r}") for k in bad]
            if bad:
                continue
            try:
                kwargs[key] = cls(**value)
            except (TypeError, ValueError) as exc:
                problems.append(f"section {key!r}: {exc}")
        else:
            problems.append(_unknown(key, allowed_top, "config"))
    if problems:
        raise ConfigError(problems)
    cfg = PipelineConfig(**kwargs, base_dir=base_dir or Path.cwd())
    problems += _check_types(cfg)
    if problems:
        raise ConfigError(problems)
    cfg.training = dataclasses.replace(cfg.training, seed=int(cfg.seed))
    return cfg


def _check_types(cfg: PipelineConfig) -> list[str]:
    problems = []
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool):
        problems.append("seed must be an integer")
    if cfg.workers is not None and (not isinstance(cfg.workers, int) or cfg.workers < 1):
        problems.append("workers must be a positive integer")
    if cfg.leakage.mode not in ("by_speaker", "by_transcript", "waived"):
        problems.append(f"leakage.mode must be by_speaker, by_transcript or waived, "
                        f"got {cfg.leakage.mode!r}")
    a = cfg.augment
    if not 0 < float(a.fraction) <= 1:
        problems.append("augment.fraction must lie in (0, 1]")
    if int(a.num_skins) < 1:
        problems.append("augment.num_skins must be >= 1")
    if a.voices is not None and len(a.voices) != a.num_skins:
        problems.append(f"augment.voices lists {len(a.voices)} voices but num_skins is {a.num_skins}")
    s = cfg.specaugment
    if not 0 <= float(s.p) <= 1:
        problems.append("specaugment.p must lie in [0, 1]")
    if int(s.batch_size) < 1:
        problems.append("specaugment.batch_size must be >= 1")
    if cfg.metrics.smoothing not in ("none", "add1"):
        problems.append("metrics.smoothing must be 'none' or 'add1'")
    return problems


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file {path} does not exist"])
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: invalid YAML ({exc})"]) from None
    return build_config(raw, path.resolve().parent)
