"""Experiment configuration: one JSON document drives every stage.

The schema is the nested dataclass tree rooted at ExperimentConfig; the
sub-configs owned by other modules (classifier, generator, fine-tuning,
attacks) are reused directly so the JSON keys always match the code.
Unknown keys anywhere in the document fail validation with a message
listing every offender by dotted path, so typos cannot silently fall back
to defaults.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .ace import FinetuneConfig
from .attacks import AttackConfig
from .classifier import ClassifierConfig
from .errors import AceLabError, ConfigError
from .pce import PceConfig


@dataclass
class DataConfig:
    """Two-moons synthesis plus its two OOD companions."""

    n: int = 2000
    noise: float = 0.1
    test_fraction: float = 0.5
    near_n: int = 1000
    near_noise: float = 0.1
    far_n: int = 1000
    far_box: float = 4.0
    far_exclusion: float = 0.5

    def __post_init__(self):
        bad = []
        if self.n < 8:
            bad.append(f"n={self.n}")
        if self.noise < 0:
            bad.append(f"noise={self.noise}")
        if not 0.0 < self.test_fraction < 1.0:
            bad.append(f"test_fraction={self.test_fraction}")
        if self.near_n < 1 or self.far_n < 1:
            bad.append(f"near_n={self.near_n}, far_n={self.far_n}")
        if self.far_box <= 0 or self.far_exclusion < 0:
            bad.append(f"far_box={self.far_box}, far_exclusion={self.far_exclusion}")
        if bad:
            raise ConfigError("invalid data config: " + ", ".join(bad))


@dataclass
class AceConfig:
    """Counterfactual augmentation: draws per source sample, the fraction
    of training data used as generation sources, and the augmented
    fraction of the fine-tuning mix."""

    m: int = 4
    source_fraction: float = 0.5
    rho: float = 0.3

    def __post_init__(self):
        bad = []
        if self.m < 1:
            bad.append(f"m={self.m}")
        if not 0.0 < self.source_fraction <= 1.0:
            bad.append(f"source_fraction={self.source_fraction}")
        if not 0.0 <= self.rho < 1.0:
            bad.append(f"rho={self.rho}")
        if bad:
            raise ConfigError("invalid ace config: " + ", ".join(bad))


@dataclass
class MetricConfig:
    mc_samples: int = 20
    ece_bins: int = 15
    tpr_target: float = 0.95
    aid_fraction: float = 0.05

    def __post_init__(self):
        bad = []
        if self.mc_samples < 1:
            bad.append(f"mc_samples={self.mc_samples}")
        if self.ece_bins < 1:
            bad.append(f"ece_bins={self.ece_bins}")
        if not 0.0 < self.tpr_target <= 1.0:
            bad.append(f"tpr_target={self.tpr_target}")
        if not 0.0 < self.aid_fraction < 1.0:
            bad.append(f"aid_fraction={self.aid_fraction}")
        if bad:
            raise ConfigError("invalid metric config: " + ", ".join(bad))


@dataclass
class ExperimentConfig:
    seed: int = 7
    out_dir: str = "runs/two-moons"
    h: float = 0.5
    data: DataConfig = field(default_factory=DataConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    pce: PceConfig = field(default_factory=PceConfig)
    ace: AceConfig = field(default_factory=AceConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    attacks: AttackConfig = field(default_factory=AttackConfig)

    def __post_init__(self):
        if not 0.0 < self.h < 1.0:
            raise ConfigError(f"invalid config: h={self.h} not in (0, 1)")
        if self.seed < 0:
            raise ConfigError(f"invalid config: seed={self.seed} must be >= 0")


def default_config() -> ExperimentConfig:
    """The packaged two-moons reference configuration.

    Dataclass defaults carry per-module neutral values; the tuned
    generator weights that define the reference run live here (and in the
    packaged JSON, which tests pin against this function).
    """
    cfg = ExperimentConfig()
    cfg.pce.lambda_f = 30.0
    cfg.pce.lambda_rec = 25.0
    cfg.pce.background_fraction = 1.5
    return cfg


def to_dict(cfg) -> dict:
    """Nested plain-dict form of any config dataclass (JSON-ready)."""
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def _build(cls, doc: dict, path: str, problems: list[str]):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in sorted(set(doc) - names):
        problems.append(f"{path}{key}" if path else key)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in doc:
            continue
        v = doc[f.name]
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            if not isinstance(v, dict):
                problems.append(f"{path}{f.name} (expected an object)")
                continue
            kwargs[f.name] = _build(hint, v, f"{path}{f.name}.", problems)
        elif typing.get_origin(hint) is tuple and isinstance(v, list):
            kwargs[f.name] = tuple(v)
        elif isinstance(v, list):
            # Optional tuple fields (e.g. attack clip boxes) arrive as lists.
            kwargs[f.name] = tuple(v)
        else:
            kwargs[f.name] = v
    if problems:
        return None
    try:
        return cls(**kwargs)
    except AceLabError:
        raise
    except TypeError as exc:
        raise ConfigError(f"invalid config near {path or 'top level'}: {exc}") from None


def from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be an object, got {type(doc).__name__}")
    problems: list[str] = []
    cfg = _build(ExperimentConfig, doc, "", problems)
    if problems:
        raise ConfigError("unknown config keys: " + ", ".join(problems))
    return cfg


def load_config(path: Path) -> ExperimentConfig:
    from .persist import read_json

    return from_dict(read_json(Path(path)))


def save_config(path: Path, cfg: ExperimentConfig) -> None:
    from .persist import write_json

    write_json(Path(path), to_dict(cfg))


def packaged_config_path() -> Path:
    return Path(__file__).parent / "configs" / "two-moons-default.json"


__all__ = [
    "DataConfig",
    "AceConfig",
    "MetricConfig",
    "ExperimentConfig",
    "default_config",
    "to_dict",
    "from_dict",
    "load_config",
    "save_config",
    "packaged_config_path",
]
