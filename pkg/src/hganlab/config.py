"""Experiment configuration files.

A config is plain text with ``[section]`` headers and ``key = value`` lines;
``#`` starts a comment. Sections: ``dataset``, ``model``, ``training``,
``evaluation``, ``defense``. Every key has a default, except ``variant`` in
``[training]``, which must be given. Unknown sections or keys are errors.
Tuples are written comma-separated (``hidden = 128, 128``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .data import DatasetConfig
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "EvalSettings",
    "DefenseSettings",
    "ExperimentConfig",
    "parse_config",
    "serialize_config",
    "load_config",
    "default_config_text",
]

REQUIRED = {("training", "variant")}

# TrainConfig fields that live under [model] rather than [training]
_MODEL_KEYS = (
    "latent_dim",
    "generator_hidden",
    "discriminator_hidden",
    "ar_hidden",
    "generator_output",
    "ar_head",
    "ar_sigma",
    "ar_components",
    "init_std",
)


class ConfigError(ValueError):
    """Bad config text; ``line`` is 1-based, or None when not tied to a line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class EvalSettings:
    n_samples: int = 10000
    min_count: int = 1
    classifier_samples: int = 20000
    classifier_epochs: int = 10
    seeds: tuple = (0, 1, 2, 3, 4)
    variants: tuple = ("hgan", "gan", "autogan")


@dataclass
class DefenseSettings:
    attack: str = "fgsm"
    epsilon: float = 0.3
    pgd_steps: int = 40
    pgd_step_size: float = 0.01
    L: int = 200
    R: int = 10
    learning_rate: float = 0.05
    L_values: tuple = (10, 50, 100, 200)
    R_values: tuple = (1, 5, 10)
    n_test: int = 500
    classifier_samples: int = 20000
    classifier_epochs: int = 10
    seeds: tuple = (0, 1, 2)


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalSettings = field(default_factory=EvalSettings)
    defense: DefenseSettings = field(default_factory=DefenseSettings)

    def __post_init__(self):
        self.train.dataset = self.dataset


def _section_fields(cfg: ExperimentConfig):
    """section -> list of (key, owner object)."""
    train_keys = [f.name for f in fields(TrainConfig) if f.name != "dataset"]
    return {
        "dataset": [(f.name, cfg.dataset) for f in fields(DatasetConfig)],
        "model": [(k, cfg.train) for k in _MODEL_KEYS],
        "training": [(k, cfg.train) for k in train_keys if k not in _MODEL_KEYS],
        "evaluation": [(f.name, cfg.evaluation) for f in fields(EvalSettings)],
        "defense": [(f.name, cfg.defense) for f in fields(DefenseSettings)],
    }


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _convert(raw: str, like, line: int, key: str):
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError("expected true or false")
            return low == "true"
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            sample = like[0] if like else ""
            return tuple(_convert(s, sample, line, key) for s in items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {key}: {exc}", line) from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text; raises :class:`ConfigError` with the offending line."""
    defaults = ExperimentConfig()
    sections = _section_fields(defaults)
    values: dict = {}
    seen = set()
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in sections:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw_line.strip()!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any section", lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        owners = dict(sections[section])
        if key not in owners:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno)
        seen.add((section, key))
        values[(section, key)] = _convert(raw, getattr(owners[key], key), lineno, key)
    missing = sorted(REQUIRED - seen)
    if missing:
        raise ConfigError("missing required key " + ", ".join(f"{k!r} in [{s}]" for s, k in missing))

    ds_kw = {k: v for (s, k), v in values.items() if s == "dataset"}
    tr_kw = {k: v for (s, k), v in values.items() if s in ("model", "training")}
    ev_kw = {k: v for (s, k), v in values.items() if s == "evaluation"}
    df_kw = {k: v for (s, k), v in values.items() if s == "defense"}
    try:
        dataset = DatasetConfig(**ds_kw)
        train = TrainConfig(dataset=dataset, **tr_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(dataset, train, EvalSettings(**ev_kw), DefenseSettings(**df_kw))


def serialize_config(cfg: ExperimentConfig) -> str:
    """Full config text with every key written out; ``parse_config`` inverts it."""
    out = []
    for section, keys in _section_fields(cfg).items():
        out.append(f"[{section}]")
        for key, owner in keys:
            out.append(f"{key} = {_format(getattr(owner, key))}")
        out.append("")
    return "\n".join(out)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def default_config_text(variant: str = "hgan") -> str:
    cfg = ExperimentConfig()
    cfg.train = dataclasses.replace(cfg.train, variant=variant)
    return serialize_config(cfg)
