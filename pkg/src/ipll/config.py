"""Experiment configuration and its flat ``key = value`` file format.

Every field of :class:`PGDRConfig` maps to one key in :data:`KEYS`. Lines
starting with ``#`` and blank lines are ignored; unknown keys are an error.
The ``IPLL_SEED`` environment variable overrides ``seed``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from ipll.datagen import DatasetSpec, StreamSpec
from ipll.disambiguation import SeparationConfig
from ipll.errors import ConfigError
from ipll.memory import MemoryConfig
from ipll.model import ACTIVATIONS, LossWeights

VARIANTS = (
    "PGDR", "MP", "PP", "NO_MEMORY", "RANDOM_MEMORY",
    "DISTANCE_MEMORY", "LINEAR_EVAL", "NO_CR", "NO_KD",
)
EVAL_MODES = ("prototype", "linear")


@dataclass(frozen=True)
class PGDRConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    lr_step: int = 0
    lr_decay: float = 0.1
    sgd_momentum: float = 0.9
    hidden_dim: int = 32
    activation: str = "relu"
    kd_temperature: float = 1.0
    aug_weak: float = 0.05
    aug_strong: float = 0.2
    gamma: float = 0.5
    freeze_memory_labels: bool = False
    variant: str = "PGDR"
    eval_classifier: str = "prototype"
    seed: int = 0
    loss: LossWeights = field(default_factory=LossWeights)
    separation: SeparationConfig = field(default_factory=SeparationConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and hidden_dim >= 1 are required")
        if self.lr < 0 or not 0.0 <= self.sgd_momentum < 1.0:
            raise ConfigError("lr must be >= 0 and sgd_momentum in [0, 1)")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.eval_classifier not in EVAL_MODES:
            raise ConfigError(f"eval_classifier must be one of {EVAL_MODES}")
        if self.kd_temperature <= 0 or self.aug_weak < 0 or self.aug_strong < 0:
            raise ConfigError("kd_temperature must be > 0 and augmentation scales >= 0")
        if min(self.loss.w_ce, self.loss.w_kd, self.loss.w_cr) < 0:
            raise ConfigError("loss weights must be non-negative")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (section, field, parser); section None means a top-level field
KEYS: dict[str, tuple[str | None, str, type]] = {
    "epochs": (None, "epochs", int),
    "batch_size": (None, "batch_size", int),
    "lr": (None, "lr", float),
    "lr_step": (None, "lr_step", int),
    "lr_decay": (None, "lr_decay", float),
    "sgd_momentum": (None, "sgd_momentum", float),
    "hidden_dim": (None, "hidden_dim", int),
    "activation": (None, "activation", str),
    "kd_temperature": (None, "kd_temperature", float),
    "aug_weak": (None, "aug_weak", float),
    "aug_strong": (None, "aug_strong", float),
    "gamma": (None, "gamma", float),
    "freeze_memory_labels": (None, "freeze_memory_labels", _bool),
    "variant": (None, "variant", str),
    "eval_classifier": (None, "eval_classifier", str),
    "seed": (None, "seed", int),
    "w_ce": ("loss", "w_ce", float),
    "w_kd": ("loss", "w_kd", float),
    "w_cr": ("loss", "w_cr", float),
    "alpha": ("separation", "alpha", float),
    "beta_start": ("separation", "beta_start", float),
    "beta_end": ("separation", "beta_end", float),
    "em_tol": ("separation", "em_tol", float),
    "em_max_iter": ("separation", "em_max_iter", int),
    "argmax_space": ("separation", "argmax_space", str),
    "memory_budget": ("memory", "budget", int),
    "knn_k": ("memory", "knn_k", int),
    "diverse_fraction": ("memory", "diverse_fraction", float),
}


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def config_from_dict(values: dict[str, str], base: PGDRConfig | None = None) -> PGDRConfig:
    base = base or PGDRConfig()
    top: dict = {}
    sections: dict[str, dict] = {"loss": {}, "separation": {}, "memory": {}}
    for key, text in values.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        section, name, parse = KEYS[key]
        try:
            value = parse(text) if isinstance(text, str) else text
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
        (top if section is None else sections[section])[name] = value
    for section, fields in sections.items():
        if fields:
            top[section] = replace(getattr(base, section), **fields)
    return replace(base, **top)


def config_to_dict(config: PGDRConfig) -> dict[str, object]:
    out = {}
    for key, (section, name, _) in KEYS.items():
        owner = config if section is None else getattr(config, section)
        out[key] = getattr(owner, name)
    return out


def load_config(path: str | Path, env: dict | None = None) -> PGDRConfig:
    config = config_from_dict(parse_kv(Path(path).read_text()))
    env = os.environ if env is None else env
    if env.get("IPLL_SEED"):
        config = replace(config, seed=int(env["IPLL_SEED"]))
    return config


def dump_config(config: PGDRConfig) -> str:
    lines = []
    for key, value in config_to_dict(config).items():
        if isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


DATASET_KEYS = {
    "num_classes": int, "feature_dim": int, "samples_per_class": int, "test_per_class": int,
    "cluster_separation": float, "cluster_stddev": float,
}
STREAM_KEYS = {"tasks": int, "w": int, "q": float, "flip_mode": str}


def load_generation_spec(path: str | Path, env: dict | None = None) -> tuple[DatasetSpec, StreamSpec]:
    """Dataset and stream settings from one ``key = value`` file; ``seed`` seeds both."""
    values = parse_kv(Path(path).read_text())
    env = os.environ if env is None else env
    ds, ss = {}, {}
    seed = int(values.pop("seed", 0))
    if env.get("IPLL_SEED"):
        seed = int(env["IPLL_SEED"])
    for key, text in values.items():
        if key in DATASET_KEYS:
            ds[key] = DATASET_KEYS[key](text)
        elif key in STREAM_KEYS:
            ss[key] = STREAM_KEYS[key](text)
        else:
            raise ConfigError(f"unknown generation key {key!r}")
    return DatasetSpec(seed=seed, **ds), StreamSpec(seed=seed, **ss)


__all__ = [
    "EVAL_MODES", "KEYS", "PGDRConfig", "VARIANTS", "config_from_dict",
    "config_to_dict", "dump_config", "load_config", "load_generation_spec", "parse_kv",
]
