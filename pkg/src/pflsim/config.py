"""Experiment configuration: strict TOML schema with lossless round-trip.

One human-readable file with a section per subsystem drives the experiment
runner.  Unknown sections or keys are rejected with the offending location;
missing keys take the documented defaults.  ``load_config(dumps(cfg))``
reproduces ``cfg`` exactly, and the canonical emission order makes dumped
configs diff-stable.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 environments
    import tomli as tomllib

from .errors import ConfigError

PROTOCOLS = ("fedavg", "fedshampoo", "fl-group-dp", "dp-clgecl")


@dataclass(frozen=True)
class ExperimentSection:
    seed: int = 0
    protocol: str = "fedavg"
    rounds: int = 10
    clients_per_round: Optional[int] = 2
    client_prob: Optional[float] = None
    jobs: int = 1


@dataclass(frozen=True)
class DatasetSection:
    n_clients: int = 10
    providers_per_client: Union[int, Tuple[int, ...]] = 20
    records_per_provider: Union[int, Tuple[int, int]] = 30
    feature_dim: int = 32
    n_classes: int = 10
    heterogeneity: float = 0.5
    conditioning: float = 1.0
    class_separation: float = 2.0
    feature_noise: float = 0.5
    validation_size: int = 500
    unseen_provider_fraction: float = 0.5


@dataclass(frozen=True)
class ModelSection:
    hidden: Tuple[int, ...] = (64,)
    activation: str = "tanh"
    frozen_layers: Tuple[str, ...] = ()


@dataclass(frozen=True)
class OptimizerSection:
    kind: str = "adamw"
    lr: float = 1e-3
    momentum: float = 0.9
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass(frozen=True)
class ShampooSection:
    lr: float = 2e-4
    clip: float = 0.2
    inner_steps: int = 200
    stat_interval: int = 10
    precond_interval: int = 100
    ridge: float = 1e-4


@dataclass(frozen=True)
class LocalSection:
    epochs: int = 1
    batch_size: int = 32
    t_gd: int = 1


@dataclass(frozen=True)
class DpSection:
    clip_norm: float = 0.5
    providers_per_round: int = 5
    target_epsilon: Optional[float] = None
    noise_multiplier: Optional[float] = None
    delta: float = 1e-5
    provider_sampling: str = "fixed"
    lambda_init_scale: float = 0.01


@dataclass(frozen=True)
class LoraSection:
    rank: int = 0  # 0 disables LoRA
    targets: Tuple[str, ...] = ()  # empty with rank > 0 adapts every layer
    scaling: float = 0.0  # 0 means the 1/rank default
    init_std: float = 0.1


@dataclass(frozen=True)
class WireSection:
    quantize: bool = False
    gb_convention: str = "decimal"


@dataclass(frozen=True)
class OutputSection:
    directory: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    shampoo: ShampooSection = field(default_factory=ShampooSection)
    local: LocalSection = field(default_factory=LocalSection)
    dp: DpSection = field(default_factory=DpSection)
    lora: LoraSection = field(default_factory=LoraSection)
    wire: WireSection = field(default_factory=WireSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "ExperimentConfig":
        exp = self.experiment
        if exp.protocol not in PROTOCOLS:
            raise ConfigError(
                f"[experiment] protocol must be one of {PROTOCOLS}, got {exp.protocol!r}"
            )
        if exp.rounds < 1:
            raise ConfigError("[experiment] rounds must be >= 1")
        if (exp.clients_per_round is None) == (exp.client_prob is None):
            raise ConfigError(
                "[experiment] set exactly one of clients_per_round / client_prob"
            )
        if exp.jobs < 1:
            raise ConfigError("[experiment] jobs must be >= 1")
        if self.wire.gb_convention not in ("decimal", "binary"):
            raise ConfigError("[wire] gb_convention must be 'decimal' or 'binary'")
        if self.dp.provider_sampling not in ("fixed", "poisson"):
            raise ConfigError("[dp] provider_sampling must be 'fixed' or 'poisson'")
        if self.lora.rank < 0:
            raise ConfigError("[lora] rank must be >= 0")
        return self


_SECTIONS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
_SECTION_TYPES = {
    "experiment": ExperimentSection,
    "dataset": DatasetSection,
    "model": ModelSection,
    "optimizer": OptimizerSection,
    "shampoo": ShampooSection,
    "local": LocalSection,
    "dp": DpSection,
    "lora": LoraSection,
    "wire": WireSection,
    "output": OutputSection,
}


def _coerce(section: str, key: str, default, value):
    """Type-check one TOML value against the schema default's type."""
    where = f"[{section}] {key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        return tuple(value)
    raise ConfigError(f"{where}: unsupported value")


# Optional keys (absent means None) and int-or-list keys need explicit handling.
_OPTIONAL_FLOAT = {("experiment", "client_prob"), ("dp", "target_epsilon"), ("dp", "noise_multiplier")}
_OPTIONAL_INT = {("experiment", "clients_per_round")}
_INT_OR_LIST = {("dataset", "providers_per_client"), ("dataset", "records_per_provider")}


def config_from_dict(raw: Dict) -> ExperimentConfig:
    """Build and validate a config from a parsed TOML mapping (strict keys)."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    unknown_sections = set(raw) - set(_SECTION_TYPES)
    if unknown_sections:
        raise ConfigError(f"unknown config section(s): {sorted(unknown_sections)}")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        data = raw.get(name, {})
        if not isinstance(data, dict):
            raise ConfigError(f"[{name}] must be a table")
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(fields)
        if unknown:
            raise ConfigError(f"[{name}] unknown key(s): {sorted(unknown)}")
        kwargs = {}
        defaults = cls()
        for key, f in fields.items():
            if key not in data:
                continue
            value = data[key]
            if (name, key) in _OPTIONAL_FLOAT:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"[{name}] {key}: expected a number")
                kwargs[key] = float(value)
            elif (name, key) in _OPTIONAL_INT:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"[{name}] {key}: expected an integer")
                kwargs[key] = value
            elif (name, key) in _INT_OR_LIST:
                if isinstance(value, int) and not isinstance(value, bool):
                    kwargs[key] = value
                elif isinstance(value, list):
                    kwargs[key] = tuple(value)
                else:
                    raise ConfigError(f"[{name}] {key}: expected an integer or a list")
            else:
                kwargs[key] = _coerce(name, key, getattr(defaults, key), value)
        # Explicitly choosing client_prob must clear the clients_per_round default.
        if name == "experiment" and "client_prob" in kwargs and "clients_per_round" not in data:
            kwargs["clients_per_round"] = None
        sections[name] = cls(**kwargs)
    return ExperimentConfig(**sections).validate()


def load_config(text_or_path) -> ExperimentConfig:
    """Parse a TOML config from a string or a file path."""
    text = text_or_path
    if "\n" not in text and not text.lstrip().startswith("["):
        with open(text_or_path, "rb") as fh:
            raw = tomllib.load(fh)
    else:
        raw = tomllib.loads(text)
    return config_from_dict(raw)


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_render(v) for v in value) + "]"
    raise ConfigError(f"cannot render config value {value!r}")


def dumps(config: ExperimentConfig) -> str:
    """Canonical TOML emission (schema order, None keys omitted)."""
    lines = []
    for name, cls in _SECTION_TYPES.items():
        section = getattr(config, name)
        lines.append(f"[{name}]")
        for f in dataclasses.fields(cls):
            value = getattr(section, f.name)
            if value is None:
                continue
            lines.append(f"{f.name} = {_render(value)}")
        lines.append("")
    return "\n".join(lines)


def write_config(config: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(config))
