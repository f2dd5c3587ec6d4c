"""Run configuration: one JSON document with six sections, schema-validated
up front. Unknown keys are rejected; flags override config, config overrides
defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .perturb import PERTURBATION_KINDS


class ConfigError(ValueError):
    """Raised on schema violations in config documents."""


@dataclass
class DataSection:
    n_pos: int = 50
    n_neg: int = 100
    n_frames: int = 50
    dim: int = 16
    fps: float = 20.0
    toa: int = 45
    separability: float = 4.0
    seed: int = 7
    test_fraction: float = 0.2


@dataclass
class ModelSection:
    text_dim: int = 768
    heads: int = 8
    temperature: float = 0.07
    seed: int = 0
    text_encoder: str = "mock"  # mock | external
    text_encoder_seed: int = 0
    embeddings_file: str | None = None
    frame_encoder: str = "mock"  # mock | feature-file
    frame_encoder_seed: int = 0

    def __post_init__(self):
        if self.text_encoder not in ("mock", "external"):
            raise ConfigError(f"text_encoder must be 'mock' or 'external', got {self.text_encoder!r}")
        if self.frame_encoder not in ("mock", "feature-file"):
            raise ConfigError(
                f"frame_encoder must be 'mock' or 'feature-file', got {self.frame_encoder!r}"
            )


@dataclass
class TrainSection:
    epochs: int = 30
    batch_size: int = 10
    lr: float = 1e-3
    threshold_lr: float = 1e-1
    weight_decay: float = 1e-4
    scheduler_factor: float = 0.5
    scheduler_patience: int = 3
    mil_top_k: int = 20
    seed: int = 0
    single_thread: bool = True


@dataclass
class EvalSection:
    tau_override: float | None = None


@dataclass
class RobustnessSection:
    kinds: list[str] = field(default_factory=lambda: list(PERTURBATION_KINDS))
    block: int = 10
    period: int = 40
    offset: int = 20
    mode: str = "blank"
    noise_std: float = 25.0
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.kinds) - set(PERTURBATION_KINDS)
        if unknown:
            raise ConfigError(f"unknown perturbation kinds: {sorted(unknown)}")


@dataclass
class AlertsSection:
    advisory_band: float = 0.3
    warning_band: float = 0.5
    critical_band: float = 0.8
    escalation_min_score: float = 0.3
    friendly_reminders: bool = False
    distance_class: str = "far"
    agents: dict[str, int] = field(default_factory=dict)


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    robustness: RobustnessSection = field(default_factory=RobustnessSection)
    alerts: AlertsSection = field(default_factory=AlertsSection)


_SECTION_TYPES = {
    "data": DataSection,
    "model": ModelSection,
    "train": TrainSection,
    "eval": EvalSection,
    "robustness": RobustnessSection,
    "alerts": AlertsSection,
}


def _build_section(section_type, raw: dict, name: str):
    fields = {f.name for f in dataclasses.fields(section_type)}
    unknown = set(raw) - fields
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    try:
        return section_type(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {name!r}: {exc}") from exc


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(raw) - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sections = {}
    for name, section_type in _SECTION_TYPES.items():
        section_raw = raw.get(name, {})
        if not isinstance(section_raw, dict):
            raise ConfigError(f"section {name!r} must be a JSON object")
        sections[name] = _build_section(section_type, section_raw, name)
    return RunConfig(**sections)


def load_config(path: str | Path | None = None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def config_to_dict(config: RunConfig) -> dict:
    return dataclasses.asdict(config)
