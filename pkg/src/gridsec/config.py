"""Experiment configuration: one JSON document with named sections
mirroring each module's config type.

Parsing is strict: unknown keys are rejected with their full field path,
so a misspelled option can never fall back to a silent default. Every
artifact embeds the resolved config and its hash for provenance.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields

from .advattack import PerturbationBudget, SRAFConfig, Trigger
from .defense import AugmentConfig, CureConfig
from .extraction import SCENARIOS, ExtractionConfig
from .inversion import InversionConfig
from .modelcore import TrainConfig
from .synthgrid import ClipParams, DatasetConfig, FamilyConfig, default_dataset_config

ENV_OUT_ROOT = "GRIDSEC_OUT"


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"config error at {path!r}: {message}")


@dataclass(frozen=True)
class InversionSection:
    steps: int = 150
    step_size: float = 2.0
    bn_weight: float = 0.01
    batch_size: int = 8
    trials: int = 20
    seed: int = 7


@dataclass(frozen=True)
class AdvSection:
    epsilon: float = 0.1
    steps: int = 10
    random_start: bool = False
    n_eval: int = 40


@dataclass(frozen=True)
class ClipSection:
    grid: int = 32
    num_rects_min: int = 2
    num_rects_max: int = 5
    rect_size_min: int = 3
    rect_size_max: int = 6
    s_min: float = 12.0
    train_count: int = 500
    eval_count: int = 160
    seed: int = 11
    epochs: int = 12
    lr: float = 0.05

    def params(self) -> ClipParams:
        return ClipParams(grid=self.grid, num_rects_range=(self.num_rects_min, self.num_rects_max),
                          rect_size_range=(self.rect_size_min, self.rect_size_max), s_min=self.s_min)


@dataclass(frozen=True)
class SRAFSection:
    rect_w: int = 2
    rect_h: int = 2
    max_insertions: int = 8
    min_spacing: int = 2

    def config(self) -> SRAFConfig:
        return SRAFConfig(rect=(self.rect_w, self.rect_h), max_insertions=self.max_insertions,
                          min_spacing=self.min_spacing)


@dataclass(frozen=True)
class PoisonSection:
    rate: float = 0.10
    trigger_size: int = 4
    channel: int = 2
    location: str = "nw"
    seed: int = 5

    def trigger(self) -> Trigger:
        import numpy as np

        return Trigger(pattern=np.ones((self.trigger_size, self.trigger_size), dtype=np.float32),
                       channel=self.channel, location=self.location, target="zero-region")


@dataclass(frozen=True)
class DefenseSection:
    alpha: float = 0.3
    h: float = 1e-2

    def cure(self) -> CureConfig:
        return CureConfig(alpha=self.alpha, h=self.h)


@dataclass(frozen=True)
class ReliabilitySection:
    pca_k: int = 4


@dataclass(frozen=True)
class FederationSection:
    clients: int = 4
    rounds: int = 3
    local_epochs: int = 2
    poison_rate: float = 0.5
    lr: float = 0.05
    batch_size: int = 8
    seed: int = 3


@dataclass(frozen=True)
class FamilySection:
    name: str
    num_designs: int
    layouts_per_design: int
    size_class: str
    num_macros_min: int
    num_macros_max: int
    num_nets: int
    net_span_scale: float
    ff_count: int

    def family(self) -> FamilyConfig:
        return FamilyConfig(
            name=self.name, num_designs=self.num_designs,
            layouts_per_design=self.layouts_per_design, size_class=self.size_class,
            num_macros_range=(self.num_macros_min, self.num_macros_max),
            num_nets=self.num_nets, net_span_scale=self.net_span_scale, ff_count=self.ff_count,
        )


@dataclass(frozen=True)
class DatasetSection:
    families: tuple[FamilySection, ...] = ()
    smoothing_k: int = 3
    target_rate: float = 0.15
    rate_tolerance: float = 0.03
    make_split: bool = True

    def config(self, global_seed: int) -> DatasetConfig:
        if self.families:
            fams = tuple(f.family() for f in self.families)
            return DatasetConfig(global_seed=global_seed, families=fams,
                                 smoothing_k=self.smoothing_k, target_rate=self.target_rate,
                                 rate_tolerance=self.rate_tolerance, make_split=self.make_split)
        base = default_dataset_config(global_seed)
        return dataclasses.replace(base, smoothing_k=self.smoothing_k,
                                   target_rate=self.target_rate,
                                   rate_tolerance=self.rate_tolerance,
                                   make_split=self.make_split)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 2039
    out_root: str = "runs"
    scenario: str = "S1"
    dataset: DatasetSection = field(default_factory=DatasetSection)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=8, seed=2039))
    inversion: InversionSection = field(default_factory=InversionSection)
    extraction_pseudo_mode: str = "soft"
    extraction_cache_queries: bool = False
    extraction_width: int = 1
    adv: AdvSection = field(default_factory=AdvSection)
    clips: ClipSection = field(default_factory=ClipSection)
    sraf: SRAFSection = field(default_factory=SRAFSection)
    poison: PoisonSection = field(default_factory=PoisonSection)
    defense: DefenseSection = field(default_factory=DefenseSection)
    reliability: ReliabilitySection = field(default_factory=ReliabilitySection)
    federation: FederationSection = field(default_factory=FederationSection)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError("scenario", f"must be one of {sorted(SCENARIOS)}")

    def extraction(self) -> ExtractionConfig:
        return ExtractionConfig(train=self.train, pseudo_mode=self.extraction_pseudo_mode,
                                cache_queries=self.extraction_cache_queries,
                                width=self.extraction_width)

    def budget(self) -> PerturbationBudget:
        return PerturbationBudget(epsilon=self.adv.epsilon, steps=self.adv.steps,
                                  random_start=self.adv.random_start)

    def inversion_config(self, bn_weight: float | None = None) -> InversionConfig:
        w = self.inversion.bn_weight if bn_weight is None else bn_weight
        return InversionConfig(steps=self.inversion.steps, step_size=self.inversion.step_size,
                               bn_weight=w, batch_size=self.inversion.batch_size,
                               seed=self.inversion.seed)


_SECTION_TYPES = {
    "dataset": DatasetSection,
    "train": TrainConfig,
    "inversion": InversionSection,
    "adv": AdvSection,
    "clips": ClipSection,
    "sraf": SRAFSection,
    "poison": PoisonSection,
    "defense": DefenseSection,
    "reliability": ReliabilitySection,
    "federation": FederationSection,
}


def _parse_dataclass(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key == "families":
            if not isinstance(value, list):
                raise ConfigError(sub, "expected a list of family objects")
            kwargs[key] = tuple(_parse_dataclass(FamilySection, v, f"{sub}[{i}]")
                                for i, v in enumerate(value))
        elif key in _SECTION_TYPES and isinstance(value, dict):
            kwargs[key] = _parse_dataclass(_SECTION_TYPES[key], value, sub)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(path or "<root>", str(exc)) from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    return _parse_dataclass(ExperimentConfig, data, "")


def load_config(path: str | None) -> ExperimentConfig:
    """Load a config file, or the defaults when no path is given. The
    GRIDSEC_OUT environment variable overrides the default output root."""
    data: dict = {}
    if path is not None:
        with open(path) as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    cfg = config_from_dict(data)
    env_root = os.environ.get(ENV_OUT_ROOT)
    if env_root and "out_root" not in data:
        cfg = dataclasses.replace(cfg, out_root=env_root)
    return cfg


def config_to_dict(cfg) -> dict:
    if dataclasses.is_dataclass(cfg):
        out = {}
        for f in fields(cfg):
            out[f.name] = config_to_dict(getattr(cfg, f.name))
        return out
    if isinstance(cfg, tuple):
        return [config_to_dict(v) for v in cfg]
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
