"""Run configuration.

Plain dataclasses serialized as JSON. Precedence when assembling a run:
built-in defaults, then a --config file, then explicit CLI flags. Every
command writes the fully resolved config next to its outputs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from polvis.losses import TERMS, LossWeights

ABLATION_PRESETS = {
    # every loss term
    "full": frozenset(TERMS),
    # drop only the bottleneck attribute heads
    "no-attr": frozenset(("coupling", "recon", "gan", "perc", "attr_perc")),
    # contrastive coupling + reconstruction only
    "cpl-e": frozenset(("coupling", "recon")),
}


@dataclass
class ModelConfig:
    image_size: int = 64
    gen_base: int = 32
    gen_depth: int = 4
    embed_dim: int = 128
    n_attributes: int = 10
    disc_base: int = 32
    disc_blocks: int = 3
    feature_base: int = 16
    predictor_base: int = 16
    attr_head_hidden: int = 0
    dropout_rate: float = 0.5
    dropout_blocks: int = 2
    eval_dropout: bool = True
    gen_norm: bool = True
    disc_norm: bool = True

    def __post_init__(self):
        if self.image_size % 2**self.gen_depth:
            raise ValueError(f"image_size {self.image_size} must be divisible by 2^{self.gen_depth}")


@dataclass
class DataConfig:
    n_identities: int = 20
    samples_per_identity: int = 6
    image_size: int = 64
    degradation: float = 0.0
    train_fraction: float = 0.7
    dog_enabled: bool = True
    dog_sigma1: float = 1.0
    dog_sigma2: float = 2.0
    dog_gain: float = 4.0


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 4
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    ablation: str = "full"
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 0          # 0: final checkpoint only
    grad_clip: float = 0.0             # 0: off
    recon_reduction: str = "mean"      # "sum" for the literal summed form
    pretrain_epochs: int = 60
    pretrain_lr: float = 1e-3
    pretrain_batch: int = 16
    feature_net_from_predictor: bool = False

    def __post_init__(self):
        if self.batch_size % 2:
            raise ValueError("batch_size must be even to balance genuine/impostor pairs")
        if self.ablation not in ABLATION_PRESETS:
            raise ValueError(f"unknown ablation preset {self.ablation!r}; choose from {sorted(ABLATION_PRESETS)}")
        if not self.active_terms():
            raise ValueError("at least one loss term must be active")

    def active_terms(self) -> frozenset:
        return ABLATION_PRESETS[self.ablation]


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _build(cls, data: dict):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    if cls is TrainConfig and isinstance(data.get("weights"), dict):
        data = dict(data)
        data["weights"] = LossWeights(**data["weights"])
    return cls(**data)


def load_config_file(path: str | Path) -> dict:
    """Read a JSON config file with optional model/data/train sections."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    allowed = {"model", "data", "train"}
    unknown = set(raw) - allowed
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)} (expected {sorted(allowed)})")
    return raw


def resolve(section_cls, file_cfg: dict, section: str, overrides: dict):
    """defaults <- config-file section <- non-None CLI overrides."""
    merged = dict(file_cfg.get(section, {}))
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return _build(section_cls, merged)


def write_snapshot(path: str | Path, **sections) -> None:
    """Dump the resolved configs next to a command's outputs."""
    payload = {name: to_dict(cfg) for name, cfg in sections.items() if cfg is not None}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
