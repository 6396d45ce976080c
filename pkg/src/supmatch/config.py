"""Declarative experiment configuration.

Plain YAML with a fixed schema: unknown keys are errors, every field has a
default, and runs are reproducible from (config file, seed). The config
hash keys run directories and guards aggregation against mixing settings.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .exceptions import ConfigError
from .hierarchy import SupportSpec


def _check_keys(section: str, mapping: dict, allowed) -> None:
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")


def _from_mapping(cls, section: str, mapping: dict):
    mapping = dict(mapping or {})
    names = [f.name for f in fields(cls)]
    _check_keys(section, mapping, names)
    return cls(**mapping)


@dataclass
class DatasetBlock:
    kind: str = "cmnist"  # cmnist | adult | synthetic
    digits: list = field(default_factory=lambda: [2, 4])
    n_colors: int = 2
    setting: str = "sb"  # sb | ms | none
    missing_sources: list = field(default_factory=list)
    root: str = None
    allow_substrate: bool = True
    seed: int = 0
    # synthetic-only knobs
    n_s: int = 2
    n_y: int = 2
    dim: int = 2
    cov_scale: float = 0.25
    n_per_source: int = 100

    def __post_init__(self):
        if self.kind not in ("cmnist", "adult", "synthetic"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.setting not in ("sb", "ms", "none"):
            raise ConfigError(f"unknown setting {self.setting!r}")


@dataclass
class BalancingBlock:
    scheme: str = "oracle_balanced"
    bag_size: int = 32
    bags_per_batch: int = 8

    def __post_init__(self):
        if self.scheme not in ("cluster_balanced", "oracle_balanced", "unbalanced"):
            raise ConfigError(f"unknown balancing scheme {self.scheme!r}")


@dataclass
class ClusteringBlock:
    n_clusters: int = None
    rank_depth: int = 5
    embed_dim: int = 32
    hidden: list = field(default_factory=lambda: [32, 64])
    level_depth: int = 1
    pretrain_epochs: int = 15
    cluster_epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    perturb_scale: float = 0.05


@dataclass
class ModelBlock:
    encoding_size: int = 64
    hidden: list = field(default_factory=lambda: [32, 64, 128])
    level_depth: int = 1
    binarize_s: bool = False


@dataclass
class TrainingBlock:
    iterations: int = 1200
    lambda_y: float = 1.0
    lambda_s: float = 1.0
    lambda_adv: float = 1.0
    embed_l2: float = 0.01
    disc_updates: int = 1
    stop_gradient: bool = False
    attention_kind: str = "gated"
    attention_embed_dim: int = 32
    disc_pre_hidden: list = field(default_factory=lambda: [64, 64])
    disc_post_hidden: list = field(default_factory=lambda: [64])
    lr_encoder: float = 1e-3
    lr_predictors: float = 3e-4
    lr_disc: float = 3e-4
    checkpoint_every: int = 500
    instancewise: bool = False


@dataclass
class EvaluationBlock:
    probe_epochs: int = 15
    probe_lr: float = 1e-3
    probe_batch: int = 64


@dataclass
class BaselineBlock:
    epochs: int = 15
    lr: float = 1e-3
    batch_size: int = 64
    widths: list = field(default_factory=lambda: [16, 32, 64])
    mlp_hidden: int = 35
    dro_eta: float = None
    dro_eta_grid: list = field(default_factory=lambda: [0.01, 0.1, 0.3, 1.0])
    gdro_step_size: float = 0.01
    lff_q: float = 0.7


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: DatasetBlock = field(default_factory=DatasetBlock)
    support: dict = None  # optional declared support block
    balancing: BalancingBlock = field(default_factory=BalancingBlock)
    clustering: ClusteringBlock = field(default_factory=ClusteringBlock)
    model: ModelBlock = field(default_factory=ModelBlock)
    training: TrainingBlock = field(default_factory=TrainingBlock)
    evaluation: EvaluationBlock = field(default_factory=EvaluationBlock)
    baselines: list = field(default_factory=lambda: ["erm"])
    baseline_params: BaselineBlock = field(default_factory=BaselineBlock)
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs"

    TOP_LEVEL = (
        "name", "dataset", "support", "balancing", "clustering", "model",
        "training", "evaluation", "baselines", "baseline_params", "seeds", "out_dir",
    )

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        mapping = dict(mapping or {})
        _check_keys("config", mapping, cls.TOP_LEVEL)
        return cls(
            name=str(mapping.get("name", "experiment")),
            dataset=_from_mapping(DatasetBlock, "dataset", mapping.get("dataset", {})),
            support=mapping.get("support"),
            balancing=_from_mapping(BalancingBlock, "balancing", mapping.get("balancing", {})),
            clustering=_from_mapping(ClusteringBlock, "clustering", mapping.get("clustering", {})),
            model=_from_mapping(ModelBlock, "model", mapping.get("model", {})),
            training=_from_mapping(TrainingBlock, "training", mapping.get("training", {})),
            evaluation=_from_mapping(EvaluationBlock, "evaluation", mapping.get("evaluation", {})),
            baselines=list(mapping.get("baselines", ["erm"])),
            baseline_params=_from_mapping(
                BaselineBlock, "baseline_params", mapping.get("baseline_params", {})
            ),
            seeds=[int(s) for s in mapping.get("seeds", [0])],
            out_dir=str(mapping.get("out_dir", "runs")),
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            payload = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"{path} must contain a mapping at the top level")
        return cls.from_mapping(payload)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        payload = self.to_dict()
        payload.pop("out_dir")
        payload.pop("seeds")
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    def declared_support(self) -> SupportSpec | None:
        if self.support is None:
            return None
        return SupportSpec.from_config_dict(self.support)

    def save_copy(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))
