"""Pipeline configuration, JSON (de)serialization and the ablation grid."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .features import SyntheticConfig
from .normalization import NormalizationConfig
from .training import TrainConfig

# Fine-tuning learning rate per shot (mini-ImageNet schedule).
FINETUNE_LR = {1: 0.005, 5: 0.003, 10: 0.001}
AFFINE_ITERATIONS = {1: 500, 5: 50, 10: 5}

ABLATIONS = ("none", "mc", "mc+vb", "mc+vb+lo", "cosine", "freeze-base", "l1",
             "l2", "norm-eq", "vb-in-training", "mc-both", "balanced")


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
               .generate_state(2, np.uint32).view(np.uint64)[0] >> 1)


def _lookup_shot(table: dict[int, float], shot: int):
    if shot in table:
        return table[shot]
    # nearest tabulated shot, ties toward fewer shots
    key = min(table, key=lambda k: (abs(k - shot), k))
    return table[key]


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one experiment needs apart from the data file."""

    novel_classes: tuple[int, ...] | None = None
    n_novel_classes: int = 20
    base_test_fraction: float = 0.2
    base_query_per_class: int | None = None
    dim: int | None = None

    n_way: int = 5
    k_shot: int = 5
    query_per_class: int = 15
    mode: str = "zero_base"

    pretrain: TrainConfig = TrainConfig(learning_rate=0.0125, iterations=10000,
                                        batch_size=60, weight_decay=0.0)
    finetune: TrainConfig = TrainConfig(learning_rate=0.003, iterations=500)
    finetune_lr: dict[int, float] = field(default_factory=lambda: dict(FINETUNE_LR))
    postopt: TrainConfig = TrainConfig(learning_rate=0.003, iterations=50,
                                       weight_decay=0.0)
    postopt_lr: dict[int, float] | None = None
    postopt_iterations: dict[int, int] = field(
        default_factory=lambda: dict(AFFINE_ITERATIONS))
    postopt_enabled: bool = False
    postopt_novel_only: bool = False
    normalization: NormalizationConfig = NormalizationConfig()
    cosine_scale: float = 10.0
    init_std: float | None = None

    l1_coefficient: float = 1e-3
    l2_strong_decay: float = 5e-2

    data_seed: int = 0
    init_seed: int = 0
    episode_seed: int = 0

    synthetic: SyntheticConfig | None = None

    def __post_init__(self):
        if self.mode not in ("zero_base", "undersampled_balanced"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.novel_classes is not None:
            object.__setattr__(self, "novel_classes", tuple(int(c) for c in self.novel_classes))
        for name in ("finetune_lr", "postopt_lr", "postopt_iterations"):
            table = getattr(self, name)
            if table is not None:
                object.__setattr__(self, name, {int(k): v for k, v in table.items()})

    def finetune_config(self, shot: int, seed: int) -> TrainConfig:
        return replace(self.finetune, learning_rate=_lookup_shot(self.finetune_lr, shot),
                       seed=seed)

    def postopt_config(self, shot: int, seed: int) -> TrainConfig:
        lr_table = self.postopt_lr if self.postopt_lr is not None else self.finetune_lr
        return replace(self.postopt, learning_rate=_lookup_shot(lr_table, shot),
                       iterations=int(_lookup_shot(self.postopt_iterations, shot)),
                       seed=seed)

    def pretrain_config(self) -> TrainConfig:
        return replace(self.pretrain, seed=derive_seed(self.init_seed, 0))

    def with_ablation(self, name: str) -> "PipelineConfig":
        return apply_ablation(self, name)

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        for key in ("pretrain", "finetune", "postopt"):
            if key in data:
                data[key] = _build(TrainConfig, data[key], defaults[key])
        if "normalization" in data:
            data["normalization"] = _build(NormalizationConfig, data["normalization"])
        if data.get("synthetic") is not None:
            data["synthetic"] = _build(SyntheticConfig, data["synthetic"])
        return cls(**data)


def _build(kind, values: dict, defaults=None):
    if not isinstance(values, dict):
        raise ValueError(f"{kind.__name__} section must be an object")
    unknown = set(values) - {f.name for f in dataclasses.fields(kind)}
    if unknown:
        raise ValueError(f"unknown {kind.__name__} keys: {sorted(unknown)}")
    base = defaults if defaults is not None else kind()
    return replace(base, **values)


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def load_config(path) -> PipelineConfig:
    with open(Path(path)) as fh:
        return PipelineConfig.from_dict(json.load(fh))


def apply_ablation(cfg: PipelineConfig, name: str) -> PipelineConfig:
    """Map an ablation row name onto pipeline settings.

    MVCN proper is ``mc+vb+lo``; the naive rows (``cosine``, ``freeze-base``,
    ``l1``, ``l2``, ``norm-eq``) replace normalization entirely, while
    ``vb-in-training``, ``mc-both`` and ``balanced`` vary one MVCN ingredient.
    """
    off = NormalizationConfig()
    mc = NormalizationConfig(online_mean_centering="novel_only")
    mcvb = replace(mc, variance_balancing="offline")
    ft = cfg.finetune
    settings = {
        "none": dict(normalization=off, postopt_enabled=False),
        "mc": dict(normalization=mc, postopt_enabled=False),
        "mc+vb": dict(normalization=mcvb, postopt_enabled=False),
        "mc+vb+lo": dict(normalization=mcvb, postopt_enabled=True),
        "cosine": dict(normalization=replace(off, cosine=True), postopt_enabled=False),
        "freeze-base": dict(normalization=replace(off, freeze_base=True),
                            postopt_enabled=False),
        "l1": dict(normalization=off, postopt_enabled=False,
                   finetune=replace(ft, regularizer="l1",
                                    l1_coefficient=cfg.l1_coefficient)),
        "l2": dict(normalization=off, postopt_enabled=False,
                   finetune=replace(ft, regularizer="l2_decay",
                                    weight_decay=cfg.l2_strong_decay)),
        "norm-eq": dict(normalization=replace(off, norm_equalization=True),
                        postopt_enabled=False),
        "vb-in-training": dict(normalization=replace(mc, variance_balancing="in_training"),
                               postopt_enabled=True),
        "mc-both": dict(normalization=replace(mcvb, online_mean_centering="both"),
                        postopt_enabled=True),
        "balanced": dict(normalization=mcvb, postopt_enabled=True,
                         mode="undersampled_balanced"),
    }
    if name not in settings:
        raise ValueError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
    return replace(cfg, **settings[name])
