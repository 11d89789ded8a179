"""Multi-episode experiment driver shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import PipelineConfig
from .evaluation import EvalReport, episode_spec, run_pipeline
from .features import DatasetError, FeatureDataset, split_base_novel, split_holdout
from .model import LinearClassifier
from .training import train_base

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Splits:
    base_train: FeatureDataset
    base_test: FeatureDataset
    novel: FeatureDataset


def novel_ids(ds: FeatureDataset, cfg: PipelineConfig) -> list[int]:
    if cfg.novel_classes is not None:
        return list(cfg.novel_classes)
    if not 0 < cfg.n_novel_classes < len(ds.classes):
        raise DatasetError(
            f"n_novel_classes={cfg.n_novel_classes} invalid for {len(ds.classes)} classes")
    return list(ds.classes[-cfg.n_novel_classes:])


def prepare_splits(ds: FeatureDataset, cfg: PipelineConfig) -> Splits:
    """Base/novel partition, then a per-class train/test holdout of the base part."""
    if cfg.dim is not None and cfg.dim != ds.dim:
        raise DatasetError(f"config expects dim={cfg.dim}, data has dim={ds.dim}")
    base, novel = split_base_novel(ds, novel_ids(ds, cfg), cfg.data_seed)
    base_train, base_test = split_holdout(base, cfg.base_test_fraction, cfg.data_seed)
    return Splits(base_train, base_test, novel)


def pretrain(splits: Splits, cfg: PipelineConfig) -> LinearClassifier:
    return train_base(splits.base_train, cfg.pretrain_config(), cfg.init_std)


def base_accuracy(clf: LinearClassifier, ds: FeatureDataset) -> float:
    lookup = {c: i for i, c in enumerate(ds.classes)}
    labels = np.fromiter((lookup[int(c)] for c in ds.labels), np.int64, len(ds))
    pred = (ds.features.astype(np.float64) @ clf.weights).argmax(axis=1)
    return 100.0 * float((pred == labels).mean())


_shared: dict = {}


def _init_worker(splits: Splits, pretrained: LinearClassifier) -> None:
    _shared["splits"] = splits
    _shared["pretrained"] = pretrained


def _episode_task(args) -> EvalReport:
    cfg, index = args
    splits = _shared["splits"]
    return run_pipeline(splits.base_test, splits.novel, episode_spec(cfg, index), cfg,
                        _shared["pretrained"], splits.base_train).report


def run_episodes(splits: Splits, cfg: PipelineConfig, pretrained: LinearClassifier,
                 episodes: int | Sequence[int], workers: int = 1) -> list[EvalReport]:
    """Reports for the given episode indices, ordered by index."""
    indices = list(range(episodes)) if isinstance(episodes, int) else list(episodes)
    if workers <= 1:
        _init_worker(splits, pretrained)
        return [_episode_task((cfg, i)) for i in indices]
    with ProcessPoolExecutor(workers, initializer=_init_worker,
                             initargs=(splits, pretrained)) as pool:
        return list(pool.map(_episode_task, [(cfg, i) for i in indices],
                             chunksize=max(1, len(indices) // (4 * workers))))
