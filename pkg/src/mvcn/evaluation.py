"""Prediction, per-episode reports, the end-to-end episode pipeline and
cross-episode aggregation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import PipelineConfig, derive_seed
from .features import Episode, EpisodeSpec, FeatureDataset, sample_episode
from .model import LinearClassifier, logits
from .normalization import WeightStats, compute_stats, norm_equalize, variance_balance
from .postopt import AffineParams, apply_affine, train_affine
from .training import TrainConfig, extend_classifier, finetune, train_base

METRICS = ("novel_acc", "base_acc", "all_acc_mean", "all_acc_joint",
           "base_to_novel_rate", "novel_to_base_rate")


def scores(clf: LinearClassifier, params: AffineParams | None, f,
           mode: str = "linear", cosine_scale: float = 10.0) -> np.ndarray:
    z = logits(clf, f, mode, cosine_scale)
    return z if params is None else apply_affine(params, z)


def predict(clf: LinearClassifier, params: AffineParams | None, f,
            mode: str = "linear", cosine_scale: float = 10.0):
    """Argmax class index (array for batches); ties go to the lowest index."""
    z = scores(clf, params, f, mode, cosine_scale)
    out = np.argmax(z, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


@dataclass
class EvalReport:
    novel_acc: float
    base_acc: float
    all_acc_mean: float
    all_acc_joint: float
    per_class_acc: np.ndarray
    confusion: np.ndarray
    base_to_novel_rate: float
    novel_to_base_rate: float
    n_base: int
    weight_stats: dict | None = None

    def metric(self, name: str) -> float:
        return float(getattr(self, name))

    def to_dict(self) -> dict:
        return {
            "novel_acc": self.novel_acc,
            "base_acc": self.base_acc,
            "all_acc_mean": self.all_acc_mean,
            "all_acc_joint": self.all_acc_joint,
            "base_to_novel_rate": self.base_to_novel_rate,
            "novel_to_base_rate": self.novel_to_base_rate,
            "n_base": self.n_base,
            "per_class_acc": [None if math.isnan(v) else v
                              for v in self.per_class_acc.tolist()],
            "confusion": self.confusion.tolist(),
            "weight_stats": self.weight_stats,
        }


def _pct(correct: int, total: int) -> float:
    return 100.0 * correct / total if total else float("nan")


def report_from_predictions(true: np.ndarray, pred: np.ndarray, n_classes: int,
                            n_base: int) -> EvalReport:
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    confusion = np.bincount(true * n_classes + pred,
                            minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    diag = np.diag(confusion)
    rows = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(rows > 0, 100.0 * diag / np.maximum(rows, 1), np.nan)
    base_rows, novel_rows = confusion[:n_base], confusion[n_base:]
    n_bq, n_nq = int(base_rows.sum()), int(novel_rows.sum())
    novel_acc = _pct(int(np.trace(confusion[n_base:, n_base:])), n_nq)
    base_acc = _pct(int(np.trace(confusion[:n_base, :n_base])), n_bq)
    return EvalReport(
        novel_acc=novel_acc,
        base_acc=base_acc,
        all_acc_mean=(novel_acc + base_acc) / 2,
        all_acc_joint=_pct(int(diag.sum()), n_bq + n_nq),
        per_class_acc=per_class,
        confusion=confusion,
        base_to_novel_rate=int(base_rows[:, n_base:].sum()) / n_bq if n_bq else float("nan"),
        novel_to_base_rate=int(novel_rows[:, :n_base].sum()) / n_nq if n_nq else float("nan"),
        n_base=n_base,
    )


def evaluate(clf: LinearClassifier, params: AffineParams | None, episode: Episode,
             mode: str = "linear", cosine_scale: float = 10.0) -> EvalReport:
    if clf.n_classes != episode.n_classes:
        raise ValueError(f"classifier has {clf.n_classes} classes, "
                         f"episode has {episode.n_classes}")
    feats = np.concatenate([episode.novel_query.features, episode.base_query.features])
    true = np.concatenate([episode.novel_query.labels, episode.base_query.labels])
    pred = predict(clf, params, feats.astype(np.float64), mode, cosine_scale)
    return report_from_predictions(true, np.atleast_1d(pred), clf.n_classes, episode.n_base)


def conditional_accuracies(clf: LinearClassifier, params: AffineParams | None,
                           episode: Episode, mode: str = "linear",
                           cosine_scale: float = 10.0) -> tuple[float, float]:
    """Base and novel accuracy with the label space restricted to the
    query's own partition (same classifier)."""
    b = episode.n_base
    zb = scores(clf, params, episode.base_query.features.astype(np.float64),
                mode, cosine_scale)[:, :b]
    zn = scores(clf, params, episode.novel_query.features.astype(np.float64),
                mode, cosine_scale)[:, b:]
    base = _pct(int((zb.argmax(axis=1) == episode.base_query.labels).sum()),
                len(episode.base_query))
    novel = _pct(int((zn.argmax(axis=1) + b == episode.novel_query.labels).sum()),
                 len(episode.novel_query))
    return base, novel


def train_novel_only(episode: Episode, cfg: TrainConfig, seed: int,
                     init_std: float | None = None) -> LinearClassifier:
    """Classifier over the episode's novel classes alone (columns 0..N-1)."""
    support = episode.novel_support
    relabeled = FeatureDataset(support.features, support.labels - episode.n_base,
                               range(episode.n_novel), support.relu_constraint)
    clf = train_base(relabeled, replace(cfg, seed=seed), init_std)
    return LinearClassifier(clf.weights, 0, episode.n_novel)


def upper_bounds(clf_pretrained: LinearClassifier, novel_clf: LinearClassifier,
                 episode: Episode) -> tuple[float, float]:
    """(base_ub, novel_ub): pretrained base classifier on base queries, and a
    novel-only classifier on novel queries."""
    base_pred = predict(clf_pretrained, None,
                        episode.base_query.features.astype(np.float64))
    base_ub = _pct(int((np.atleast_1d(base_pred) == episode.base_query.labels).sum()),
                   len(episode.base_query))
    novel_pred = predict(novel_clf, None,
                         episode.novel_query.features.astype(np.float64))
    novel_ub = _pct(int((np.atleast_1d(novel_pred) + episode.n_base
                         == episode.novel_query.labels).sum()),
                    len(episode.novel_query))
    return base_ub, novel_ub


@dataclass
class EpisodeResult:
    report: EvalReport
    episode: Episode
    classifier: LinearClassifier
    params: AffineParams | None
    finetuned_stats: WeightStats
    stages: dict[str, LinearClassifier] = field(default_factory=dict)


def episode_spec(cfg: PipelineConfig, index: int) -> EpisodeSpec:
    return EpisodeSpec(cfg.n_way, cfg.k_shot, cfg.query_per_class,
                       derive_seed(cfg.episode_seed, index))


def run_pipeline(base: FeatureDataset, novel: FeatureDataset, spec: EpisodeSpec,
                 cfg: PipelineConfig, pretrained: LinearClassifier | None = None,
                 base_train: FeatureDataset | None = None,
                 keep_stages: bool = False) -> EpisodeResult:
    """sample → extend → fine-tune (online hooks) → offline normalization →
    affine post-optimization → evaluate.

    ``base`` is the base evaluation pool. ``base_train`` is read only to
    pretrain (when ``pretrained`` is None) and, in balanced mode, to draw the
    base support set.
    """
    if pretrained is None:
        if base_train is None:
            raise ValueError("need a pretrained classifier or base training data")
        pretrained = train_base(base_train, cfg.pretrain_config(), cfg.init_std)
    if pretrained.novel_class_count:
        raise ValueError("pretrained classifier must not have novel columns")
    pool = base_train if cfg.mode == "undersampled_balanced" else None
    episode = sample_episode(base, novel, spec, cfg.mode, pool, cfg.base_query_per_class)
    hooks = cfg.normalization
    mode = hooks.logit_mode

    clf = extend_classifier(pretrained, episode.n_novel,
                            derive_seed(cfg.init_seed, spec.seed, 1), cfg.init_std)
    clf = finetune(clf, episode, cfg.finetune_config(spec.k_shot, derive_seed(spec.seed, 2)),
                   hooks, cfg.cosine_scale)
    stats = compute_stats(clf)
    stages = {"finetuned": clf.copy()} if keep_stages else {}
    if hooks.variance_balancing == "offline":
        variance_balance(clf, stats)
        if keep_stages:
            stages["balanced"] = clf.copy()
    if hooks.norm_equalization:
        norm_equalize(clf)
    params = None
    if cfg.postopt_enabled:
        params = train_affine(clf, episode,
                              cfg.postopt_config(spec.k_shot, derive_seed(spec.seed, 3)),
                              mode, cfg.cosine_scale, cfg.postopt_novel_only)
    report = evaluate(clf, params, episode, mode, cfg.cosine_scale)
    report.weight_stats = stats.summary()
    return EpisodeResult(report, episode, clf, params, stats, stages)


def run_episode(base: FeatureDataset, novel: FeatureDataset, spec: EpisodeSpec,
                cfg: PipelineConfig, pretrained: LinearClassifier | None = None,
                base_train: FeatureDataset | None = None) -> EvalReport:
    return run_pipeline(base, novel, spec, cfg, pretrained, base_train).report


@dataclass(frozen=True)
class EpisodeAggregate:
    count: int
    mean: dict[str, float]
    half_width: dict[str, float | None]
    minimum: dict[str, float]
    maximum: dict[str, float]

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "half_width": self.half_width,
                "min": self.minimum, "max": self.maximum}


def aggregate(reports: Sequence[EvalReport], metrics: Sequence[str] = METRICS
              ) -> EpisodeAggregate:
    """Mean and 95% interval half-width ``1.96 s / sqrt(T)`` per metric
    (``s`` with divisor ``T - 1``); half-widths are None when ``T < 2``."""
    if not reports:
        raise ValueError("no reports to aggregate")
    t = len(reports)
    mean, half, lo, hi = {}, {}, {}, {}
    for name in metrics:
        values = np.array([r.metric(name) for r in reports], dtype=np.float64)
        mean[name] = float(values.mean())
        lo[name] = float(values.min())
        hi[name] = float(values.max())
        half[name] = (float(1.96 * values.std(ddof=1) / np.sqrt(t)) if t >= 2 else None)
    return EpisodeAggregate(t, mean, half, lo, hi)


AGGREGATE_COLUMNS = ("ablation", "shot", "episodes", "novel", "novel_pm", "base", "base_pm",
                     "all_mean", "all_mean_pm", "all_joint", "all_joint_pm",
                     "base_to_novel", "novel_to_base")

_COLUMN_METRIC = {"novel": "novel_acc", "base": "base_acc", "all_mean": "all_acc_mean",
                  "all_joint": "all_acc_joint"}


def aggregate_row(ablation: str, shot: int, agg: EpisodeAggregate) -> dict:
    row = {"ablation": ablation, "shot": shot, "episodes": agg.count}
    for col, metric in _COLUMN_METRIC.items():
        row[col] = f"{agg.mean[metric]:.4f}"
        hw = agg.half_width[metric]
        row[f"{col}_pm"] = "" if hw is None else f"{hw:.4f}"
    row["base_to_novel"] = f"{agg.mean['base_to_novel_rate']:.6f}"
    row["novel_to_base"] = f"{agg.mean['novel_to_base_rate']:.6f}"
    return row


def write_aggregate_csv(rows: Sequence[dict], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=AGGREGATE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def write_confusion_csv(confusion: np.ndarray, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        n = confusion.shape[0]
        writer.writerow(["true\\pred"] + list(range(n)))
        for i, row in enumerate(confusion.tolist()):
            writer.writerow([i] + row)


def write_reports_json(reports: Sequence[EvalReport], path, extra: dict | None = None) -> None:
    doc = dict(extra or {})
    doc["episodes"] = [r.to_dict() for r in reports]
    with open(Path(path), "w") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")
