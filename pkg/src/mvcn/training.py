"""SGD with momentum, base pretraining, classifier extension and fine-tuning
with normalization hooks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .features import Episode, FeatureDataset
from .model import LinearClassifier, cosine_gradient, logits, softmax
from .normalization import (NormalizationConfig, compute_stats, mean_center,
                            variance_balance)


class NumericalError(FloatingPointError):
    """Weights became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    momentum: float = 0.9
    weight_decay: float = 5e-4
    iterations: int = 500
    batch_size: int | None = None  # None = full batch
    regularizer: str = "l2_decay"
    l1_coefficient: float = 0.0
    seed: int = 0
    lr_milestones: tuple[int, ...] = ()
    lr_gamma: float = 0.1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0 or self.l1_coefficient < 0:
            raise ValueError("regularization coefficients must be non-negative")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive or None")
        if self.regularizer not in ("l2_decay", "l1", "none"):
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        object.__setattr__(self, "lr_milestones", tuple(self.lr_milestones))

    def lr_at(self, step: int) -> float:
        drops = sum(step >= m for m in self.lr_milestones)
        return self.learning_rate * self.lr_gamma ** drops


@dataclass
class MomentumState:
    velocity: np.ndarray | None = None
    step: int = 0


def regularized(grad: np.ndarray, weights: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    if cfg.regularizer == "l2_decay" and cfg.weight_decay:
        return grad + cfg.weight_decay * weights
    if cfg.regularizer == "l1" and cfg.l1_coefficient:
        return grad + cfg.l1_coefficient * np.sign(weights)
    return grad


def sgd_step(clf: LinearClassifier, grad: np.ndarray, state: MomentumState,
             cfg: TrainConfig, mask: np.ndarray | None = None) -> None:
    """One in-place SGD-with-momentum update.

    ``mask`` is a boolean vector over columns; True columns are frozen and
    their weights and velocity stay untouched.
    """
    if grad.shape != clf.weights.shape:
        raise ValueError(f"gradient shape {grad.shape} != weights {clf.weights.shape}")
    g = regularized(grad, clf.weights, cfg)
    if state.velocity is None:
        state.velocity = np.zeros_like(clf.weights)
    lr = cfg.lr_at(state.step)
    if mask is None:
        state.velocity *= cfg.momentum
        state.velocity += g
        clf.weights -= lr * state.velocity
    else:
        live = ~np.asarray(mask, dtype=bool)
        v = cfg.momentum * state.velocity[:, live] + g[:, live]
        state.velocity[:, live] = v
        clf.weights[:, live] -= lr * v
    state.step += 1


def init_weights(rng: np.random.Generator, dim: int, n: int,
                 init_std: float | None = None) -> np.ndarray:
    std = 1.0 / np.sqrt(dim) if init_std is None else init_std
    return rng.standard_normal((dim, n)) * std


def _class_indices(ds: FeatureDataset) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(ds.classes)}
    return np.fromiter((lookup[int(c)] for c in ds.labels), np.int64, len(ds))


def train_base(base: FeatureDataset, cfg: TrainConfig,
               init_std: float | None = None) -> LinearClassifier:
    """Mini-batch SGD linear probe over the base classes (shuffled epochs).

    Column ``i`` scores ``base.classes[i]``.
    """
    if len(base) == 0:
        raise ValueError("base dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    n_classes = len(base.classes)
    clf = LinearClassifier(init_weights(rng, base.dim, n_classes, init_std),
                           n_classes, 0, base.classes)
    feats = base.features.astype(np.float64)
    targets = np.eye(n_classes)[_class_indices(base)]
    n = feats.shape[0]
    bs = n if cfg.batch_size is None else min(cfg.batch_size, n)
    state = MomentumState()
    order = rng.permutation(n)
    pos = 0
    for _ in range(cfg.iterations):
        if pos + bs > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + bs]
        pos += bs
        f = feats[idx]
        p = softmax(f @ clf.weights)
        sgd_step(clf, f.T @ (p - targets[idx]) / bs, state, cfg)
    _check_finite(clf)
    return clf


def extend_classifier(clf: LinearClassifier, n_novel: int, seed: int,
                      init_std: float | None = None) -> LinearClassifier:
    """Append ``n_novel`` randomly initialized columns after the base ones."""
    if clf.novel_class_count:
        raise ValueError("classifier is already extended")
    if n_novel < 1:
        raise ValueError("nothing to extend")
    rng = np.random.default_rng(seed)
    new = init_weights(rng, clf.dim, n_novel, init_std)
    start = clf.n_classes
    return LinearClassifier(np.hstack([clf.weights, new]), clf.base_class_count,
                            n_novel, clf.class_map + tuple(range(start, start + n_novel)))


def _check_finite(clf: LinearClassifier) -> None:
    if not clf.is_finite():
        raise NumericalError("non-finite classifier weights")


def apply_online_hooks(clf: LinearClassifier, hooks: NormalizationConfig) -> None:
    if hooks.online_mean_centering != "off" and hooks.centering_cadence == "step":
        mean_center(clf, hooks.online_mean_centering)
    if hooks.variance_balancing == "in_training":
        variance_balance(clf, compute_stats(clf))


def finetune(clf: LinearClassifier, episode: Episode, cfg: TrainConfig,
             hooks: NormalizationConfig = NormalizationConfig(),
             cosine_scale: float = 10.0,
             callback: Callable[[int, LinearClassifier], None] | None = None
             ) -> LinearClassifier:
    """Fine-tune a copy of the extended classifier on the episode's support set.

    Only ``novel_support`` is used unless the episode carries a balanced
    ``base_support``. Online hooks run after every step; ``callback`` sees the
    classifier after the hooks.
    """
    if (clf.base_class_count != episode.n_base
            or clf.novel_class_count != episode.n_novel):
        raise ValueError(
            f"classifier has {clf.base_class_count}+{clf.novel_class_count} "
            f"classes, episode has {episode.n_base}+{episode.n_novel}")
    out = clf.copy()
    train = episode.training_set()
    feats = train.features.astype(np.float64)
    targets = np.eye(out.n_classes)[train.labels]
    n = feats.shape[0]
    bs = n if cfg.batch_size is None else min(cfg.batch_size, n)
    rng = np.random.default_rng(cfg.seed)
    mask = None
    if hooks.freeze_base:
        mask = np.zeros(out.n_classes, dtype=bool)
        mask[:out.base_class_count] = True
    state = MomentumState()
    for step in range(cfg.iterations):
        if bs < n:
            idx = rng.choice(n, bs, replace=False)
            f, y = feats[idx], targets[idx]
        else:
            f, y = feats, targets
        if hooks.cosine:
            p = softmax(logits(out, f, "cosine", cosine_scale))
            grad = cosine_gradient(out, f, p, y.argmax(axis=1), cosine_scale)
        else:
            p = softmax(f @ out.weights)
            grad = f.T @ (p - y) / bs
        sgd_step(out, grad, state, cfg, mask)
        apply_online_hooks(out, hooks)
        if callback is not None:
            callback(step, out)
    if hooks.online_mean_centering != "off" and hooks.centering_cadence == "final":
        mean_center(out, hooks.online_mean_centering)
    _check_finite(out)
    return out
