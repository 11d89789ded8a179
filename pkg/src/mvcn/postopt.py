"""Per-class affine logit parameters trained with the classifier frozen."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import Episode
from .model import LinearClassifier, cross_entropy_loss, logits, one_hot, softmax
from .training import NumericalError, TrainConfig

# Per-shot iteration counts for the affine stage.
DEFAULT_AFFINE_ITERATIONS = {1: 500, 5: 50, 10: 5}


@dataclass
class AffineParams:
    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ValueError("gamma and beta must be vectors of equal length")

    def __len__(self) -> int:
        return self.gamma.size

    def is_identity(self) -> bool:
        return bool((self.gamma == 1).all() and (self.beta == 0).all())


def init_affine(clf: LinearClassifier) -> AffineParams:
    return AffineParams(np.ones(clf.n_classes), np.zeros(clf.n_classes))


def apply_affine(params: AffineParams, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != len(params):
        raise ValueError(f"{z.shape[-1]} logits but {len(params)} affine parameters")
    return params.gamma * z + params.beta


def affine_loss_and_gradients(params: AffineParams, z, label
                              ) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean CE of ``softmax(gamma * z + beta)`` and its gradients w.r.t.
    ``gamma`` and ``beta``: ``(p - y) * z`` and ``(p - y)``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    label = np.atleast_1d(label)
    p = softmax(apply_affine(params, z))
    delta = p - one_hot(label, z.shape[1])
    n = z.shape[0]
    return (cross_entropy_loss(p, label), (delta * z).sum(axis=0) / n,
            delta.sum(axis=0) / n)


def train_affine(clf: LinearClassifier, episode: Episode, cfg: TrainConfig,
                 mode: str = "linear", cosine_scale: float = 10.0,
                 novel_only: bool = False) -> AffineParams:
    """Fit gamma/beta by SGD on the novel support set; ``clf`` is only read.

    With ``novel_only`` the base-class parameters stay at identity.
    """
    params = init_affine(clf)
    if cfg.iterations == 0:
        return params
    support = episode.novel_support
    z = logits(clf, support.features.astype(np.float64), mode, cosine_scale)
    labels = support.labels
    n = z.shape[0]
    bs = n if cfg.batch_size is None else min(cfg.batch_size, n)
    rng = np.random.default_rng(cfg.seed)
    live = slice(clf.base_class_count, None) if novel_only else slice(None)
    vg = np.zeros(len(params))
    vb = np.zeros(len(params))
    for step in range(cfg.iterations):
        if bs < n:
            idx = rng.choice(n, bs, replace=False)
            _, gg, gb = affine_loss_and_gradients(params, z[idx], labels[idx])
        else:
            _, gg, gb = affine_loss_and_gradients(params, z, labels)
        if cfg.regularizer == "l2_decay" and cfg.weight_decay:
            # decay pulls toward the identity transform
            gg = gg + cfg.weight_decay * (params.gamma - 1.0)
            gb = gb + cfg.weight_decay * params.beta
        lr = cfg.lr_at(step)
        vg[live] = cfg.momentum * vg[live] + gg[live]
        vb[live] = cfg.momentum * vb[live] + gb[live]
        params.gamma[live] -= lr * vg[live]
        params.beta[live] -= lr * vb[live]
    if not (np.isfinite(params.gamma).all() and np.isfinite(params.beta).all()):
        raise NumericalError("non-finite affine parameters")
    return params
