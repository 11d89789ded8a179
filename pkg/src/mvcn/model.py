"""Bias-free linear classifier over frozen features and its softmax
cross-entropy machinery.

Functions accept a single feature vector ``(d,)`` or a batch ``(n, d)``.
Batched losses and gradients are averaged over the batch.
"""

from __future__ import annotations

import numpy as np

LOG_EPS = 1e-300


class LinearClassifier:
    """Weight matrix of shape ``(d, |C|)``; column ``i`` scores class ``i``.

    Base columns come first, novel columns after them.
    """

    def __init__(self, weights, base_class_count: int, novel_class_count: int = 0,
                 class_map=None):
        w = np.array(weights, dtype=np.float64, copy=True)
        if w.ndim != 2:
            raise ValueError("weights must be a d x |C| matrix")
        if base_class_count + novel_class_count != w.shape[1]:
            raise ValueError(
                f"{w.shape[1]} columns but {base_class_count} base + "
                f"{novel_class_count} novel classes")
        self.weights = w
        self.base_class_count = int(base_class_count)
        self.novel_class_count = int(novel_class_count)
        self.class_map = tuple(range(w.shape[1]) if class_map is None else class_map)
        if len(self.class_map) != w.shape[1]:
            raise ValueError("class_map length must match the column count")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]

    @property
    def base(self) -> np.ndarray:
        return self.weights[:, :self.base_class_count]

    @property
    def novel(self) -> np.ndarray:
        return self.weights[:, self.base_class_count:]

    def copy(self) -> "LinearClassifier":
        return LinearClassifier(self.weights, self.base_class_count,
                                self.novel_class_count, self.class_map)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.weights).all())

    def __repr__(self) -> str:
        return (f"LinearClassifier(d={self.dim}, base={self.base_class_count}, "
                f"novel={self.novel_class_count})")


def _check_dim(clf: LinearClassifier, f: np.ndarray) -> None:
    if f.shape[-1] != clf.dim:
        raise ValueError(f"feature length {f.shape[-1]} != classifier dim {clf.dim}")


def _safe_norm(x: np.ndarray, axis) -> np.ndarray:
    norm = np.linalg.norm(x, axis=axis, keepdims=True)
    return np.where(norm > 0, norm, 1.0), norm > 0


def logits(clf: LinearClassifier, f, mode: str = "linear",
           cosine_scale: float = 10.0) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    _check_dim(clf, f)
    if mode == "linear":
        return f @ clf.weights
    if mode == "cosine":
        wnorm, wmask = _safe_norm(clf.weights, 0)
        fnorm, fmask = _safe_norm(f, -1)
        return cosine_scale * ((f / fnorm) @ (clf.weights / wnorm)) * (fmask & wmask[0])
    raise ValueError(f"unknown logit mode {mode!r}")


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(p, label) -> float:
    """``-log p[label]`` (mean over a batch), guarded at ``-log(1e-300)``."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 1:
        return float(-np.log(max(p[int(label)], LOG_EPS)))
    label = np.asarray(label, dtype=np.int64)
    picked = p[np.arange(label.size), label]
    return float(-np.log(np.maximum(picked, LOG_EPS)).mean())


def one_hot(label, n_classes: int) -> np.ndarray:
    label = np.asarray(label, dtype=np.int64)
    return np.eye(n_classes)[label]


def ce_gradient(f, p, label) -> np.ndarray:
    """Loss gradient w.r.t. the weight matrix for linear logits.

    Column ``i`` is ``(p_i - y_i) * f``. Descending along it raises the true
    class's weights and lowers every other column when ``f >= 0``.
    """
    f = np.asarray(f, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    delta = p - one_hot(label, p.shape[-1])
    if f.ndim == 1:
        return np.outer(f, delta)
    return f.T @ delta / f.shape[0]


def cosine_gradient(clf: LinearClassifier, f, p, label,
                    cosine_scale: float = 10.0) -> np.ndarray:
    """Loss gradient w.r.t. the weights for cosine logits."""
    f = np.atleast_2d(np.asarray(f, dtype=np.float64))
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    label = np.atleast_1d(label)
    fnorm, fmask = _safe_norm(f, 1)
    fhat = f / fnorm * fmask
    wnorm, wmask = _safe_norm(clf.weights, 0)
    delta = p - one_hot(label, p.shape[1])
    g = fhat.T @ delta / f.shape[0]
    what = clf.weights / wnorm
    proj = (what * g).sum(axis=0, keepdims=True)
    return cosine_scale * (g - what * proj) / wnorm * wmask


def loss_and_gradient(clf: LinearClassifier, f, label, mode: str = "linear",
                      cosine_scale: float = 10.0) -> tuple[float, np.ndarray]:
    p = softmax(logits(clf, f, mode, cosine_scale))
    loss = cross_entropy_loss(p, label)
    if mode == "linear":
        return loss, ce_gradient(f, p, label)
    return loss, cosine_gradient(clf, f, p, label, cosine_scale)
