"""Class-wise weight statistics and classifier normalizers (mean centering,
variance balancing, norm equalization)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LinearClassifier


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class WeightStats:
    mu: np.ndarray
    sigma: np.ndarray
    norms: np.ndarray
    base_class_count: int
    mu_bar_base: float | None
    mu_bar_novel: float | None
    sigma_bar_base: float | None
    sigma_bar_novel: float | None

    @property
    def mean_ratio(self) -> float | None:
        """``mu_bar_novel / |mu_bar_base|``; None when undefined."""
        if self.mu_bar_novel is None or not self.mu_bar_base:
            return None
        return self.mu_bar_novel / abs(self.mu_bar_base)

    def partition(self, i: int) -> str:
        return "base" if i < self.base_class_count else "novel"

    def summary(self) -> dict:
        return {
            "mu_bar_base": self.mu_bar_base,
            "mu_bar_novel": self.mu_bar_novel,
            "sigma_bar_base": self.sigma_bar_base,
            "sigma_bar_novel": self.sigma_bar_novel,
            "novel_to_base_mean_ratio": self.mean_ratio,
            "base_class_count": self.base_class_count,
            "novel_class_count": int(self.mu.size - self.base_class_count),
        }


def _avg(x: np.ndarray) -> float | None:
    return float(x.mean()) if x.size else None


def compute_stats(clf: LinearClassifier) -> WeightStats:
    """Per-column mean, population std and L2 norm, plus partition averages."""
    w = clf.weights
    mu = w.mean(axis=0)
    sigma = np.sqrt(((w - mu) ** 2).mean(axis=0))
    b = clf.base_class_count
    return WeightStats(mu=mu, sigma=sigma, norms=np.linalg.norm(w, axis=0),
                       base_class_count=b,
                       mu_bar_base=_avg(mu[:b]), mu_bar_novel=_avg(mu[b:]),
                       sigma_bar_base=_avg(sigma[:b]),
                       sigma_bar_novel=_avg(sigma[b:]))


def _scope_slice(clf: LinearClassifier, scope: str) -> slice:
    if scope == "novel_only":
        return slice(clf.base_class_count, None)
    if scope == "both":
        return slice(None)
    raise ValueError(f"unknown centering scope {scope!r}")


def mean_center(clf: LinearClassifier, scope: str = "novel_only") -> None:
    """Subtract each in-scope column's mean from its entries, in place."""
    cols = _scope_slice(clf, scope)
    block = clf.weights[:, cols]
    block -= block.mean(axis=0)


def variance_balance(clf: LinearClassifier, stats: WeightStats | None = None) -> None:
    """Rescale base column ``i`` by ``sigma_bar_novel / sigma_base_i``, in place."""
    if stats is None:
        stats = compute_stats(clf)
    b = clf.base_class_count
    base_sigma = stats.sigma[:b]
    zero = np.flatnonzero(base_sigma <= 0)
    if zero.size:
        raise NormalizationError(f"zero-variance base class {int(zero[0])}")
    if not stats.sigma_bar_novel:
        raise NormalizationError("untrained novel classifier")
    clf.weights[:, :b] *= stats.sigma_bar_novel / base_sigma


def norm_equalize(clf: LinearClassifier) -> None:
    """Rescale every column to the mean column L2 norm, in place."""
    norms = np.linalg.norm(clf.weights, axis=0)
    zero = np.flatnonzero(norms <= 0)
    if zero.size:
        raise NormalizationError(f"zero-norm column {int(zero[0])}")
    clf.weights *= norms.mean() / norms


def proposition1_residual(column) -> float:
    """``|sigma - ||theta||_2 / sqrt(d)|``; zero exactly when the column mean is zero."""
    col = np.asarray(column, dtype=np.float64)
    if col.size == 0:
        raise ValueError("empty column")
    sigma = np.sqrt(((col - col.mean()) ** 2).mean())
    return float(abs(sigma - np.linalg.norm(col) / np.sqrt(col.size)))


@dataclass(frozen=True)
class NormalizationConfig:
    """Which normalization hooks run during and after fine-tuning.

    ``centering_cadence`` is ``"step"`` (project after every optimizer step)
    or ``"final"`` (once, after the last step).
    """

    online_mean_centering: str = "off"
    variance_balancing: str = "off"
    cosine: bool = False
    freeze_base: bool = False
    norm_equalization: bool = False
    centering_cadence: str = "step"

    def __post_init__(self):
        if self.online_mean_centering not in ("off", "novel_only", "both"):
            raise ValueError(f"bad online_mean_centering {self.online_mean_centering!r}")
        if self.variance_balancing not in ("off", "offline", "in_training"):
            raise ValueError(f"bad variance_balancing {self.variance_balancing!r}")
        if self.centering_cadence not in ("step", "final"):
            raise ValueError(f"bad centering_cadence {self.centering_cadence!r}")
        if self.cosine and self.variance_balancing != "off":
            raise ValueError("cosine mode and variance balancing are mutually exclusive")

    @property
    def logit_mode(self) -> str:
        return "cosine" if self.cosine else "linear"
