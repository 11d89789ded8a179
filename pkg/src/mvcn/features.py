"""Frozen-feature datasets: validation, FSF1/CSV persistence, synthesis and
episodic sampling."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"FSF1"
_HEADER = struct.Struct("<4sIIIB3x")


class DatasetError(ValueError):
    """Raised for malformed or inconsistent feature data."""


class FeatureDataset:
    """Labeled feature vectors with a class table.

    ``features`` is an ``(n, dim)`` float32 array and ``labels`` an ``(n,)``
    int64 array of class identifiers. Both are read-only after construction.
    """

    def __init__(self, features, labels, classes: Sequence[int] | None = None,
                 relu_constraint: bool = False, name: str = ""):
        feats = np.array(features, dtype=np.float32, copy=True)
        labs = np.array(labels, dtype=np.int64, copy=True).reshape(-1)
        if feats.ndim == 1 and feats.size == 0:
            feats = feats.reshape(0, 0)
        if feats.ndim != 2:
            raise DatasetError("features must be a 2-D array")
        if feats.shape[0] != labs.shape[0]:
            raise DatasetError(
                f"{feats.shape[0]} feature rows but {labs.shape[0]} labels")
        if classes is None:
            classes = np.unique(labs).tolist()
        feats.setflags(write=False)
        labs.setflags(write=False)
        self._features = feats
        self._labels = labs
        self.classes = tuple(int(c) for c in classes)
        self.relu_constraint = bool(relu_constraint)
        self.name = name

    @property
    def features(self) -> np.ndarray:
        return self._features

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def dim(self) -> int:
        return self._features.shape[1]

    def __len__(self) -> int:
        return self._labels.shape[0]

    def __repr__(self) -> str:
        return (f"FeatureDataset(name={self.name!r}, dim={self.dim}, "
                f"classes={len(self.classes)}, samples={len(self)})")

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureDataset):
            return NotImplemented
        return (self.classes == other.classes
                and self.relu_constraint == other.relu_constraint
                and self.features.shape == other.features.shape
                and np.array_equal(self.labels, other.labels)
                and self.features.tobytes() == other.features.tobytes())

    __hash__ = None

    def class_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.labels, return_counts=True)
        table = dict.fromkeys(self.classes, 0)
        table.update(zip(ids.tolist(), counts.tolist()))
        return table

    def indices_of(self, class_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == class_id)

    def subset(self, index, classes: Sequence[int] | None = None,
               name: str | None = None) -> "FeatureDataset":
        index = np.asarray(index, dtype=np.int64)
        return FeatureDataset(self.features[index], self.labels[index],
                              self.classes if classes is None else classes,
                              self.relu_constraint,
                              self.name if name is None else name)

    def validate(self) -> "FeatureDataset":
        """Check every dataset invariant, raising DatasetError with the
        offending row index where one applies."""
        if self.dim == 0:
            raise DatasetError("zero dimensionality")
        if len(set(self.classes)) != len(self.classes):
            raise DatasetError("duplicate class id in class table")
        if any(c < 0 for c in self.classes):
            raise DatasetError("negative class id in class table")
        known = np.isin(self.labels, np.asarray(self.classes, dtype=np.int64))
        if not known.all():
            row = int(np.argmin(known))
            raise DatasetError(
                f"unknown class id {int(self.labels[row])} at row {row}")
        finite = np.isfinite(self.features).all(axis=1)
        if not finite.all():
            raise DatasetError(f"non-finite value at row {int(np.argmin(finite))}")
        if self.relu_constraint:
            ok = (self.features >= 0).all(axis=1)
            if not ok.all():
                raise DatasetError(
                    f"negative activation at row {int(np.argmin(ok))}")
        for cls, count in self.class_counts().items():
            if count == 0:
                raise DatasetError(f"class with zero samples: {cls}")
        return self


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("binary", "text"):
            raise ValueError(f"unknown dataset format {fmt!r}")
        return fmt
    return "text" if path.suffix.lower() in (".csv", ".txt") else "binary"


def save_dataset(ds: FeatureDataset, path, format: str | None = None) -> None:
    """Write ``ds`` as FSF1 binary or as CSV (``label,f0,...``)."""
    path = Path(path)
    ds.validate()
    fmt = _infer_format(path, format)
    if fmt == "binary":
        record = np.dtype([("label", "<u4"), ("values", "<f4", (ds.dim,))])
        rows = np.empty(len(ds), dtype=record)
        rows["label"] = ds.labels
        rows["values"] = ds.features
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, ds.dim, len(ds.classes), len(ds),
                                  int(ds.relu_constraint)))
            fh.write(np.asarray(ds.classes, dtype="<u4").tobytes())
            fh.write(rows.tobytes())
    else:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label"] + [f"f{j}" for j in range(ds.dim)])
            # 9 significant digits round-trip float32 exactly
            for label, row in zip(ds.labels.tolist(), ds.features.tolist()):
                writer.writerow([label] + [format_float(v) for v in row])


def format_float(v: float) -> str:
    return format(v, ".9g")


def load_dataset(path, format: str | None = None,
                 relu_constraint: bool | None = None, name: str | None = None
                 ) -> FeatureDataset:
    """Read a dataset written by :func:`save_dataset`.

    Row indices in error messages are 0-based sample indices. For CSV input
    the class table is the sorted set of labels and ``relu_constraint``
    defaults to False; for binary input the header flag is used unless
    ``relu_constraint`` forces it on.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    name = path.stem if name is None else name
    if fmt == "binary":
        ds = _load_binary(path, name, relu_constraint)
    else:
        ds = _load_text(path, name, bool(relu_constraint))
    return ds.validate()


def _load_binary(path: Path, name: str, relu: bool | None) -> FeatureDataset:
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise DatasetError("malformed header: file too short")
    magic, dim, n_classes, n_samples, flag = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DatasetError(f"malformed header: bad magic {magic!r}")
    if blob[_HEADER.size - 3:_HEADER.size] != b"\0\0\0":
        raise DatasetError("malformed header: reserved bytes not zero")
    if flag not in (0, 1):
        raise DatasetError(f"malformed header: relu flag {flag}")
    if dim == 0:
        raise DatasetError("zero dimensionality")
    offset = _HEADER.size
    class_bytes = 4 * n_classes
    record = np.dtype([("label", "<u4"), ("values", "<f4", (dim,))])
    expected = offset + class_bytes + record.itemsize * n_samples
    if len(blob) != expected:
        complete = max(len(blob) - offset - class_bytes, 0) // record.itemsize
        raise DatasetError(
            f"dimension mismatch at row {min(complete, n_samples)}: expected "
            f"{expected} bytes for dim={dim}, got {len(blob)}")
    classes = np.frombuffer(blob, "<u4", n_classes, offset)
    rows = np.frombuffer(blob, record, n_samples, offset + class_bytes)
    return FeatureDataset(rows["values"], rows["label"].astype(np.int64),
                          classes.tolist(), bool(flag) or bool(relu), name)


def _load_text(path: Path, name: str, relu: bool) -> FeatureDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("malformed header: empty file") from None
        dim = len(header) - 1
        if (dim < 1 or header[0].strip() != "label"
                or [h.strip() for h in header[1:]] != [f"f{j}" for j in range(dim)]):
            raise DatasetError("malformed header: expected label,f0,...,f{d-1}")
        labels, feats = [], []
        for row, fields in enumerate(r for r in reader if r):
            if len(fields) != dim + 1:
                raise DatasetError(
                    f"dimension mismatch at row {row}: expected {dim} values, "
                    f"got {len(fields) - 1}")
            try:
                label = int(fields[0])
                values = [float(v) for v in fields[1:]]
            except ValueError as exc:
                raise DatasetError(f"unparsable value at row {row}: {exc}") from None
            if label < 0:
                raise DatasetError(f"unknown class id {label} at row {row}")
            labels.append(label)
            feats.append(values)
    feats_arr = np.asarray(feats, dtype=np.float32).reshape(len(feats), dim)
    return FeatureDataset(feats_arr, labels, None, relu, name)


def split_base_novel(ds: FeatureDataset, novel_class_ids: Iterable[int],
                     seed: int = 0) -> tuple[FeatureDataset, FeatureDataset]:
    """Partition ``ds`` by class into disjoint base and novel datasets.

    The partition is fully determined by ``novel_class_ids``; ``seed`` is
    accepted for interface symmetry and does not affect the result.
    """
    novel = {int(c) for c in novel_class_ids}
    if not novel:
        raise DatasetError("novel class set is empty")
    unknown = novel.difference(ds.classes)
    if unknown:
        raise DatasetError(f"unknown class id(s) {sorted(unknown)}")
    if len(novel) == len(ds.classes):
        raise DatasetError("novel class set equals all classes")
    base_classes = [c for c in ds.classes if c not in novel]
    novel_classes = [c for c in ds.classes if c in novel]
    is_novel = np.isin(ds.labels, novel_classes)
    return (ds.subset(np.flatnonzero(~is_novel), base_classes, f"{ds.name}-base"),
            ds.subset(np.flatnonzero(is_novel), novel_classes, f"{ds.name}-novel"))


def split_holdout(ds: FeatureDataset, test_fraction: float, seed: int
                  ) -> tuple[FeatureDataset, FeatureDataset]:
    """Per-class random train/test split; every class keeps ≥ 1 train sample."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in ds.classes:
        idx = rng.permutation(ds.indices_of(cls))
        n_test = min(int(round(test_fraction * idx.size)), idx.size - 1)
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return (ds.subset(np.sort(np.concatenate(train)), name=f"{ds.name}-train"),
            ds.subset(np.sort(np.concatenate(test)), name=f"{ds.name}-test"))


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int = 5
    k_shot: int = 5
    query_per_class: int = 15
    seed: int = 0

    def __post_init__(self):
        for field in ("n_way", "k_shot", "query_per_class"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be a positive integer")


@dataclass(frozen=True)
class Episode:
    """One N-way K-shot task. Labels inside every member dataset are episode
    class indices: base classes first (``0..B-1``), then the sampled novel
    classes (``B..B+N-1``). ``class_map[i]`` is the source id of index ``i``.
    """

    novel_support: FeatureDataset
    novel_query: FeatureDataset
    base_query: FeatureDataset
    class_map: tuple[int, ...]
    n_base: int
    base_support: FeatureDataset | None = None

    @property
    def n_novel(self) -> int:
        return len(self.class_map) - self.n_base

    @property
    def n_classes(self) -> int:
        return len(self.class_map)

    def training_set(self) -> FeatureDataset:
        """Samples the classifier may be fine-tuned on in this episode."""
        if self.base_support is None:
            return self.novel_support
        return FeatureDataset(
            np.concatenate([self.base_support.features, self.novel_support.features]),
            np.concatenate([self.base_support.labels, self.novel_support.labels]),
            range(self.n_classes), self.novel_support.relu_constraint, "support")


def _remap(ds: FeatureDataset, index: np.ndarray, lookup: dict[int, int],
           classes: Sequence[int], name: str) -> FeatureDataset:
    labels = np.fromiter((lookup[int(c)] for c in ds.labels[index]),
                         dtype=np.int64, count=index.size)
    return FeatureDataset(ds.features[index], labels, classes,
                          ds.relu_constraint, name)


def sample_episode(base: FeatureDataset, novel: FeatureDataset,
                   spec: EpisodeSpec, base_mode: str = "zero_base",
                   base_support_pool: FeatureDataset | None = None,
                   base_query_per_class: int | None = None) -> Episode:
    """Draw one episode, deterministically from ``spec.seed``.

    ``base`` is the base evaluation pool; it becomes ``base_query`` in full
    unless ``base_query_per_class`` subsamples it. In ``undersampled_balanced``
    mode, ``k_shot`` samples per base class form ``base_support``; they come
    from ``base_support_pool`` when given, otherwise from ``base`` (and are
    then excluded from the queries).
    """
    if base_mode not in ("zero_base", "undersampled_balanced"):
        raise ValueError(f"unknown base mode {base_mode!r}")
    overlap = set(base.classes) & set(novel.classes)
    if overlap:
        raise DatasetError(f"base and novel classes overlap: {sorted(overlap)}")
    if spec.n_way > len(novel.classes):
        raise DatasetError(
            f"insufficient novel classes: {spec.n_way}-way requested, "
            f"{len(novel.classes)} available")
    rng = np.random.default_rng(spec.seed)
    chosen = [novel.classes[i] for i in
              np.sort(rng.permutation(len(novel.classes))[:spec.n_way])]
    need = spec.k_shot + spec.query_per_class
    support_idx, query_idx = [], []
    for cls in chosen:
        idx = novel.indices_of(cls)
        if idx.size < need:
            raise DatasetError(
                f"insufficient samples in novel class {cls}: {idx.size} < {need}")
        picked = rng.permutation(idx)[:need]
        support_idx.append(np.sort(picked[:spec.k_shot]))
        query_idx.append(np.sort(picked[spec.k_shot:]))

    n_base = len(base.classes)
    class_map = tuple(base.classes) + tuple(chosen)
    lookup = {c: i for i, c in enumerate(class_map)}
    all_classes = range(len(class_map))

    base_keep = []
    base_sup = []
    for cls in base.classes:
        idx = base.indices_of(cls)
        if base_mode == "undersampled_balanced" and base_support_pool is None:
            if idx.size <= spec.k_shot:
                raise DatasetError(
                    f"base class {cls} has too few samples for balanced support")
            idx = rng.permutation(idx)
            base_sup.append(np.sort(idx[:spec.k_shot]))
            idx = np.sort(idx[spec.k_shot:])
        if base_query_per_class is not None and idx.size > base_query_per_class:
            idx = np.sort(rng.permutation(idx)[:base_query_per_class])
        base_keep.append(idx)

    base_support = None
    if base_mode == "undersampled_balanced":
        if base_support_pool is not None:
            if tuple(base_support_pool.classes) != tuple(base.classes):
                raise DatasetError("base support pool class table differs from base")
            for cls in base.classes:
                idx = base_support_pool.indices_of(cls)
                if idx.size < spec.k_shot:
                    raise DatasetError(
                        f"base class {cls} has too few samples for balanced support")
                base_sup.append(np.sort(rng.permutation(idx)[:spec.k_shot]))
            src = base_support_pool
        else:
            src = base
        base_support = _remap(src, np.concatenate(base_sup), lookup,
                              all_classes, "base-support")

    return Episode(
        novel_support=_remap(novel, np.concatenate(support_idx), lookup,
                             all_classes, "novel-support"),
        novel_query=_remap(novel, np.concatenate(query_idx), lookup,
                           all_classes, "novel-query"),
        base_query=_remap(base, np.concatenate(base_keep), lookup,
                          all_classes, "base-query"),
        class_map=class_map,
        n_base=n_base,
        base_support=base_support,
    )


@dataclass(frozen=True)
class SyntheticConfig:
    dim: int = 32
    n_base_classes: int = 20
    n_novel_classes: int = 20
    samples_per_class: int = 100
    prototype_scale: float = 2.5
    within_class_std: float = 2.125
    seed: int = 0

    def __post_init__(self):
        for field in ("dim", "n_base_classes", "n_novel_classes", "samples_per_class"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        if self.prototype_scale <= 0:
            raise ValueError("prototype_scale must be positive")
        if self.within_class_std < 0:
            raise ValueError("within_class_std must be non-negative")

    @property
    def base_class_ids(self) -> list[int]:
        return list(range(self.n_base_classes))

    @property
    def novel_class_ids(self) -> list[int]:
        return list(range(self.n_base_classes,
                          self.n_base_classes + self.n_novel_classes))


def generate_synthetic(cfg: SyntheticConfig) -> FeatureDataset:
    """Non-negative class-clustered features.

    Class ``c`` gets prototype ``|N(0, I)| * prototype_scale``; each sample is
    the prototype plus ``N(0, within_class_std^2)`` noise, clamped at zero.
    Classes ``0..n_base-1`` are meant as base, the rest as novel.
    """
    rng = np.random.default_rng(cfg.seed)
    n_classes = cfg.n_base_classes + cfg.n_novel_classes
    prototypes = np.abs(rng.standard_normal((n_classes, cfg.dim))) * cfg.prototype_scale
    labels = np.repeat(np.arange(n_classes), cfg.samples_per_class)
    noise = rng.standard_normal((labels.size, cfg.dim)) * cfg.within_class_std
    feats = np.maximum(prototypes[labels] + noise, 0.0)
    return FeatureDataset(feats, labels, range(n_classes), True,
                          f"synthetic-d{cfg.dim}-s{cfg.seed}")
