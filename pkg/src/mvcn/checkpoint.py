"""FSC1 classifier checkpoints with an optional trailing affine block.

Layout (little-endian): ``b"FSC1"``, u32 d, u32 base_count, u32 novel_count,
then ``d * (base + novel)`` f64 weights in column-major order. An optional
trailer holds u32 count, count f64 gamma values, count f64 beta values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import LinearClassifier
from .postopt import AffineParams

MAGIC = b"FSC1"
_HEADER = struct.Struct("<4sIII")


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(clf: LinearClassifier, params: AffineParams | None = None) -> bytes:
    if not clf.is_finite():
        raise CheckpointError("refusing to save non-finite weights")
    parts = [_HEADER.pack(MAGIC, clf.dim, clf.base_class_count, clf.novel_class_count),
             np.asarray(clf.weights, dtype="<f8").tobytes(order="F")]
    if params is not None:
        if len(params) != clf.n_classes:
            raise CheckpointError("affine parameter count does not match classes")
        parts += [struct.pack("<I", len(params)),
                  params.gamma.astype("<f8").tobytes(),
                  params.beta.astype("<f8").tobytes()]
    return b"".join(parts)


def save_checkpoint(clf: LinearClassifier, path, params: AffineParams | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(clf, params))


def load_checkpoint(path) -> tuple[LinearClassifier, AffineParams | None]:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise CheckpointError("truncated checkpoint header")
    magic, d, n_base, n_novel = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic bytes {magic!r}")
    n = n_base + n_novel
    if d == 0 or n == 0:
        raise CheckpointError("empty classifier")
    end = _HEADER.size + 8 * d * n
    if len(blob) < end:
        raise CheckpointError("truncated weight block")
    flat = np.frombuffer(blob, "<f8", d * n, _HEADER.size)
    weights = flat.reshape((d, n), order="F").astype(np.float64)
    params = None
    if len(blob) > end:
        if len(blob) < end + 4:
            raise CheckpointError("truncated affine block")
        (count,) = struct.unpack_from("<I", blob, end)
        if count != n or len(blob) != end + 4 + 16 * count:
            raise CheckpointError("malformed affine block")
        gamma = np.frombuffer(blob, "<f8", count, end + 4).astype(np.float64)
        beta = np.frombuffer(blob, "<f8", count, end + 4 + 8 * count).astype(np.float64)
        params = AffineParams(gamma, beta)
    return LinearClassifier(weights, n_base, n_novel), params
