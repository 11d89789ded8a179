import struct

import numpy as np
import pytest

from mvcn.checkpoint import (CheckpointError, checkpoint_bytes, load_checkpoint,
                             save_checkpoint)
from mvcn.model import LinearClassifier
from mvcn.postopt import AffineParams


def test_round_trip_bit_exact(tmp_path, rng):
    w = rng.standard_normal((7, 5))
    w[0, 0] = 5e-324
    clf = LinearClassifier(w, 3, 2)
    path = tmp_path / "c.fsc"
    save_checkpoint(clf, path)
    back, params = load_checkpoint(path)
    assert params is None
    assert back.weights.tobytes() == clf.weights.tobytes()
    assert (back.base_class_count, back.novel_class_count) == (3, 2)


def test_layout_is_column_major():
    clf = LinearClassifier(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), 2)
    blob = checkpoint_bytes(clf)
    assert blob[:4] == b"FSC1"
    assert struct.unpack_from("<III", blob, 4) == (3, 2, 0)
    assert struct.unpack_from("<6d", blob, 16) == (1.0, 3.0, 5.0, 2.0, 4.0, 6.0)


def test_affine_trailer(tmp_path, rng):
    clf = LinearClassifier(rng.standard_normal((4, 3)), 2, 1)
    params = AffineParams(rng.standard_normal(3), rng.standard_normal(3))
    path = tmp_path / "c.fsc"
    save_checkpoint(clf, path, params)
    back, got = load_checkpoint(path)
    assert got.gamma.tobytes() == params.gamma.tobytes()
    assert got.beta.tobytes() == params.beta.tobytes()
    assert path.stat().st_size == 16 + 8 * 12 + 4 + 48


@pytest.mark.parametrize("mutate, msg", [
    (lambda b: b"XXXX" + b[4:], "bad magic"),
    (lambda b: b[:10], "truncated checkpoint header"),
    (lambda b: b[:-8], "truncated weight block"),
    (lambda b: b + b"\1\0", "truncated affine block"),
    (lambda b: b + struct.pack("<I", 9), "malformed affine block"),
])
def test_malformed(tmp_path, mutate, msg):
    blob = checkpoint_bytes(LinearClassifier(np.ones((2, 2)), 2))
    path = tmp_path / "bad.fsc"
    path.write_bytes(mutate(blob))
    with pytest.raises(CheckpointError, match=msg):
        load_checkpoint(path)


def test_refuses_nonfinite():
    with pytest.raises(CheckpointError):
        checkpoint_bytes(LinearClassifier(np.array([[np.nan]]), 1))


def test_loads_nonfinite_for_caller_to_reject(tmp_path):
    blob = bytearray(checkpoint_bytes(LinearClassifier(np.ones((2, 1)), 1)))
    blob[16:24] = struct.pack("<d", float("nan"))
    path = tmp_path / "nan.fsc"
    path.write_bytes(bytes(blob))
    clf, _ = load_checkpoint(path)
    assert not clf.is_finite()
