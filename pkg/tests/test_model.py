import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvcn.model import (LinearClassifier, ce_gradient, cosine_gradient,
                        cross_entropy_loss, logits, loss_and_gradient, softmax)

mpmath.mp.dps = 50


def mp_softmax(z):
    e = [mpmath.exp(mpmath.mpf(float(v))) for v in z]
    s = mpmath.fsum(e)
    return [float(v / s) for v in e]


def test_logits_linear_and_cosine():
    clf = LinearClassifier(np.eye(2), 2)
    f = np.array([3.0, 4.0])
    assert np.array_equal(logits(clf, f), [3.0, 4.0])
    assert np.allclose(logits(clf, f, "cosine", 1.0), [0.6, 0.8], atol=1e-15)
    assert np.array_equal(logits(clf, np.zeros(2), "cosine"), [0.0, 0.0])


def test_cosine_zero_column():
    clf = LinearClassifier(np.array([[1.0, 0.0], [0.0, 0.0]]), 2)
    assert np.array_equal(logits(clf, np.array([2.0, 1.0]), "cosine", 1.0)[1:], [0.0])


def test_logits_dim_mismatch():
    with pytest.raises(ValueError):
        logits(LinearClassifier(np.eye(3), 3), np.ones(2))


def test_softmax_examples():
    assert np.array_equal(softmax([0.0, 0.0]), [0.5, 0.5])
    p = softmax([1000.0, 1000.0, 1000.0])
    assert np.allclose(p, 1 / 3, atol=1e-15)
    assert np.allclose(softmax([1.0, 2.0, 3.0]), mp_softmax([1, 2, 3]), rtol=1e-14, atol=0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.floats(-1e3, 1e3))
def test_softmax_shift_invariance(z, c):
    z = np.array(z)
    p = softmax(z)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.allclose(softmax(z + c), p, atol=1e-12, rtol=0)
    assert np.allclose(p, mp_softmax(z), atol=1e-12, rtol=0)


def test_cross_entropy_examples(rng):
    assert cross_entropy_loss([1.0, 0.0, 0.0], 0) == 0.0
    assert cross_entropy_loss([0.5, 0.5], 0) == pytest.approx(np.log(2), abs=1e-15)
    assert cross_entropy_loss([1.0, 0.0], 1) == pytest.approx(-np.log(1e-300))
    for _ in range(20):
        p = rng.dirichlet(np.ones(6))
        label = int(rng.integers(6))
        ref = float(-mpmath.log(mpmath.mpf(float(p[label]))))
        assert cross_entropy_loss(p, label) == pytest.approx(ref, rel=1e-14)


def test_gradient_worked_example():
    p = np.array([0.05, 0.05, 0.04, 0.06, 0.05, 0.05, 0.55, 0.15])
    g = ce_gradient(np.ones(8), p, 6)
    assert np.allclose(g[:, 6], -0.45, rtol=0, atol=1e-15)
    assert np.allclose(g[:, 7], 0.15, rtol=0, atol=1e-15)
    g2 = ce_gradient(np.ones(8), np.array([0.7, 0.3]), 0)
    assert np.allclose(-g2[:, 0], 0.3, rtol=0, atol=1e-15)


def test_gradient_perfect_prediction():
    g = ce_gradient(np.arange(4.0), np.array([0.0, 1.0, 0.0]), 1)
    assert not g.any()


def test_descent_raises_true_column_for_nonnegative_features(rng):
    f = rng.random(10)
    p = rng.dirichlet(np.ones(5))
    step = -ce_gradient(f, p, 2)
    assert (step[:, 2] >= 0).all()
    assert (np.delete(step, 2, axis=1) <= 0).all()


def loss_of(w, f, label, mode="linear"):
    clf = LinearClassifier(w, w.shape[1])
    return cross_entropy_loss(softmax(logits(clf, f, mode, 3.0)), label)


def central_diff(fn, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.mark.parametrize("batch", [False, True])
def test_gradient_matches_finite_differences(rng, batch):
    for _ in range(10):
        d, c = rng.integers(2, 12), rng.integers(2, 8)
        w = rng.standard_normal((d, c))
        f = rng.standard_normal((5, d) if batch else d)
        label = rng.integers(c, size=5) if batch else int(rng.integers(c))
        clf = LinearClassifier(w, c)
        _, g = loss_and_gradient(clf, f, label)
        assert rel_err(g, central_diff(lambda x: loss_of(x, f, label), w)) < 1e-6


def test_cosine_gradient_matches_finite_differences(rng):
    for _ in range(10):
        d, c = rng.integers(2, 10), rng.integers(2, 6)
        w = rng.standard_normal((d, c))
        f = rng.random((4, d))
        label = rng.integers(c, size=4)
        clf = LinearClassifier(w, c)
        p = softmax(logits(clf, f, "cosine", 3.0))
        g = cosine_gradient(clf, f, p, label, 3.0)
        num = central_diff(lambda x: loss_of(x, f, label, "cosine"), w)
        assert rel_err(g, num) < 1e-6


def test_classifier_partitions():
    w = np.arange(12.0).reshape(3, 4)
    clf = LinearClassifier(w, 3, 1)
    assert clf.dim == 3 and clf.n_classes == 4
    assert np.array_equal(clf.novel[:, 0], w[:, 3])
    with pytest.raises(ValueError):
        LinearClassifier(w, 2, 1)
    bad = clf.copy()
    bad.weights[0, 0] = np.nan
    assert clf.is_finite() and not bad.is_finite()
