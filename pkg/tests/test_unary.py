import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from damagefv import formats
from damagefv.descriptors import pixel_descriptors
from damagefv.synth import texture
from damagefv.unary import (
    class_weights, cross_entropy, loss_and_grad, probabilities_from_bytes, probabilities_to_bytes,
    read_probabilities, read_unary, train_unary, unary_from_bytes, unary_probabilities,
    unary_to_bytes, weighted_cross_entropy, write_probabilities, write_unary, zero_model,
)


def test_class_weight_examples():
    np.testing.assert_allclose(class_weights([0.25] * 4), 1.0)
    np.testing.assert_allclose(class_weights([0.54, 0.22, 0.24]), [0.4444444, 1.0909091, 1.0], atol=1e-6)
    with pytest.raises(ValueError):
        class_weights([0.5, 0.5, 0.0])


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6), st.randoms())
def test_class_weights_equivariant(freqs, rnd):
    perm = list(range(len(freqs)))
    rnd.shuffle(perm)
    np.testing.assert_allclose(class_weights(np.array(freqs)[perm]), class_weights(freqs)[perm])


def test_uniform_weights_bit_identical():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=(50, 4))
    y = rng.integers(0, 4, 50)
    assert weighted_cross_entropy(scores, y, np.ones(4)) == cross_entropy(scores, y)


def test_zero_model_initial_loss():
    Z = np.hstack([np.random.default_rng(1).normal(size=(10, 3)), np.ones((10, 1))])
    y = np.array([0, 1] * 5)
    loss, _ = loss_and_grad(np.zeros((2, 4)), Z, y, np.ones(2))
    assert loss == pytest.approx(math.log(2), abs=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    Z = np.hstack([rng.normal(size=(30, 4)), np.ones((30, 1))])
    y = rng.integers(0, 3, 30)
    cw = rng.uniform(0.3, 2.0, 3)
    W = rng.normal(size=(3, 5))
    _, grad = loss_and_grad(W, Z, y, cw, reg=1e-2)
    num = np.zeros_like(W)
    h = 1e-6
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        num[idx] = (loss_and_grad(Wp, Z, y, cw, 1e-2)[0] - loss_and_grad(Wm, Z, y, cw, 1e-2)[0]) / (2 * h)
    assert np.linalg.norm(grad - num) / np.linalg.norm(num) < 1e-5


def test_zero_model_uniform_and_bias_shift():
    rng = np.random.default_rng(2)
    img = rng.random((9, 9))
    m = zero_model(4, 16)
    np.testing.assert_array_equal(unary_probabilities(m, img), 0.25)
    w = rng.normal(size=(4, 17))
    shifted = w.copy()
    shifted[:, -1] += 7.3          # same constant added to every class score
    a = unary_probabilities(type(m)(w, m.shift, m.scale), img)
    b = unary_probabilities(type(m)(shifted, m.shift, m.scale), img)
    np.testing.assert_allclose(a, b, atol=1e-12)


def two_texture_image(seed):
    rng = np.random.default_rng(seed)
    h, w = 24, 32
    img = np.empty((h, w))
    img[:, :16] = texture(1, h, w, rng)[:, :16]
    img[:, 16:] = texture(3, h, w, rng)[:, 16:]
    labels = np.zeros((h, w), int)
    labels[:, 16:] = 1
    return img, labels


def test_training_monotone_and_accurate():
    img, labels = two_texture_image(0)
    feats = pixel_descriptors(img, 7)
    model = train_unary(feats.reshape(-1, feats.shape[-1]), labels.ravel(), n_classes=2, epochs=100)
    assert np.all(np.diff(model.trace) <= 0)
    test_img, test_labels = two_texture_image(1)
    probs = unary_probabilities(model, test_img)
    np.testing.assert_allclose(probs.sum(axis=2), 1.0, atol=1e-12)
    assert np.all(probs >= 0)
    assert np.mean(probs.argmax(axis=2) == test_labels) > 0.8


def test_training_determinism_and_errors():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 3))
    y = (X[:, 0] > 0).astype(int)
    a = train_unary(X, y, n_classes=2, epochs=20, seed=4, max_samples=100)
    b = train_unary(X, y, n_classes=2, epochs=20, seed=4, max_samples=100)
    assert a == b
    with pytest.raises(ValueError):
        train_unary(X, np.zeros(200, int), n_classes=2)


def test_model_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    X = rng.normal(size=(60, 4))
    m = train_unary(X, rng.integers(0, 3, 60), n_classes=3, epochs=5, patch_size=9)
    write_unary(m, tmp_path / "u.nzru")
    back = read_unary(tmp_path / "u.nzru")
    assert back == m and back.patch_size == 9
    with pytest.raises(formats.BadMagicError):
        unary_from_bytes(b"NZRS" + unary_to_bytes(m)[4:])


def test_probability_roundtrip(tmp_path):
    probs = np.random.default_rng(6).dirichlet(np.ones(4), size=(5, 7)).astype(np.float32).astype(np.float64)
    write_probabilities(probs, tmp_path / "p.nzrp")
    np.testing.assert_array_equal(read_probabilities(tmp_path / "p.nzrp"), probs)
    raw = probabilities_to_bytes(probs)
    assert raw[:4] == b"NZRP" and raw[4:8] == (7).to_bytes(4, "little")
    with pytest.raises(formats.TruncatedError):
        probabilities_from_bytes(raw[:-4])
