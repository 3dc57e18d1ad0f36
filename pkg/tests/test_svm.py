import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from damagefv import formats
from damagefv.svm import (
    SvmModel, ova_objective, ova_subgradient, predict_many, read_svm, svm_from_bytes,
    svm_predict, svm_to_bytes, train_ova_svm, write_svm,
)


def separable(seed=0, n=40):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal([-2, -2], 0.5, (n, 2)), rng.normal([2, 2], 0.5, (n, 2))])
    y = np.array([0] * n + [1] * n)
    return X, y


def test_separable_training_accuracy():
    X, y = separable()
    m = train_ova_svm(X, y, C=1.0, epochs=300)
    assert np.mean(predict_many(m, X) == y) == 1.0


def test_objective_never_above_start():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 5))
    y = rng.integers(0, 3, 60)
    m = train_ova_svm(X, y, C=1.0, epochs=50)
    for k, cls in enumerate(m.classes):
        yb = np.where(y == cls, 1.0, -1.0)
        start = ova_objective(np.zeros(5), 0.0, X, yb, 1.0)
        assert ova_objective(m.weights[k], m.bias[k], X, yb, 1.0) <= start
    assert np.all(np.diff(np.array(m.objectives), axis=0) <= 0)


def test_duplicated_data_with_half_c():
    # with a summed hinge, duplicating every sample doubles the data term
    X, y = separable(2, 15)
    a = train_ova_svm(X, y, C=1.0, epochs=200)
    b = train_ova_svm(np.vstack([X, X]), np.concatenate([y, y]), C=0.5, epochs=200)
    np.testing.assert_allclose(b.decision(X), a.decision(X), atol=1e-6)


def test_determinism():
    X, y = separable(3)
    assert train_ova_svm(X, y) == train_ova_svm(X, y)


def test_errors():
    X, y = separable()
    with pytest.raises(ValueError):
        train_ova_svm(X, np.zeros(len(y), int))
    with pytest.raises(ValueError):
        train_ova_svm(X, y, C=0.0)
    m = train_ova_svm(X, y, epochs=5)
    with pytest.raises(ValueError):
        svm_predict(m, np.zeros(3))


def test_predict_examples():
    zero = SvmModel(np.zeros((4, 3)), np.zeros(4), (0, 1, 2, 3))
    assert svm_predict(zero, np.ones(3))[0] == 0
    fixed = SvmModel(np.zeros((4, 1)), np.array([-1.0, 3.0, 0.0, 2.0]), (0, 1, 2, 3))
    cls, scores = svm_predict(fixed, [0.0])
    assert cls == 1
    np.testing.assert_array_equal(scores, [-1, 3, 0, 2])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 100))
def test_predictions_match_dot_scan_and_scale(seed, factor):
    rng = np.random.default_rng(seed)
    m = SvmModel(rng.normal(size=(3, 4)), rng.normal(size=3), (1, 2, 3))
    X = rng.normal(size=(10, 4))
    expected = []
    for x in X:
        scores = [sum(m.weights[k, d] * x[d] for d in range(4)) + m.bias[k] for k in range(3)]
        expected.append(m.classes[scores.index(max(scores))])
    np.testing.assert_array_equal(predict_many(m, X), expected)
    scaled = SvmModel(m.weights * factor, m.bias * factor, m.classes)
    np.testing.assert_array_equal(predict_many(scaled, X), predict_many(m, X))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_subgradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(12, 3))
    yb = rng.choice([-1.0, 1.0], 12)
    w, b = rng.normal(size=3), float(rng.normal())
    margins = yb * (X @ w + b)
    if np.min(np.abs(margins - 1.0)) < 1e-3:
        return  # too close to a kink
    gw, gb = ova_subgradient(w, b, X, yb, 0.7)
    h = 1e-7
    num = np.array([
        (ova_objective(w + h * e, b, X, yb, 0.7) - ova_objective(w - h * e, b, X, yb, 0.7)) / (2 * h)
        for e in np.eye(3)
    ])
    num_b = (ova_objective(w, b + h, X, yb, 0.7) - ova_objective(w, b - h, X, yb, 0.7)) / (2 * h)
    assert np.linalg.norm(gw - num) / max(np.linalg.norm(num), 1e-8) < 1e-5
    assert gb == pytest.approx(num_b, rel=1e-5, abs=1e-7)


def test_roundtrip(tmp_path):
    X, y = separable(4)
    m = train_ova_svm(X, y + 1, C=2.5, epochs=10)
    write_svm(m, tmp_path / "s.nzrs")
    back = read_svm(tmp_path / "s.nzrs")
    assert back == m and back.classes == (1, 2) and back.C == 2.5
    raw = svm_to_bytes(m)
    assert raw[:4] == b"NZRS"
    with pytest.raises(formats.TruncatedError):
        svm_from_bytes(raw[:20])
    with pytest.raises(formats.BadMagicError):
        svm_from_bytes(b"NZRG" + raw[4:])
