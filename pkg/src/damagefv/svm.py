"""One-vs-all linear SVMs over encoded segments.

Each binary problem minimises ``1/2 ||w||^2 + C * sum_i hinge(y_i (w.x_i + b))``
(the liblinear convention for ``C``) with an unregularised bias. Solving uses
full-batch subgradient steps ``1 / (lambda t)`` on the objective divided by
``C n`` (``lambda = 1 / (C n)``); the best iterate seen is kept, so the
returned objective never exceeds the one at the zero initialisation.
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from . import formats

MAGIC = b"NZRS"


@dataclass(frozen=True)
class SvmModel:
    weights: np.ndarray   # (n_classes, dim)
    bias: np.ndarray      # (n_classes,)
    classes: tuple
    C: float = 1.0
    objectives: tuple = field(default=(), compare=False, repr=False)

    @property
    def dim(self):
        return self.weights.shape[1]

    def decision(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: got {X.shape[1]}, model has {self.dim}")
        return X @ self.weights.T + self.bias

    def __eq__(self, other):
        if not isinstance(other, SvmModel):
            return NotImplemented
        return (
            self.classes == other.classes
            and self.C == other.C
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )


def ova_objective(w, b, X, yb, C):
    margins = yb * (X @ w + b)
    return 0.5 * float(w @ w) + C * float(np.sum(np.maximum(0.0, 1.0 - margins)))


def ova_subgradient(w, b, X, yb, C):
    active = (yb * (X @ w + b) < 1.0).astype(np.float64)
    coef = active * yb
    return w - C * (coef @ X), -C * float(coef.sum())


def train_ova_svm(X, y, C=1.0, epochs=300, classes=None):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if C <= 0:
        raise ValueError("C must be positive")
    classes = tuple(sorted(set(y.tolist()))) if classes is None else tuple(classes)
    if len(set(y.tolist())) < 2:
        raise ValueError("one-vs-all training needs at least two classes present")
    n, d = X.shape
    Y = np.where(y[:, None] == np.asarray(classes)[None, :], 1.0, -1.0)
    lam = 1.0 / (C * n)

    def objectives(W, B):
        margins = Y * (X @ W.T + B)
        return 0.5 * np.sum(W * W, axis=1) + C * np.sum(np.maximum(0.0, 1.0 - margins), axis=0)

    W = np.zeros((len(classes), d))
    B = np.zeros(len(classes))
    best_W, best_B = W.copy(), B.copy()
    best_obj = objectives(W, B)
    history = [best_obj.copy()]
    for t in range(1, epochs + 1):
        margins = Y * (X @ W.T + B)
        coef = (margins < 1.0) * Y
        # subgradient of objective / (C n)
        gW = lam * W - (coef.T @ X) / n
        gB = -coef.mean(axis=0)
        step = 1.0 / (lam * t)
        W = W - step * gW
        B = B - step * gB
        obj = objectives(W, B)
        better = obj < best_obj
        best_W[better] = W[better]
        best_B[better] = B[better]
        best_obj = np.where(better, obj, best_obj)
        history.append(best_obj.copy())
    return SvmModel(best_W, best_B, classes, float(C), objectives=tuple(map(tuple, history)))


def svm_predict(m, fv):
    """``(class, scores)``; ties in the score go to the lowest class index."""
    scores = m.decision(fv)[0]
    return m.classes[int(np.argmax(scores))], scores


def predict_many(m, X):
    return np.asarray(m.classes)[np.argmax(m.decision(X), axis=1)]


# --------------------------------------------------------------------------
# NZRS files: magic, u16 version, u32 n_classes, u32 dim, f64 C,
# u32 class ids, f64 weights with the bias as the last column

def svm_to_bytes(m):
    nc = len(m.classes)
    head = MAGIC + struct.pack("<HIId", formats.FORMAT_VERSION, nc, m.dim, m.C)
    body = formats.le_bytes(np.asarray(m.classes), np.uint32)
    return head + body + formats.le_bytes(np.hstack([m.weights, m.bias[:, None]]), np.float64)


def svm_from_bytes(data, what="SVM file"):
    r = formats.Reader(data, what)
    r.expect_magic(MAGIC)
    r.version()
    nc, dim, C = r.unpack("<IId")
    classes = tuple(int(c) for c in r.array(np.uint32, nc))
    wb = r.array(np.float64, formats.check_count(nc, dim + 1, what=what), (nc, dim + 1))
    r.finish()
    return SvmModel(np.ascontiguousarray(wb[:, :-1]), wb[:, -1].copy(), classes, C)


def write_svm(m, path):
    formats.write_file(path, svm_to_bytes(m))


def read_svm(path):
    return svm_from_bytes(formats.read_file(path), what=str(path))
