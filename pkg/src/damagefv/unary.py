"""Per-pixel class probabilities from a linear softmax over filter-bank features.

This is the pixel stage feeding the CRF. Training minimises class-weighted
softmax cross-entropy with full-batch gradient descent; every accepted step
passes an Armijo test, so the recorded loss never increases.
"""
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from . import formats
from .descriptors import pixel_descriptors

MAGIC = b"NZRU"
PROB_MAGIC = b"NZRP"


def class_weights(freqs):
    """Median-frequency balancing: ``median(freqs) / freqs``."""
    f = np.asarray(freqs, dtype=np.float64)
    if np.any(f <= 0):
        raise ValueError("class frequencies must be positive")
    return np.median(f) / f


@dataclass(frozen=True)
class UnaryModel:
    weights: np.ndarray  # (C, D + 1), last column is the bias
    shift: np.ndarray    # (D,) feature standardisation
    scale: np.ndarray    # (D,)
    patch_size: int = 7
    trace: tuple = field(default=(), compare=False, repr=False)

    @property
    def n_classes(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.weights.shape[1] - 1

    def scores(self, feats):
        z = (np.asarray(feats, dtype=np.float64) - self.shift) / self.scale
        return z @ self.weights[:, :-1].T + self.weights[:, -1]

    def __eq__(self, other):
        if not isinstance(other, UnaryModel):
            return NotImplemented
        return (
            self.patch_size == other.patch_size
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.shift, other.shift)
            and np.array_equal(self.scale, other.scale)
        )


def zero_model(n_classes, dim, patch_size=7):
    return UnaryModel(np.zeros((n_classes, dim + 1)), np.zeros(dim), np.ones(dim), patch_size)


def _nll(scores, y):
    return logsumexp(scores, axis=1) - scores[np.arange(len(y)), y]


def cross_entropy(scores, y):
    return float(np.mean(_nll(scores, y)))


def weighted_cross_entropy(scores, y, cw):
    cw = np.asarray(cw, dtype=np.float64)
    return float(np.mean(cw[y] * _nll(scores, y)))


def loss_and_grad(W, Z, y, cw, reg=0.0):
    """Weighted CE plus ``reg/2 * ||W[:, :-1]||^2`` for augmented inputs ``Z``."""
    scores = Z @ W.T
    loss = weighted_cross_entropy(scores, y, cw) + 0.5 * reg * float(np.sum(W[:, :-1] ** 2))
    p = softmax(scores, axis=1)
    p[np.arange(len(y)), y] -= 1.0
    p *= (np.asarray(cw)[y] / len(y))[:, None]
    grad = p.T @ Z
    grad[:, :-1] += reg * W[:, :-1]
    return loss, grad


def train_unary(X, y, cw=None, n_classes=4, lr=1.0, epochs=200, seed=0,
                max_samples=None, reg=1e-4, patch_size=7):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    missing = sorted(set(range(n_classes)) - set(np.unique(y).tolist()))
    if missing:
        raise ValueError(f"training data has no samples of class(es) {missing}")
    cw = np.ones(n_classes) if cw is None else np.asarray(cw, dtype=np.float64)
    if max_samples is not None and len(y) > max_samples:
        rng = np.random.Generator(np.random.PCG64(seed))
        keep = np.sort(rng.choice(len(y), size=max_samples, replace=False))
        X, y = X[keep], y[keep]

    shift = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Z = np.hstack([(X - shift) / scale, np.ones((len(X), 1))])
    W = np.zeros((n_classes, Z.shape[1]))

    loss, grad = loss_and_grad(W, Z, y, cw, reg)
    trace = [loss]
    step = lr
    for _ in range(epochs):
        gnorm2 = float(np.sum(grad * grad))
        if gnorm2 < 1e-20:
            break
        for _ in range(40):
            W_new = W - step * grad
            new_loss, new_grad = loss_and_grad(W_new, Z, y, cw, reg)
            if new_loss <= loss - 1e-4 * step * gnorm2:
                break
            step *= 0.5
        else:
            break
        W, loss, grad = W_new, new_loss, new_grad
        trace.append(loss)
        step *= 1.5
    return UnaryModel(W, shift, scale, patch_size, trace=tuple(trace))


def unary_probabilities(m, img):
    """``(H, W, C)`` class probabilities for every pixel of ``img``."""
    feats = pixel_descriptors(img, m.patch_size)
    h, w, d = feats.shape
    if d != m.dim:
        raise ValueError(f"descriptor dimension {d} does not match model D={m.dim}")
    return softmax(m.scores(feats.reshape(-1, d)), axis=1).reshape(h, w, m.n_classes)


# --------------------------------------------------------------------------
# NZRU model files: magic, u16 version, u32 C, u32 D, u32 patch,
# f64 shift (D), scale (D), weights (C x (D + 1))

def unary_to_bytes(m):
    head = MAGIC + struct.pack("<HIII", formats.FORMAT_VERSION, m.n_classes, m.dim, m.patch_size)
    return head + b"".join(formats.le_bytes(a, np.float64) for a in (m.shift, m.scale, m.weights))


def unary_from_bytes(data, what="unary model file"):
    r = formats.Reader(data, what)
    r.expect_magic(MAGIC)
    r.version()
    c, d, patch = r.unpack("<III")
    shift = r.array(np.float64, d)
    scale = r.array(np.float64, d)
    weights = r.array(np.float64, formats.check_count(c, d + 1, what=what), (c, d + 1))
    r.finish()
    return UnaryModel(weights, shift, scale, patch)


def write_unary(m, path):
    formats.write_file(path, unary_to_bytes(m))


def read_unary(path):
    return unary_from_bytes(formats.read_file(path), what=str(path))


# --------------------------------------------------------------------------
# NZRP probability fields: magic, u32 W, u32 H, u32 C, C planes of H*W f32

def probabilities_to_bytes(probs):
    probs = np.asarray(probs)
    h, w, c = probs.shape
    formats.check_count(w, h, c, what="probability field")
    planes = np.moveaxis(probs, 2, 0)
    return PROB_MAGIC + struct.pack("<III", w, h, c) + formats.le_bytes(planes, np.float32)


def probabilities_from_bytes(data, what="probability file"):
    r = formats.Reader(data, what)
    r.expect_magic(PROB_MAGIC)
    w, h, c = r.unpack("<III")
    planes = r.array(np.float32, formats.check_count(w, h, c, what=what), (c, h, w))
    r.finish()
    return np.moveaxis(planes, 0, 2).astype(np.float64)


def write_probabilities(probs, path):
    formats.write_file(path, probabilities_to_bytes(probs))


def read_probabilities(path):
    return probabilities_from_bytes(formats.read_file(path), what=str(path))
