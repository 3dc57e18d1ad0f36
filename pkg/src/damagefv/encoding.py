"""Fisher-vector and bag-of-visual-words encodings of descriptor sets.

Fisher vector layout is ``[d/d alpha (K) | d/d mu (K*D) | d/d sigma (K*D)]``
with the mean and sigma blocks flattened component-major.
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from . import formats
from .descriptors import DescriptorSet
from .gmm import kmeans_pp_seeds, responsibilities

MAGIC = b"NZRF"
EPS = 1e-12


class UnencodableSegmentError(ValueError):
    """No descriptors left to pool for a segment."""


def fv_length(K, D):
    return K + 2 * K * D


def _rows(X):
    if isinstance(X, DescriptorSet):
        return X.vectors.astype(np.float64)
    return np.atleast_2d(np.asarray(X, dtype=np.float64))


def fv_gradients(m, x):
    """Gradients of ``log P(x)`` w.r.t. (alpha, mu, sigma) for one descriptor."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != m.D:
        raise ValueError(f"expected a single descriptor of length {m.D}")
    g = responsibilities(m, x)
    diff = x[None, :] - m.mu
    d_alpha = g - m.weights
    d_mu = g[:, None] * diff / m.sigma**2
    d_sigma = g[:, None] * (diff**2 / m.sigma**3 - 1.0 / m.sigma)
    return d_alpha, d_mu, d_sigma


def pooled_gradients(m, X):
    """Mean of :func:`fv_gradients` over the rows of ``X``."""
    X = _rows(X)
    if X.shape[0] == 0:
        raise UnencodableSegmentError("no descriptors to pool")
    if X.shape[1] != m.D:
        raise ValueError(f"dimension mismatch: got {X.shape[1]}, model has D={m.D}")
    n = X.shape[0]
    gamma = responsibilities(m, X)
    s0 = gamma.sum(axis=0)
    d_mu = np.empty((m.K, m.D))
    d_sigma = np.empty((m.K, m.D))
    for j in range(m.K):
        diff = X - m.mu[j]
        s1 = gamma[:, j] @ diff
        s2 = gamma[:, j] @ (diff * diff)
        d_mu[j] = s1 / m.sigma[j] ** 2
        d_sigma[j] = s2 / m.sigma[j] ** 3 - s0[j] / m.sigma[j]
    d_alpha = s0 / n - m.weights
    return d_alpha, d_mu / n, d_sigma / n


def fisher_scaling(m):
    """Closed-form diagonal Fisher-information normalisers.

    ================  ======================
    block             multiplier
    ================  ======================
    alpha_j           1 / sqrt(w_j)
    mu_jd             sigma_jd / sqrt(w_j)
    sigma_jd          sigma_jd / sqrt(2 w_j)
    ================  ======================
    """
    w = m.weights
    return (
        1.0 / np.sqrt(w),
        m.sigma / np.sqrt(w)[:, None],
        m.sigma / np.sqrt(2.0 * w)[:, None],
    )


def flatten(d_alpha, d_mu, d_sigma):
    return np.concatenate([d_alpha, d_mu.ravel(), d_sigma.ravel()])


def normalize_fv(v):
    v = np.sign(v) * np.sqrt(np.abs(v) + EPS)
    return v / max(np.linalg.norm(v), EPS)


def fisher_encode(m, X, mask=None):
    """Pooled, Fisher-normalised, power- and L2-normalised encoding.

    ``mask`` (boolean ``(H, W)``) restricts ``X`` (a :class:`DescriptorSet`)
    to descriptors centred inside it.
    """
    if mask is not None:
        if not isinstance(X, DescriptorSet):
            raise TypeError("masking needs a DescriptorSet with coordinates")
        X = X.within(mask)
    if len(_rows(X)) == 0:
        raise UnencodableSegmentError("segment has no descriptors")
    grads = pooled_gradients(m, X)
    scale = fisher_scaling(m)
    return normalize_fv(flatten(*(g * s for g, s in zip(grads, scale))))


# --------------------------------------------------------------------------
# NZRF files: magic, u16 version, u32 K, u32 D, f32 payload of K + 2KD

def fv_to_bytes(fv, K, D):
    fv = np.asarray(fv)
    if fv.shape != (fv_length(K, D),):
        raise ValueError(f"FV length {fv.shape} does not match K={K}, D={D}")
    return MAGIC + struct.pack("<HII", formats.FORMAT_VERSION, K, D) + formats.le_bytes(fv, np.float32)


def fv_from_bytes(data, what="FV file"):
    r = formats.Reader(data, what)
    r.expect_magic(MAGIC)
    r.version()
    k, d = r.unpack("<II")
    formats.check_count(k, 2 * d + 1, what=what)
    fv = r.array(np.float32, fv_length(k, d))
    r.finish()
    return fv, k, d


def write_fv(fv, K, D, path):
    formats.write_file(path, fv_to_bytes(fv, K, D))


def read_fv(path):
    return fv_from_bytes(formats.read_file(path), what=str(path))


# --------------------------------------------------------------------------
# bag of visual words

@dataclass(frozen=True)
class Codebook:
    centers: np.ndarray
    sse_trace: tuple = field(default=(), compare=False, repr=False)

    @property
    def K(self):
        return self.centers.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return np.array_equal(self.centers, other.centers)


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def fit_codebook(X, K, seed=0, max_iters=100):
    """Lloyd's k-means from k-means++ seeds.

    An empty cluster keeps its previous centre, which keeps the SSE trace
    non-increasing.
    """
    X = _rows(X)
    n = len(X)
    if n < K:
        raise ValueError(f"need at least K={K} descriptors, got {n}")
    rng = np.random.Generator(np.random.PCG64(seed))
    centers = X[kmeans_pp_seeds(X, K, rng)].copy()
    assign = None
    trace = []
    for _ in range(max_iters):
        d2 = _sq_dists(X, centers)
        new_assign = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(n), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(K):
            members = assign == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
    return Codebook(centers, tuple(trace))


def bov_encode(cb, X):
    """Counts of nearest-centre assignments; ties go to the lower index."""
    X = _rows(X)
    if len(X) == 0:
        raise UnencodableSegmentError("no descriptors to encode")
    nearest = np.argmin(_sq_dists(X, cb.centers), axis=1)
    return np.bincount(nearest, minlength=cb.K)
