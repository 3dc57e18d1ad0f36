"""Diagonal-covariance Gaussian mixture used as the Fisher-vector vocabulary.

Mixture weights are stored through unconstrained logits ``alpha`` with
``w = softmax(alpha)``; ``sigma`` holds per-dimension standard deviations.
"""
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import formats

log = logging.getLogger(__name__)

MAGIC = b"NZRG"
VAR_FLOOR = 1e-4
LOG_2PI = np.log(2.0 * np.pi)
# rows per chunk when materialising (rows, K, D) differences
_CHUNK_ELEMS = 1 << 22


def mixture_weights(alpha):
    """Softmax of the weight logits, shifted by the max for stability."""
    a = np.asarray(alpha, dtype=np.float64)
    e = np.exp(a - a.max())
    return e / e.sum()


@dataclass(frozen=True)
class GmmModel:
    alpha: np.ndarray  # (K,)
    mu: np.ndarray     # (K, D)
    sigma: np.ndarray  # (K, D)
    trace: tuple = field(default=(), compare=False, repr=False)
    n_reseeds: int = field(default=0, compare=False)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1)
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.ndim != 2 or sigma.shape != mu.shape or alpha.shape[0] != mu.shape[0]:
            raise ValueError(
                f"inconsistent GMM shapes alpha={alpha.shape} mu={mu.shape} sigma={sigma.shape}"
            )
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def K(self):
        return self.mu.shape[0]

    @property
    def D(self):
        return self.mu.shape[1]

    @property
    def weights(self):
        return mixture_weights(self.alpha)

    def __eq__(self, other):
        if not isinstance(other, GmmModel):
            return NotImplemented
        return all(
            np.array_equal(a, b)
            for a, b in ((self.alpha, other.alpha), (self.mu, other.mu), (self.sigma, other.sigma))
        )


def _as_rows(m, x):
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != m.D:
        raise ValueError(f"dimension mismatch: got {X.shape[1]}, model has D={m.D}")
    return X, single


def _chunks(n, k, d):
    step = max(1, _CHUNK_ELEMS // max(1, k * d))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def log_weighted_densities(m, X):
    """``log w_j + log N(x; mu_j, diag sigma_j^2)`` as an ``(N, K)`` array."""
    X, _ = _as_rows(m, X)
    n = len(X)
    out = np.empty((n, m.K))
    log_w = np.log(m.weights)
    log_norm = -0.5 * m.D * LOG_2PI - np.log(m.sigma).sum(axis=1)
    for sl in _chunks(n, m.K, m.D):
        z = (X[sl, None, :] - m.mu[None]) / m.sigma[None]
        out[sl] = log_w + log_norm - 0.5 * np.einsum("nkd,nkd->nk", z, z)
    return out


def log_density(m, x):
    """``log P(x | model)``; scalar for one vector, ``(N,)`` for rows."""
    X, single = _as_rows(m, x)
    lp = logsumexp(log_weighted_densities(m, X), axis=1)
    return float(lp[0]) if single else lp


def responsibilities(m, x):
    """Posterior component probabilities; ``(K,)`` or ``(N, K)``."""
    X, single = _as_rows(m, x)
    lw = log_weighted_densities(m, X)
    lw -= lw.max(axis=1, keepdims=True)
    g = np.exp(lw)
    g /= g.sum(axis=1, keepdims=True)
    return g[0] if single else g


def kmeans_pp_seeds(X, k, rng):
    """k-means++ seeding; returns indices of the chosen rows."""
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1), out=d2)
    return np.array(chosen)


def fit_gmm(X, K, seed=0, max_iters=200, tol=1e-6, var_floor=VAR_FLOOR):
    """EM fit of a diagonal GMM.

    Means start at k-means++ seeds, variances at the pooled data variance and
    weights uniform. ``trace`` on the result records the mean log-likelihood
    of the parameters before each M-step and of the returned parameters.
    Iteration stops once the relative improvement drops below ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be (N, D)")
    n, d = X.shape
    if n < K:
        raise ValueError(f"need at least K={K} samples, got {n}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    rng = np.random.Generator(np.random.PCG64(seed))

    global_var = np.maximum(X.var(axis=0), var_floor)
    mu = X[kmeans_pp_seeds(X, K, rng)].copy()
    var = np.tile(global_var, (K, 1))
    w = np.full(K, 1.0 / K)
    trace = []
    reseeds = 0

    for it in range(max_iters + 1):
        m = GmmModel(np.log(w), mu, np.sqrt(var))
        lw = log_weighted_densities(m, X)
        lse = logsumexp(lw, axis=1)
        ll = float(lse.mean())
        trace.append(ll)
        if it > 0 and ll - trace[-2] < tol * abs(trace[-2]):
            break
        if it == max_iters:
            break

        gamma = np.exp(lw - lse[:, None])
        nk = gamma.sum(axis=0)
        empty = nk < 1e-10 * n
        if np.any(empty):
            # farthest point from every current mean
            dist = np.min(((X[:, None, :] - mu[None]) ** 2).sum(axis=2), axis=1)
            for j in np.flatnonzero(empty):
                far = int(np.argmax(dist))
                log.info("GMM component %d empty at iteration %d; reseeded at row %d", j, it, far)
                gamma[:, j] = 0.0
                gamma[far, j] = 1.0
                dist[far] = -1.0
                reseeds += 1
            nk = gamma.sum(axis=0)

        mu = (gamma.T @ X) / nk[:, None]
        var = np.empty((K, d))
        for j in range(K):
            diff = X - mu[j]
            var[j] = gamma[:, j] @ (diff * diff) / nk[j]
        np.maximum(var, var_floor, out=var)
        w = nk / nk.sum()

    return GmmModel(np.log(w), mu, np.sqrt(var), trace=tuple(trace), n_reseeds=reseeds)


# --------------------------------------------------------------------------
# NZRG files: magic, u16 version, u32 K, u32 D, f64 alpha, mu, sigma

def gmm_to_bytes(m):
    head = MAGIC + struct.pack("<HII", formats.FORMAT_VERSION, m.K, m.D)
    return head + b"".join(formats.le_bytes(a, np.float64) for a in (m.alpha, m.mu, m.sigma))


def gmm_from_bytes(data, what="GMM file"):
    r = formats.Reader(data, what)
    r.expect_magic(MAGIC)
    r.version()
    k, d = r.unpack("<II")
    kd = formats.check_count(k, d, what=what)
    alpha = r.array(np.float64, k)
    mu = r.array(np.float64, kd, (k, d))
    sigma = r.array(np.float64, kd, (k, d))
    r.finish()
    return GmmModel(alpha, mu, sigma)


def write_gmm(m, path):
    formats.write_file(path, gmm_to_bytes(m))


def read_gmm(path):
    return gmm_from_bytes(formats.read_file(path), what=str(path))
