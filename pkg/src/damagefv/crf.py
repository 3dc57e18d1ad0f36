"""Fully connected CRF with Potts compatibility and Gaussian pair kernels.

Pixels are indexed in raster order ``i = row * W + col``. Spatial kernels use
features ``(x, y)``; bilateral kernels append the pixel intensities. Each
kernel scales its features by per-dimension bandwidths ``theta``; an infinite
bandwidth makes that dimension irrelevant (``theta = inf`` everywhere gives a
constant kernel).
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from . import kernels

PROB_FLOOR = 1e-12
MAX_ENUMERATION = 2**20


@dataclass(frozen=True)
class Kernel:
    weight: float
    kind: str = "spatial"        # "spatial" or "bilateral"
    bandwidths: tuple = (3.0, 3.0)

    def __post_init__(self):
        if self.kind not in ("spatial", "bilateral"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError("kernel weight must be non-negative")
        if any(not b > 0 for b in self.bandwidths):
            raise ValueError("bandwidths must be positive")


def default_kernels(theta_pos=3.0, theta_int=0.1, weights=(1.0, 1.0), channels=1):
    """One smoothness (spatial) and one appearance (bilateral) kernel."""
    w_spatial, w_bilateral = weights
    return (
        Kernel(w_spatial, "spatial", (theta_pos, theta_pos)),
        Kernel(w_bilateral, "bilateral", (theta_pos, theta_pos) + (theta_int,) * channels),
    )


def pairwise_kernel(fi, fj, theta):
    """``exp(-1/2 sum_d ((fi_d - fj_d) / theta_d)^2)``."""
    fi, fj = np.asarray(fi, dtype=np.float64), np.asarray(fj, dtype=np.float64)
    if fi.shape != fj.shape:
        raise ValueError("feature dimension mismatch")
    z = (fi - fj) / np.broadcast_to(np.asarray(theta, dtype=np.float64), fi.shape)
    return math.exp(-0.5 * float(np.dot(z, z)))


@dataclass(frozen=True)
class DenseCrf:
    unary: np.ndarray               # (H, W, C) costs -log P
    kernels: tuple = ()
    image: np.ndarray = None        # (H, W) or (H, W, ch), needed by bilateral kernels
    _packed: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        u = np.asarray(self.unary, dtype=np.float64)
        if u.ndim != 3:
            raise ValueError("unary must be (H, W, C)")
        if not np.all(np.isfinite(u)):
            raise ValueError("unary costs must be finite")
        object.__setattr__(self, "unary", u)
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if any(k.kind == "bilateral" for k in self.kernels) and self.image is None:
            raise ValueError("bilateral kernel needs an image")

    @classmethod
    def from_probabilities(cls, probs, kernels=(), image=None):
        p = np.maximum(np.asarray(probs, dtype=np.float64), PROB_FLOOR)
        return cls(-np.log(p), kernels, image)

    @property
    def shape(self):
        return self.unary.shape[:2]

    @property
    def n_pixels(self):
        return self.shape[0] * self.shape[1]

    @property
    def n_labels(self):
        return self.unary.shape[2]

    def flat_unary(self):
        return self.unary.reshape(self.n_pixels, self.n_labels)

    def pixel_features(self, kind):
        h, w = self.shape
        rows, cols = np.mgrid[0:h, 0:w]
        pos = np.stack([cols.ravel(), rows.ravel()], axis=1).astype(np.float64)
        if kind == "spatial":
            return pos
        img = np.asarray(self.image, dtype=np.float64).reshape(h * w, -1)
        return np.hstack([pos, img])

    def packed(self):
        """Concatenated features, bandwidths, column offsets and weights."""
        if "feats" not in self._packed:
            feats, thetas, offsets = [], [], [0]
            for k in self.kernels:
                f = self.pixel_features(k.kind)
                if f.shape[1] != len(k.bandwidths):
                    raise ValueError(
                        f"{k.kind} kernel has {len(k.bandwidths)} bandwidths for "
                        f"{f.shape[1]} feature dimensions"
                    )
                feats.append(f)
                thetas.extend(k.bandwidths)
                offsets.append(offsets[-1] + f.shape[1])
            n = self.n_pixels
            self._packed.update(
                feats=np.ascontiguousarray(np.hstack(feats) if feats else np.zeros((n, 0))),
                thetas=np.asarray(thetas, dtype=np.float64),
                offsets=np.asarray(offsets, dtype=np.int64),
                weights=np.asarray([k.weight for k in self.kernels], dtype=np.float64),
            )
        p = self._packed
        return p["feats"], p["thetas"], p["offsets"], p["weights"]


def _check_labeling(crf, labeling):
    lab = np.asarray(labeling)
    if lab.shape != crf.shape:
        raise ValueError(f"labeling shape {lab.shape} does not match grid {crf.shape}")
    if lab.size and (lab.min() < 0 or lab.max() >= crf.n_labels):
        raise ValueError("label out of range")
    return np.ascontiguousarray(lab.reshape(-1), dtype=np.int64)


def unary_energy(crf, labeling):
    lab = _check_labeling(crf, labeling)
    u = crf.flat_unary()
    total = 0.0
    for i, c in enumerate(lab.tolist()):
        total += float(u[i, c])
    return total


def pairwise_energy(crf, labeling, backend=None):
    lab = _check_labeling(crf, labeling)
    if not crf.kernels:
        return 0.0
    return float(kernels.get(backend).potts_pairwise(*crf.packed(), lab))


def energy(crf, labeling, backend=None):
    """Exact energy: unary terms in raster order plus every pair ``i < j`` once.

    Pairs accumulate in raster order of ``i`` then ``j``; the result is
    ``unary_total + pairwise_total``.
    """
    return unary_energy(crf, labeling) + pairwise_energy(crf, labeling, backend)


def pair_weight_matrix(crf):
    """Dense ``(N, N)`` combined pair weights with a zero diagonal."""
    feats, thetas, offsets, weights = crf.packed()
    n = crf.n_pixels
    eye = np.eye(n)
    return kernels.get("python").pair_messages(feats, thetas, offsets, weights, eye)


def brute_force_map(crf):
    """Exact minimiser by enumerating every labeling.

    Ties go to the lexicographically smallest labeling in raster order.
    """
    n, c = crf.n_pixels, crf.n_labels
    if c**n > MAX_ENUMERATION:
        raise ValueError(f"{c}^{n} labelings exceed the enumeration limit {MAX_ENUMERATION}")
    u = crf.flat_unary()
    kmat = np.triu(pair_weight_matrix(crf), 1)
    ii, jj = np.nonzero(kmat)
    pair_w = kmat[ii, jj]
    radix = c ** np.arange(n - 1, -1, -1)

    total = c**n
    energies = np.empty(total)
    chunk = 1 << 16
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total))
        labs = (codes[:, None] // radix) % c
        e = u[np.arange(n), labs].sum(axis=1)
        if len(pair_w):
            e = e + ((labs[:, ii] != labs[:, jj]) * pair_w).sum(axis=1)
        energies[codes] = e
    lo = energies.min()
    near = np.flatnonzero(energies <= lo + 1e-9 * max(1.0, abs(lo)))
    best = (near[:, None] // radix) % c

    # re-rank the near-minimal candidates with the exact energy
    h, w = crf.shape
    exact = [(energy(crf, lab.reshape(h, w)), tuple(lab)) for lab in best]
    e_min, lab = min(exact)
    return np.asarray(lab, dtype=np.uint8).reshape(h, w), e_min


@dataclass
class MarginalField:
    q: np.ndarray        # (H, W, C)
    n_iters: int = 0
    converged: bool = False


def mean_field(crf, max_iters=10, tol=1e-4, backend=None):
    """Parallel mean-field updates under Potts compatibility.

    The expected Potts cost of label ``c`` at pixel ``i`` is
    ``sum_j k_ij (1 - Q_j(c))``; dropping the label-independent part leaves
    ``Q_i(c) ∝ exp(-g_i(c) + sum_j k_ij Q_j(c))``.
    """
    h, w = crf.shape
    u = crf.flat_unary()
    q = softmax(-u, axis=1)
    n_iters = 0
    converged = False
    impl = kernels.get(backend)
    packed = crf.packed() if crf.kernels else None
    threads = kernels.n_threads()
    for _ in range(max_iters):
        if packed is None:
            msg = 0.0
        else:
            msg = impl.pair_messages(*packed, np.ascontiguousarray(q), threads)
        q_new = softmax(-u + msg, axis=1)
        n_iters += 1
        change = float(np.abs(q_new - q).sum(axis=1).max()) if q.size else 0.0
        q = q_new
        if change < tol:
            converged = True
            break
    return MarginalField(q.reshape(h, w, -1), n_iters, converged)


def map_labeling(q):
    """Per-pixel argmax; ties go to the lowest class index."""
    arr = q.q if isinstance(q, MarginalField) else np.asarray(q)
    return np.argmax(arr, axis=-1).astype(np.uint8)


def smooth(probs, image, kernels=(), max_iters=10, tol=1e-4, backend=None):
    """Unary probabilities -> CRF MAP labeling via mean field."""
    crf = DenseCrf.from_probabilities(probs, kernels, image)
    return map_labeling(mean_field(crf, max_iters, tol, backend))

