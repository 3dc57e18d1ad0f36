"""Numpy implementations of the dense-CRF kernels (same contract as ``_ckernels``)."""
import math

import numpy as np

# pair-weight rows materialised per block
_BLOCK_ELEMS = 1 << 21


def _pair_weights(feats, thetas, offsets, weights, rows):
    k = np.zeros((rows.stop - rows.start, feats.shape[0]))
    for m in range(len(weights)):
        cols = slice(offsets[m], offsets[m + 1])
        z = (feats[rows, None, cols] - feats[None, :, cols]) / thetas[cols]
        k += weights[m] * np.exp(-0.5 * np.einsum("ijd,ijd->ij", z, z))
    return k


def _blocks(n, width):
    step = max(1, _BLOCK_ELEMS // max(1, n * width))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def pair_messages(feats, thetas, offsets, weights, q, n_threads=1):
    n = feats.shape[0]
    out = np.empty((n, q.shape[1]))
    for rows in _blocks(n, feats.shape[1]):
        k = _pair_weights(feats, thetas, offsets, weights, rows)
        k[np.arange(k.shape[0]), np.arange(rows.start, rows.stop)] = 0.0
        out[rows] = k @ q
    return out


def _exact_pair_weights(feats, thetas, offsets, weights, i, j):
    # scalar libm exp and left-to-right sums, matching the compiled kernel bit for bit
    acc = np.zeros(len(i))
    for m in range(len(weights)):
        s = np.zeros(len(i))
        for d in range(offsets[m], offsets[m + 1]):
            t = (feats[i, d] - feats[j, d]) / thetas[d]
            s = s + t * t
        e = np.fromiter(map(math.exp, (-0.5 * s).tolist()), float, len(i))
        acc = acc + weights[m] * e
    return acc


def potts_pairwise(feats, thetas, offsets, weights, labels):
    n = feats.shape[0]
    total = 0.0
    step = max(1, _BLOCK_ELEMS // max(1, n))
    for start in range(0, n, step):
        rows = np.arange(start, min(n, start + step))
        i, j = np.nonzero(np.arange(n)[None, :] > rows[:, None])
        i = rows[i]
        keep = labels[i] != labels[j]
        k = _exact_pair_weights(feats, thetas, offsets, weights, i[keep], j[keep])
        total = float(np.add.accumulate(np.concatenate([[total], k]))[-1])
    return total
