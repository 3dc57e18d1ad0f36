"""Dense local descriptors from a fixed filter bank, and their file format.

The bank replaces a pretrained CNN layer. Per pixel it computes intensity,
directional derivatives at 0/45/90/135 degrees and discrete Laplacians at two
scales; those maps are box-pooled over a square patch. Derivative and
Laplacian responses are written as sums of neighbour differences so they are
exactly zero on a constant image.
"""
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import formats
from .imaging import to_gray

MAGIC = b"NZRD"

COMPONENTS = (
    "mean", "centre_minus_mean",
    "grad_0", "grad_45", "grad_90", "grad_135",
    "absgrad_0", "absgrad_45", "absgrad_90", "absgrad_135",
    "lap_1", "lap_2", "abslap_1", "abslap_2",
    "local_std", "grad_mag",
)
DIM = len(COMPONENTS)
ZERO_MEAN_COMPONENTS = tuple(
    i for i, name in enumerate(COMPONENTS) if "grad" in name or "lap" in name
)


@dataclass(frozen=True)
class FilterBankParams:
    patch_size: int = 7
    stride: int = 2

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and positive, got {self.patch_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def dim(self):
        return DIM


@dataclass
class DescriptorSet:
    coords: np.ndarray   # (N, 2) uint32, columns x, y
    vectors: np.ndarray  # (N, D) float32

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be 2-D")
        self.coords = np.asarray(self.coords, dtype=np.uint32).reshape(-1, 2)
        if len(self.coords) != len(self.vectors):
            raise ValueError("coords and vectors disagree on N")

    def __len__(self):
        return len(self.vectors)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def select(self, keep):
        return DescriptorSet(self.coords[keep], self.vectors[keep])

    def within(self, mask):
        """Descriptors whose centre pixel lies inside a boolean ``(H, W)`` mask."""
        if len(self) == 0:
            return self.select(np.zeros(0, dtype=bool))
        x = self.coords[:, 0].astype(np.int64)
        y = self.coords[:, 1].astype(np.int64)
        h, w = mask.shape
        ok = (x < w) & (y < h)
        keep = np.zeros(len(self), dtype=bool)
        keep[ok] = mask[y[ok], x[ok]]
        return self.select(keep)

    def __eq__(self, other):
        if not isinstance(other, DescriptorSet):
            return NotImplemented
        return (
            self.vectors.shape == other.vectors.shape
            and np.array_equal(self.coords, other.coords)
            and self.vectors.tobytes() == other.vectors.tobytes()
        )


def _shift(a, dy, dx):
    """``a[y + dy, x + dx]`` with edge replication."""
    p = max(abs(dy), abs(dx))
    padded = np.pad(a, p, mode="edge")
    h, w = a.shape
    return padded[p + dy:p + dy + h, p + dx:p + dx + w]


def _laplacian(a, step):
    return (
        (_shift(a, -step, 0) - a) + (_shift(a, step, 0) - a)
        + (_shift(a, 0, -step) - a) + (_shift(a, 0, step) - a)
    )


def pixel_responses(gray):
    """Intensity, the four directional derivatives and the two Laplacians."""
    g = np.asarray(gray, dtype=np.float64)
    gx = (_shift(g, 0, 1) - _shift(g, 0, -1)) * 0.5
    gy = (_shift(g, 1, 0) - _shift(g, -1, 0)) * 0.5
    inv = 1.0 / (2.0 * np.sqrt(2.0))
    gd45 = (_shift(g, -1, 1) - _shift(g, 1, -1)) * inv
    gd135 = (_shift(g, -1, -1) - _shift(g, 1, 1)) * inv
    lap1 = _laplacian(g, 1)
    lap2 = _laplacian(ndimage.gaussian_filter(g, 1.0, mode="nearest"), 2)
    return g, (gx, gd45, gy, gd135), (lap1, lap2)


def pooled_maps(img, patch_size):
    """Per-pixel descriptor field ``(H, W, D)`` pooled over ``patch_size`` windows."""
    g, grads, laps = pixel_responses(to_gray(img))

    def pool(a):
        return ndimage.uniform_filter(a, size=patch_size, mode="nearest")

    mean = pool(g)
    sq = pool(g * g)
    out = [mean, g - mean]
    out += [pool(d) for d in grads]
    out += [pool(np.abs(d)) for d in grads]
    out += [pool(l) for l in laps]
    out += [pool(np.abs(l)) for l in laps]
    out.append(np.sqrt(np.maximum(sq - mean * mean, 0.0)))
    out.append(pool(np.hypot(grads[0], grads[2])))
    return np.stack(out, axis=-1)


def grid_centres(width, height, params):
    p, s = params.patch_size, params.stride
    nx = (width - p) // s + 1
    ny = (height - p) // s + 1
    xs = np.arange(nx) * s + p // 2
    ys = np.arange(ny) * s + p // 2
    return xs, ys


def dense_descriptors(img, params=FilterBankParams()):
    """One descriptor per stride-spaced patch that fits inside the image."""
    h, w = img.shape[:2]
    if w < params.patch_size or h < params.patch_size:
        raise ValueError(f"image {w}x{h} smaller than patch {params.patch_size}")
    field = pooled_maps(img, params.patch_size)
    xs, ys = grid_centres(w, h, params)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    coords = np.stack([xx.ravel(), yy.ravel()], axis=1)
    return DescriptorSet(coords, field[yy.ravel(), xx.ravel()])


def pixel_descriptors(img, patch_size=7):
    """Stride-1 descriptor at every pixel (edge replicated), ``(H, W, D)``."""
    return pooled_maps(img, patch_size)


# --------------------------------------------------------------------------
# NZRD files: magic, u16 version, u32 N, u32 D, N (x, y) u32 pairs, N*D f32

def descriptors_to_bytes(ds):
    n, d = ds.vectors.shape
    formats.check_count(n, d, what="descriptor payload")
    head = MAGIC + struct.pack("<HII", formats.FORMAT_VERSION, n, d)
    return head + formats.le_bytes(ds.coords, np.uint32) + formats.le_bytes(ds.vectors, np.float32)


def descriptors_from_bytes(data, what="descriptor file"):
    r = formats.Reader(data, what)
    r.expect_magic(MAGIC)
    r.version()
    n, d = r.unpack("<II")
    formats.check_count(n, d, what=what)
    coords = r.array(np.uint32, 2 * n, (n, 2))
    vectors = r.array(np.float32, n * d, (n, d))
    r.finish()
    return DescriptorSet(coords, vectors)


def write_descriptors(ds, path):
    formats.write_file(path, descriptors_to_bytes(ds))


def read_descriptors(path):
    return descriptors_from_bytes(formats.read_file(path), what=str(path))
