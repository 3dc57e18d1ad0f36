"""Image and annotation handling.

Images are numpy arrays of shape ``(H, W)`` or ``(H, W, 3)`` with values in
[0, 1]. Label maps are ``uint8`` arrays of shape ``(H, W)`` holding class
indices 0 (background), 1 (mild), 2 (medium) and 3 (severe).
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage

log = logging.getLogger(__name__)

BACKGROUND, MILD, MEDIUM, SEVERE = 0, 1, 2, 3
N_CLASSES = 4
CLASS_NAMES = ("background", "mild", "medium", "severe")
DAMAGE_LABELS = {"mild": MILD, "medium": MEDIUM, "severe": SEVERE}
SHORT_NAMES = ("B", "M", "Md", "S")


# --------------------------------------------------------------------------
# image files

def load_image(path):
    """Read an 8-bit binary PGM (P5) or PPM (P6) and scale to [0, 1]."""
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            raise ValueError(f"{path}: unsupported image mode {im.mode}")
        arr = np.asarray(im, dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def save_image(path, img):
    """Write ``img`` (values in [0, 1]) as P5 for grayscale, P6 for RGB."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ValueError(f"cannot save image of shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(q).save(path, format="PPM")


def load_labelmap(path):
    """Label maps are stored as raw class indices in a P5 file."""
    with PILImage.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"{path}: label map must be 8-bit grayscale")
        lm = np.array(im, dtype=np.uint8)
    if lm.max(initial=0) >= N_CLASSES:
        raise ValueError(f"{path}: label value out of range")
    return lm


def save_labelmap(path, labels):
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.min(initial=0) < 0 or labels.max(initial=0) >= N_CLASSES:
        raise ValueError("invalid label map")
    PILImage.fromarray(labels.astype(np.uint8)).save(path, format="PPM")


def to_gray(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img[:, :, :3] @ np.array([0.299, 0.587, 0.114])


# --------------------------------------------------------------------------
# annotations

@dataclass
class Polygon:
    label: int
    points: np.ndarray  # (V, 2) float, columns x, y

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)


@dataclass
class AnnotationSet:
    image_id: str
    width: int
    height: int
    annotators: list = field(default_factory=list)  # [(annotator_id, [Polygon])]

    def to_json(self):
        return {
            "image": self.image_id,
            "width": self.width,
            "height": self.height,
            "annotations": [
                {
                    "annotator": name,
                    "polygons": [
                        {"label": CLASS_NAMES[p.label], "points": p.points.tolist()}
                        for p in polys
                    ],
                }
                for name, polys in self.annotators
            ],
        }

    @classmethod
    def from_json(cls, doc):
        try:
            annotators = []
            for entry in doc["annotations"]:
                polys = []
                for p in entry["polygons"]:
                    if p["label"] not in DAMAGE_LABELS:
                        raise ValueError(f"unknown label {p['label']!r}")
                    polys.append(Polygon(DAMAGE_LABELS[p["label"]], p["points"]))
                annotators.append((str(entry["annotator"]), polys))
            return cls(str(doc["image"]), int(doc["width"]), int(doc["height"]), annotators)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed annotation document: {exc!r}") from exc


def load_annotations(path):
    with open(path) as fh:
        return AnnotationSet.from_json(json.load(fh))


def save_annotations(path, ann):
    with open(path, "w") as fh:
        json.dump(ann.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# rasterisation

def _distinct_vertices(points):
    return len({(float(x), float(y)) for x, y in points})


def fill_polygon(points, width, height):
    """Even-odd scanline fill sampled at pixel centres ``(col + .5, row + .5)``.

    A pixel is inside when a ray from its centre towards +x crosses the
    boundary an odd number of times. Edges use the half-open rule
    ``(y0 > yc) != (y1 > yc)`` so shared vertices are counted once.
    """
    pts = np.asarray(points, dtype=np.float64)
    mask = np.zeros((height, width), dtype=bool)
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    xc = np.arange(width) + 0.5
    lo = max(int(np.floor(pts[:, 1].min() - 0.5)), 0)
    hi = min(int(np.ceil(pts[:, 1].max() + 0.5)), height)
    for row in range(lo, hi):
        yc = row + 0.5
        straddle = (y0 > yc) != (y1 > yc)
        if not straddle.any():
            continue
        xa, ya, xb, yb = x0[straddle], y0[straddle], x1[straddle], y1[straddle]
        xint = np.sort(xa + (yc - ya) * (xb - xa) / (yb - ya))
        # crossings strictly to the right of each centre
        right = len(xint) - np.searchsorted(xint, xc, side="right")
        mask[row] = (right % 2) == 1
    return mask


def rasterize_polygons(polygons, width, height):
    """Paint polygons into one label map; more severe classes win overlaps.

    Returns ``(labels, n_skipped)`` where ``n_skipped`` counts polygons with
    fewer than three distinct vertices.
    """
    labels = np.zeros((height, width), dtype=np.uint8)
    skipped = 0
    for poly in polygons:
        if _distinct_vertices(poly.points) < 3:
            skipped += 1
            continue
        inside = fill_polygon(poly.points, width, height)
        np.maximum(labels, np.where(inside, np.uint8(poly.label), np.uint8(0)), out=labels)
    return labels, skipped


def rasterize_annotations(ann, width, height):
    """One label map per annotator."""
    maps = []
    skipped = 0
    for _, polys in ann.annotators:
        lm, n = rasterize_polygons(polys, width, height)
        maps.append(lm)
        skipped += n
    if skipped:
        log.warning("%s: skipped %d degenerate polygon(s)", ann.image_id, skipped)
    return maps


def majority_vote(maps):
    """Per-pixel mode across annotators, ties resolved toward severity."""
    if len(maps) == 0:
        raise ValueError("majority_vote needs at least one label map")
    shape = maps[0].shape
    for m in maps:
        if m.shape != shape:
            raise ValueError(f"label map shape mismatch: {m.shape} vs {shape}")
    stack = np.stack(maps)
    counts = np.stack([(stack == c).sum(axis=0) for c in range(N_CLASSES)])
    # argmax picks the first maximum, so scan classes from most severe down
    winner = N_CLASSES - 1 - np.argmax(counts[::-1], axis=0)
    return winner.astype(np.uint8)


def merge_annotations(ann, width=None, height=None):
    width = ann.width if width is None else width
    height = ann.height if height is None else height
    maps = rasterize_annotations(ann, width, height)
    if not maps:
        return np.zeros((height, width), dtype=np.uint8)
    return majority_vote(maps)


# --------------------------------------------------------------------------
# datasets

@dataclass
class Sample:
    image_id: str
    image: np.ndarray
    labels: np.ndarray


def filter_empty(samples):
    """Keep samples whose merged label map has a non-background pixel."""
    return [s for s in samples if np.any(s.labels != BACKGROUND)]


@dataclass(frozen=True)
class FoldAssignment:
    n_items: int
    k: int
    assignment: tuple

    def test_indices(self, fold):
        return [i for i, f in enumerate(self.assignment) if f == fold]

    def train_indices(self, fold):
        return [i for i, f in enumerate(self.assignment) if f != fold]

    def sizes(self):
        return [self.assignment.count(f) for f in range(self.k)]


def make_folds(n, k, seed=0):
    """Shuffle ``range(n)`` with a seeded PCG64 stream and deal round-robin."""
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    if n < k:
        raise ValueError(f"cannot split {n} items into {k} folds")
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % k
    return FoldAssignment(n, k, tuple(int(a) for a in assignment))
