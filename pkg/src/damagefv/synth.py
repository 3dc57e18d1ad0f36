"""Deterministic synthetic scenes with textured structures and noisy annotations.

Structures are rotated rectangles over a dim background. Damage severity is
carried by texture: mild is a regular grid, medium the same grid with random
cell dropout, severe a high-variance speckle. Annotators see the true
polygons with vertex jitter and a label confusion matrix.
"""
import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .imaging import (
    AnnotationSet, MEDIUM, MILD, Polygon, SEVERE, fill_polygon, rasterize_polygons,
    save_annotations, save_image, save_labelmap,
)

BACKGROUNDS = ("gradient", "speckle", "stripes")
DEFAULT_CONFUSION = (
    (0.92, 0.06, 0.02),
    (0.04, 0.76, 0.20),
    (0.02, 0.18, 0.80),
)
IDENTITY = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    width: int = 48
    height: int = 48
    background: str = "mixed"          # one of BACKGROUNDS or "mixed"
    n_structures: tuple = (1, 3)
    size_range: tuple = (9, 15)
    max_rotation: float = 0.5          # radians
    class_freqs: tuple = (0.54, 0.22, 0.24)
    n_annotators: int = 3
    jitter: float = 1.0                # max vertex displacement, pixels
    confusion: tuple = DEFAULT_CONFUSION
    margin: int = 2
    max_tries: int = 1000

    def __post_init__(self):
        if self.background not in BACKGROUNDS + ("mixed",):
            raise ValueError(f"unknown background {self.background!r}")
        conf = np.asarray(self.confusion, dtype=np.float64)
        if conf.shape != (3, 3) or np.any(conf < 0) or not np.allclose(conf.sum(axis=1), 1):
            raise ValueError("confusion must be a 3x3 row-stochastic matrix")
        if not np.isclose(sum(self.class_freqs), 1.0):
            raise ValueError("class_freqs must sum to 1")

    def noise_free(self):
        return replace(self, jitter=0.0, confusion=IDENTITY)


@dataclass
class Scene:
    image_id: str
    image: np.ndarray
    annotations: AnnotationSet
    truth: np.ndarray
    polygons: list = field(default_factory=list)


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _rect(cx, cy, w, h, angle):
    c, s = np.cos(angle), np.sin(angle)
    corners = np.array([[-w, -h], [w, -h], [w, h], [-w, h]]) / 2.0
    rot = corners @ np.array([[c, s], [-s, c]])
    return rot + [cx, cy]


def _background(kind, h, w, rng):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if kind == "gradient":
        a = rng.uniform(0, 2 * np.pi)
        t = (np.cos(a) * xx / w + np.sin(a) * yy / h)
        return 0.22 + 0.08 * t
    if kind == "speckle":
        return 0.22 + 0.025 * rng.standard_normal((h, w))
    period = rng.uniform(10, 16)
    return 0.22 + 0.04 * np.sin(2 * np.pi * yy / period)


def texture(cls, h, w, rng, origin=(0, 0)):
    """Texture field for a damage class over an ``h x w`` canvas."""
    yy, xx = np.mgrid[0:h, 0:w]
    oy, ox = origin
    grid = ((xx - ox) % 4 == 0) | ((yy - oy) % 4 == 0)
    if cls == MILD:
        return 0.66 - 0.12 * grid
    if cls == MEDIUM:
        base = 0.66 - 0.12 * grid
        cells = rng.random(((h + 3) // 4 + 1, (w + 3) // 4 + 1)) < 0.35
        drop = cells[(yy - oy) // 4 % cells.shape[0], (xx - ox) // 4 % cells.shape[1]]
        return np.where(drop, 0.32, base)
    if cls == SEVERE:
        return 0.56 + rng.uniform(-0.4, 0.4, size=(h, w))
    raise ValueError(f"no texture for class {cls}")


def _render(truth, background, rng):
    h, w = truth.shape
    img = background.copy()
    for cls in (MILD, MEDIUM, SEVERE):
        sel = truth == cls
        if sel.any():
            origin = tuple(int(v) for v in rng.integers(0, 4, size=2))
            img[sel] = texture(cls, h, w, rng, origin)[sel]
    img += 0.01 * rng.standard_normal((h, w))
    return np.clip(img, 0.0, 1.0)


def _place(spec, n, rng):
    occupied = np.zeros((spec.height, spec.width), dtype=bool)
    placed = []
    tries = 0
    while len(placed) < n:
        tries += 1
        if tries > spec.max_tries:
            raise PlacementError(f"could not place {n} structures in {spec.max_tries} tries")
        sw, sh = rng.uniform(*spec.size_range, size=2)
        angle = rng.uniform(-spec.max_rotation, spec.max_rotation)
        r = 0.5 * np.hypot(sw, sh) + 1
        if r * 2 >= min(spec.width, spec.height):
            continue
        cx = rng.uniform(r, spec.width - r)
        cy = rng.uniform(r, spec.height - r)
        pts = _rect(cx, cy, sw, sh, angle)
        inside = fill_polygon(pts, spec.width, spec.height)
        if not inside.any():
            continue
        grown = inside.copy()
        for _ in range(spec.margin):
            grown[1:] |= grown[:-1].copy()
            grown[:-1] |= grown[1:].copy()
            grown[:, 1:] |= grown[:, :-1].copy()
            grown[:, :-1] |= grown[:, 1:].copy()
        if (grown & occupied).any():
            continue
        occupied |= inside
        placed.append(pts)
    return placed


def generate_scene(spec, seed, image_id="scene", empty=False):
    """Return a :class:`Scene` (image, annotator polygons, exact truth map)."""
    rng = _rng(seed)
    n = 0 if empty else int(rng.integers(spec.n_structures[0], spec.n_structures[1] + 1))
    shapes = _place(spec, n, rng)
    classes = rng.choice([MILD, MEDIUM, SEVERE], size=n, p=spec.class_freqs)
    true_polys = [Polygon(int(c), pts) for c, pts in zip(classes, shapes)]
    truth, _ = rasterize_polygons(true_polys, spec.width, spec.height)

    kind = spec.background
    if kind == "mixed":
        kind = BACKGROUNDS[int(rng.integers(len(BACKGROUNDS)))]
    image = _render(truth, _background(kind, spec.height, spec.width, rng), rng)

    conf = np.asarray(spec.confusion)
    annotators = []
    for a in range(spec.n_annotators):
        polys = []
        for p in true_polys:
            pts = p.points
            if spec.jitter > 0:
                pts = pts + rng.uniform(-spec.jitter, spec.jitter, size=pts.shape)
            label = int(rng.choice([MILD, MEDIUM, SEVERE], p=conf[p.label - 1]))
            polys.append(Polygon(label, pts))
        annotators.append((f"annotator{a}", polys))
    ann = AnnotationSet(image_id, spec.width, spec.height, annotators)
    return Scene(image_id, image, ann, truth, true_polys)


def scene_seeds(n, seed):
    return np.random.SeedSequence(seed).spawn(n)


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def generate_corpus(n, spec, seed, out_dir, empty_frac=0.0):
    """Write ``n`` scenes plus ``manifest.json`` under ``out_dir``.

    ``round(n * empty_frac)`` scenes, chosen by the seed, contain no
    structures. Returns the manifest path.
    """
    if n < 1:
        raise ValueError("need at least one scene")
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("images", "annotations", "truth"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    seeds = scene_seeds(n + 1, seed)
    n_empty = int(round(n * empty_frac))
    empties = set(_rng(seeds[-1]).permutation(n)[:n_empty].tolist())
    manifest = []
    for i in range(n):
        sid = f"scene_{i:04d}"
        scene = generate_scene(spec, seeds[i], sid, empty=i in empties)
        entry = {
            "image": f"images/{sid}.pgm",
            "annotations": f"annotations/{sid}.json",
            "truth": f"truth/{sid}.pgm",
        }
        try:
            save_image(os.path.join(out_dir, entry["image"]), scene.image)
            save_annotations(os.path.join(out_dir, entry["annotations"]), scene.annotations)
            save_labelmap(os.path.join(out_dir, entry["truth"]), scene.truth)
        except OSError as exc:
            raise OSError(f"writing {sid}: {exc}") from exc
        manifest.append(entry)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def corpus_digest(out_dir):
    """sha256 over the manifest and every file it lists."""
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    h = hashlib.sha256()
    h.update(open(os.path.join(out_dir, "manifest.json"), "rb").read())
    for entry in manifest:
        for key in sorted(entry):
            h.update(_sha256(os.path.join(out_dir, entry[key])).encode())
    return h.hexdigest()


# --------------------------------------------------------------------------
# two-texture corpus: one known region per scene, texture A or B

def two_texture_scene(kind, seed, size=40, region=24):
    """Scene with one square region of texture ``kind`` (0 or 1).

    Both textures share mean and grid layout: kind 0 is a clean grid, kind 1
    the same grid with light cell dropout.
    """
    rng = _rng(seed)
    img = _background("speckle", size, size, rng)
    off = int(rng.integers(2, size - region - 1))
    mask = np.zeros((size, size), dtype=bool)
    mask[off:off + region, off:off + region] = True
    origin = tuple(int(v) for v in rng.integers(0, 4, size=2))
    yy, xx = np.mgrid[0:size, 0:size]
    grid = ((xx - origin[1]) % 4 == 0) | ((yy - origin[0]) % 4 == 0)
    tex = 0.66 - 0.12 * grid
    if kind == 1:
        cells = rng.random((size // 4 + 2, size // 4 + 2)) < 0.12
        drop = cells[(yy - origin[0]) // 4 + 1, (xx - origin[1]) // 4 + 1]
        tex = np.where(drop, 0.5, tex)
    img[mask] = tex[mask]
    img += 0.01 * rng.standard_normal(img.shape)
    return np.clip(img, 0, 1), mask


def two_texture_corpus(n, seed, size=40, region=24):
    """``n`` scenes alternating kinds; returns ``[(image, mask, kind)]``."""
    seeds = scene_seeds(n, seed)
    return [(*two_texture_scene(i % 2, s, size, region), i % 2) for i, s in enumerate(seeds)]
