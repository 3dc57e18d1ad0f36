"""Connected segments of a label map and their ground-truth assignment."""
import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import BACKGROUND, N_CLASSES

MIN_AREA = 25
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class SegmentRecord:
    id: int
    mask: np.ndarray            # (H, W) bool
    predicted_class: int
    gt_class: int = None
    unencodable: bool = False

    @property
    def area(self):
        return int(self.mask.sum())

    @property
    def top_left(self):
        rows, cols = np.nonzero(self.mask)
        first = np.lexsort((cols, rows))[0]
        return int(rows[first]), int(cols[first])

    @property
    def bbox(self):
        """``[x0, y0, x1, y1]`` inclusive pixel bounds."""
        rows, cols = np.nonzero(self.mask)
        return [int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max())]

    def to_json(self, image_id):
        return {
            "image_id": image_id,
            "segment_id": self.id,
            "class": int(self.predicted_class),
            "area": self.area,
            "bbox": self.bbox,
        }


def extract_segments(labels, min_area=MIN_AREA):
    """8-connected components of each non-background class.

    Components smaller than ``min_area`` are dropped; the rest are ordered by
    their first pixel in raster order.
    """
    labels = np.asarray(labels)
    found = []
    for cls in range(1, N_CLASSES):
        comp, n = ndimage.label(labels == cls, structure=EIGHT_CONNECTED)
        if n == 0:
            continue
        areas = np.bincount(comp.ravel(), minlength=n + 1)
        for k in range(1, n + 1):
            if areas[k] < min_area:
                continue
            mask = comp == k
            flat = np.flatnonzero(mask.ravel())[0]
            found.append((int(flat), cls, mask))
    found.sort(key=lambda t: t[0])
    return [SegmentRecord(i, mask, cls) for i, (_, cls, mask) in enumerate(found)]


def overlap_counts(seg, gt):
    return np.bincount(np.asarray(gt)[seg.mask].astype(np.int64), minlength=N_CLASSES)


def assign_gt_label(seg, gt):
    """Class with the largest pixel overlap; ties go to the more severe class."""
    counts = overlap_counts(seg, gt)
    return int(N_CLASSES - 1 - np.argmax(counts[::-1]))


def crop_segment(seg, ds):
    """Descriptors whose centre falls inside the segment (may be empty)."""
    return ds.within(seg.mask)


def segments_from_truth(gt, min_area=1):
    """Ground-truth regions as segments labelled with their own class."""
    segs = extract_segments(gt, min_area)
    for s in segs:
        s.gt_class = s.predicted_class
    return segs


def relabel(shape, segments):
    """Paint segments into a fresh label map using ``predicted_class``."""
    out = np.full(shape, BACKGROUND, dtype=np.uint8)
    for s in segments:
        out[s.mask] = s.predicted_class
    return out


def write_segment_dump(path, rows):
    """JSON lines of ``(image_id, SegmentRecord)`` pairs."""
    with open(path, "w") as fh:
        for image_id, seg in rows:
            fh.write(json.dumps(seg.to_json(image_id), sort_keys=True) + "\n")
