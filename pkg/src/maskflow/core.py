"""Core raster geometry: binary masks, boxes, predictions, label maps, RLE.

Conventions shared by the whole package:

* a binary mask is a boolean numpy array of shape (H, W), row-major;
* boxes are half-open pixel intervals [x0, x1) x [y0, y1);
* categories are plain ints, >= 1 for objects, 0 is reserved for background;
* pixel coordinates are (x, y) with x = column and y = row.

Everything is treated as immutable after construction: stored arrays are
copied and marked read-only, so all operations here are pure and safe to
call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Iterator, Sequence

import numpy as np

# Provenance tags for prediction sets, naming the pipeline stage that
# produced them.
MODEL = "model"
EXPANDED = "expanded"
SEEDED = "seeded"
TRANSFERRED = "transferred"
COMBINED = "combined"
PROVENANCES = (MODEL, EXPANDED, SEEDED, TRANSFERRED, COMBINED)


def as_mask(arr) -> np.ndarray:
    """Validate ``arr`` as a binary mask and return it as a bool array."""
    m = np.asarray(arr)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"mask must be a nonempty 2-D array, got shape {m.shape}")
    if m.dtype != bool:
        vals = np.unique(m)
        if not np.isin(vals, (0, 1)).all():
            raise ValueError("mask values must be 0/1")
        m = m.astype(bool)
    return m


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


def mask_area(m) -> int:
    return int(np.count_nonzero(as_mask(m)))


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.shape} vs {b.shape}")


def mask_iou(a, b) -> float:
    """Intersection over union of two masks; 0.0 when both are empty."""
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return inter / union


def mask_iom(a, b) -> float:
    """Intersection over the smaller mask's area.

    Errors when both masks are empty; if exactly one is empty the overlap
    is necessarily zero and 0.0 is returned.
    """
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    area_a = int(np.count_nonzero(a))
    area_b = int(np.count_nonzero(b))
    if area_a == 0 and area_b == 0:
        raise ValueError("IoM is undefined for two empty masks")
    smaller = min(area_a, area_b)
    if smaller == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / smaller


@dataclass(frozen=True, order=True)
class BBox:
    """Half-open pixel box [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (0 <= self.x0 <= self.x1 and 0 <= self.y0 <= self.y1):
            raise ValueError(f"invalid box {(self.x0, self.y0, self.x1, self.y1)}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_list(self) -> list:
        return [self.x0, self.y0, self.x1, self.y1]


def box_iou(a: BBox, b: BBox) -> float:
    """Area IoU of two boxes; 0.0 for disjoint or degenerate boxes."""
    ix = max(0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    union = a.area + b.area - inter
    if union == 0:
        return 0.0
    return inter / union


def bbox_of_mask(m) -> BBox:
    """Tightest half-open box containing all set pixels. Errors when empty."""
    m = as_mask(m)
    ys, xs = np.nonzero(m)
    if ys.size == 0:
        raise ValueError("cannot take the bounding box of an empty mask")
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


@dataclass(frozen=True)
class Prediction:
    """One instance hypothesis: mask plus its tight box, category and score.

    The box is always the tight bounding box of the mask; it is computed on
    construction, and passing an inconsistent box raises.
    """

    mask: np.ndarray
    category: int
    score: float
    frame: int
    box: BBox = None

    def __post_init__(self):
        m = _frozen(as_mask(self.mask))
        object.__setattr__(self, "mask", m)
        if not m.any():
            raise ValueError("prediction mask is empty")
        if int(self.category) < 1:
            raise ValueError(f"prediction category must be >= 1, got {self.category}")
        object.__setattr__(self, "category", int(self.category))
        s = float(self.score)
        if not (0.0 <= s <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {s}")
        object.__setattr__(self, "score", s)
        object.__setattr__(self, "frame", int(self.frame))
        tight = bbox_of_mask(m)
        if self.box is None:
            object.__setattr__(self, "box", tight)
        elif self.box != tight:
            raise ValueError(f"box {self.box} is not the tight box {tight} of the mask")

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))

    def with_frame(self, frame: int) -> "Prediction":
        return Prediction(self.mask, self.category, self.score, frame)


def merge_predictions(a: Prediction, b: Prediction) -> Prediction:
    """Union of two same-category predictions on the same frame.

    The merged mask is the union, the box is recomputed tight, and the score
    is the max of the two (keeps the strongest evidence, stays in [0, 1]).
    """
    if a.category != b.category:
        raise ValueError(f"cannot merge categories {a.category} and {b.category}")
    if a.frame != b.frame:
        raise ValueError(f"cannot merge frames {a.frame} and {b.frame}")
    _check_same_shape(a.mask, b.mask)
    return Prediction(a.mask | b.mask, a.category, max(a.score, b.score), a.frame)


@dataclass(frozen=True)
class PredictionSet:
    """Ordered predictions for one frame, tagged with their pipeline stage."""

    frame: int
    width: int
    height: int
    predictions: tuple = ()
    provenance: str = MODEL

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("prediction set needs positive raster dimensions")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        preds = tuple(self.predictions)
        for p in preds:
            if p.frame != self.frame:
                raise ValueError(f"prediction frame {p.frame} != set frame {self.frame}")
            if p.mask.shape != (self.height, self.width):
                raise ValueError(
                    f"prediction raster {p.mask.shape} != set raster "
                    f"{(self.height, self.width)}"
                )
        object.__setattr__(self, "predictions", preds)

    def __len__(self) -> int:
        return len(self.predictions)

    def __iter__(self) -> Iterator[Prediction]:
        return iter(self.predictions)

    def __getitem__(self, i: int) -> Prediction:
        return self.predictions[i]

    def replace(self, predictions: Sequence[Prediction], provenance: str = None) -> "PredictionSet":
        return PredictionSet(
            self.frame,
            self.width,
            self.height,
            tuple(predictions),
            self.provenance if provenance is None else provenance,
        )


@dataclass(frozen=True)
class InstanceLabelMap:
    """Per-pixel instance ids (0 = background) plus an id -> category map.

    Instance ids are dense and start at 1; every nonzero id present in the
    raster has a category entry.
    """

    labels: np.ndarray
    categories: dict = field(default_factory=dict)

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or lab.shape[0] < 1 or lab.shape[1] < 1:
            raise ValueError(f"label map must be a nonempty 2-D array, got {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            raise ValueError("label map must be integer valued")
        if (lab < 0).any():
            raise ValueError("label ids must be >= 0")
        lab = _frozen(lab.astype(np.int32))
        object.__setattr__(self, "labels", lab)
        ids = np.unique(lab)
        ids = ids[ids > 0]
        expected = np.arange(1, ids.size + 1)
        if not np.array_equal(ids, expected):
            raise ValueError("instance ids must be dense starting at 1")
        cats = {int(k): int(v) for k, v in self.categories.items()}
        if set(cats) != set(int(i) for i in ids):
            raise ValueError("categories must cover exactly the nonzero instance ids")
        for i, c in cats.items():
            if c < 1:
                raise ValueError(f"instance {i} has background category {c}")
        object.__setattr__(self, "categories", cats)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def num_instances(self) -> int:
        return len(self.categories)

    def mask_of(self, instance_id: int) -> np.ndarray:
        if instance_id not in self.categories:
            raise KeyError(f"unknown instance id {instance_id}")
        return self.labels == instance_id


def predictions_from_labels(
    label_map: InstanceLabelMap,
    frame: int,
    scores: dict = None,
    provenance: str = SEEDED,
) -> PredictionSet:
    """Turn a label map into one prediction per instance, in id order."""
    preds = []
    for i in sorted(label_map.categories):
        score = 1.0 if scores is None else float(scores[i])
        preds.append(Prediction(label_map.mask_of(i), label_map.categories[i], score, frame))
    return PredictionSet(frame, label_map.width, label_map.height, tuple(preds), provenance)


def rle_encode(m) -> list:
    """Row-major run-length encoding, alternating zero/one run counts.

    The sequence always starts with the count of leading zeros (possibly 0)
    and omits any trailing empty run, so an all-zero H x W mask encodes to
    ``[H * W]`` and an all-one mask to ``[0, H * W]``.
    """
    m = as_mask(m)
    flat = m.ravel().astype(np.int8)
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: Sequence[int], width: int, height: int) -> np.ndarray:
    """Inverse of :func:`rle_encode`. Errors when runs do not sum to W*H."""
    if width < 1 or height < 1:
        raise ValueError("raster dimensions must be positive")
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs):
        raise ValueError("run lengths must be non-negative")
    total = sum(runs)
    if total != width * height:
        raise ValueError(f"runs sum to {total}, expected {width * height}")
    values = np.resize(np.array([0, 1], dtype=np.int8), len(runs))
    flat = np.repeat(values, runs)
    return flat.reshape(height, width).astype(bool)


def merge_all(preds: Sequence[Prediction]) -> Prediction:
    """Fold :func:`merge_predictions` over a nonempty prediction sequence."""
    if not preds:
        raise ValueError("nothing to merge")
    return reduce(merge_predictions, preds)
