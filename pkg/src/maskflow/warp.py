"""Flow-based warping of masks and predictions between frames.

Warping is backward sampling (a gather): the output value at pixel q is the
bilinear sample of the input at q + D(q), where D is a per-pixel 2-vector
sampling field. Gathering is hole-free; samples landing outside the raster
read as 0 (background).

Because backward sampling reads the *source* frame from the *target* frame's
grid, the sampling field that warps frame t onto frame t2 must be the flow
measured from t2 to t. Sampling fields carry an explicit direction tag so a
wrong-way flow is rejected instead of silently producing garbage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Prediction, _frozen
from .seeding import as_flow

T_TO_T2 = "t_to_t2"
T2_TO_T = "t2_to_t"
_DIRECTIONS = (T_TO_T2, T2_TO_T)


@dataclass(frozen=True)
class SamplingField:
    """Backward-sampling displacements, optionally tagged with the warp
    direction they implement ("t_to_t2" warps frame-t content onto the
    frame-t2 grid)."""

    delta: np.ndarray
    direction: str = None

    def __post_init__(self):
        object.__setattr__(self, "delta", _frozen(as_flow(self.delta)))
        if self.direction is not None and self.direction not in _DIRECTIONS:
            raise ValueError(f"unknown warp direction {self.direction!r}")

    @property
    def height(self) -> int:
        return self.delta.shape[0]

    @property
    def width(self) -> int:
        return self.delta.shape[1]


def zero_field(width: int, height: int, direction: str = None) -> SamplingField:
    return SamplingField(np.zeros((height, width, 2)), direction)


def flow_to_sampling(flow, flow_direction: str, warp_direction: str) -> SamplingField:
    """Package a flow field as the sampling field for a warp.

    ``flow_direction`` states which way the given flow was measured; the
    warp needs the flow measured from its target frame back to its source
    frame, i.e. the opposite of ``warp_direction``. A flow measured the same
    way as the warp is rejected.
    """
    for d in (flow_direction, warp_direction):
        if d not in _DIRECTIONS:
            raise ValueError(f"unknown direction {d!r}")
    if flow_direction == warp_direction:
        raise ValueError(
            f"a {warp_direction} warp needs the flow measured the opposite way, "
            f"got {flow_direction} flow"
        )
    return SamplingField(flow, warp_direction)


def require_direction(field: SamplingField, expected: str) -> None:
    """Reject a direction-tagged field used for the wrong warp."""
    if field.direction is not None and field.direction != expected:
        raise ValueError(
            f"sampling field warps {field.direction}, but {expected} was requested"
        )


def bilinear_sample(values: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Bilinear samples of a (H, W) float image at real coordinates; any
    neighbor outside the raster contributes 0."""
    h, w = values.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros(sx.shape, dtype=np.float64)
    for ox, oy, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xs = x0 + ox
        ys = y0 + oy
        valid = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        picked = np.zeros(sx.shape, dtype=np.float64)
        picked[valid] = values[ys[valid], xs[valid]]
        out += wgt * picked
    return out


def warp_values(values, field: SamplingField) -> np.ndarray:
    """Warp a real-valued (H, W) image by backward sampling."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (field.height, field.width):
        raise ValueError(f"image raster {v.shape} != field raster "
                         f"{(field.height, field.width)}")
    ys, xs = np.mgrid[0 : field.height, 0 : field.width]
    return bilinear_sample(v, xs + field.delta[..., 0], ys + field.delta[..., 1])


def warp_mask(mask, field: SamplingField, threshold: float = 0.5) -> np.ndarray:
    """Warp a binary mask: bilinear on the {0, 1} image, then binarize at
    ``threshold`` with ties mapping to foreground."""
    from .core import as_mask

    m = as_mask(mask)
    return warp_values(m.astype(np.float64), field) >= float(threshold)


def warp_prediction(pred: Prediction, field: SamplingField, frame: int = None):
    """Warp a prediction's mask and recompute its box; category and score are
    copied. Returns None when the warped mask is empty (object left the
    raster). ``frame`` optionally restamps the output frame index."""
    m = warp_mask(pred.mask, field)
    if not m.any():
        return None
    return Prediction(m, pred.category, pred.score,
                      pred.frame if frame is None else frame)


def compose_sampling(early: SamplingField, late: SamplingField) -> SamplingField:
    """Chain two backward-sampling fields.

    ``early`` warps t0 -> t1 and ``late`` warps t1 -> t2; the result warps
    t0 -> t2: D(q) = late(q) + early(q + late(q)). The early field is read
    with clamped (edge-replicated) coordinates so constant-translation
    fields compose exactly.
    """
    if (early.height, early.width) != (late.height, late.width):
        raise ValueError("cannot compose sampling fields on different rasters")
    if early.direction != late.direction:
        raise ValueError("cannot compose sampling fields with different directions")
    h, w = late.height, late.width
    ys, xs = np.mgrid[0:h, 0:w]
    sx = np.clip(xs + late.delta[..., 0], 0.0, w - 1.0)
    sy = np.clip(ys + late.delta[..., 1], 0.0, h - 1.0)
    combined = late.delta.copy()
    combined[..., 0] += bilinear_sample(early.delta[..., 0], sx, sy)
    combined[..., 1] += bilinear_sample(early.delta[..., 1], sx, sy)
    return SamplingField(combined, late.direction)
