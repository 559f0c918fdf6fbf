"""Flow-aware seed generation and pixel-affinity machinery.

This module provides the numerical kernels used to build instance seeds
from per-category score maps and optical flow:

* score-map amplification at fast-moving pixels,
* pixel-pair affinity from a boundary likelihood map,
* spatial flow Jacobians and the boundary-affinity loss built on them,
* random-walk score smoothing,
* grouping of foreground pixels by their displacement-field attractor.

Flow fields are (H, W, 2) float arrays with [..., 0] the x displacement and
[..., 1] the y displacement, in pixels. Boundary maps are (H, W) floats in
[0, 1]. All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage, sparse

from .core import InstanceLabelMap, _frozen

# 8-connectivity for connected components: diagonal contact joins a seed blob.
_CC_STRUCTURE = np.ones((3, 3), dtype=bool)


def as_flow(arr) -> np.ndarray:
    """Validate a per-pixel 2-vector field of shape (H, W, 2)."""
    f = np.asarray(arr, dtype=np.float64)
    if f.ndim != 3 or f.shape[2] != 2 or f.shape[0] < 1 or f.shape[1] < 1:
        raise ValueError(f"flow field must have shape (H, W, 2), got {f.shape}")
    if not np.isfinite(f).all():
        raise ValueError("flow field contains non-finite values")
    return f


def as_boundary(arr) -> np.ndarray:
    """Validate a boundary likelihood map, clamping values into [0, 1]."""
    b = np.asarray(arr, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
        raise ValueError(f"boundary map must be a nonempty 2-D array, got {b.shape}")
    if not np.isfinite(b).all():
        raise ValueError("boundary map contains non-finite values")
    return np.clip(b, 0.0, 1.0)


@dataclass(frozen=True)
class ScoreMapStack:
    """Per-category score maps over one raster, stored as (C, H, W) floats."""

    categories: tuple
    scores: np.ndarray

    def __post_init__(self):
        cats = tuple(int(c) for c in self.categories)
        if len(set(cats)) != len(cats):
            raise ValueError("duplicate categories in score stack")
        if any(c < 1 for c in cats):
            raise ValueError("score-map categories must be >= 1")
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 3 or s.shape[0] != len(cats):
            raise ValueError(
                f"scores must have shape (C, H, W) with C = {len(cats)}, got {s.shape}"
            )
        if len(cats) and (s.shape[1] < 1 or s.shape[2] < 1):
            raise ValueError("score maps need a nonempty raster")
        if not np.isfinite(s).all():
            raise ValueError("score maps contain non-finite values")
        if (s < 0).any():
            raise ValueError("score maps must be non-negative")
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "scores", _frozen(s))

    @property
    def height(self) -> int:
        return self.scores.shape[1]

    @property
    def width(self) -> int:
        return self.scores.shape[2]


@dataclass(frozen=True)
class AmplifyConfig:
    """Gain applied to scores at fast pixels; the speed cutoff is the given
    percentile of the per-pixel flow magnitude."""

    gain: float = 2.0
    percentile: float = 0.8

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError(f"gain must be > 0, got {self.gain}")
        if not (0.0 < self.percentile < 1.0):
            raise ValueError(f"percentile must be in (0, 1), got {self.percentile}")


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Pixel pairs (i, j) with 0 < euclidean distance <= radius."""

    radius: int = 5

    def __post_init__(self):
        if int(self.radius) < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        object.__setattr__(self, "radius", int(self.radius))

    def offsets(self) -> List[Tuple[int, int]]:
        """All (dx, dy) neighbor offsets, sorted by (dy, dx)."""
        r = self.radius
        out = []
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                if 0 < dx * dx + dy * dy <= r * r:
                    out.append((dx, dy))
        return out

    def forward_offsets(self) -> List[Tuple[int, int]]:
        """Offsets that lead to a strictly later pixel in (y, x) order, so each
        unordered pair is enumerated exactly once."""
        return [(dx, dy) for dx, dy in self.offsets() if dy > 0 or (dy == 0 and dx > 0)]


def normalize_scores(stack: ScoreMapStack) -> ScoreMapStack:
    """Divide each category map by its own maximum; all-zero maps stay zero."""
    s = stack.scores.copy()
    for c in range(s.shape[0]):
        m = s[c].max()
        if m > 0:
            s[c] /= m
    return ScoreMapStack(stack.categories, s)


def cam_seeds(cams: ScoreMapStack, fg_threshold: float) -> InstanceLabelMap:
    """Semantic seeds from per-category scores.

    Each pixel takes the argmax category when its best score exceeds
    ``fg_threshold``, else background. Connected components (8-connected) of
    each category become one pseudo-instance each so downstream consumers get
    per-instance pixel sets. Scores are expected to be normalized to [0, 1]
    per category by the caller.
    """
    if len(cams.categories) == 0:
        raise ValueError("cam_seeds needs at least one category map")
    best = cams.scores.argmax(axis=0)
    best_score = cams.scores.max(axis=0)
    fg = best_score > float(fg_threshold)

    labels = np.zeros(fg.shape, dtype=np.int32)
    categories: Dict[int, int] = {}
    next_id = 1
    for ci, cat in enumerate(cams.categories):
        comp, n = ndimage.label(fg & (best == ci), structure=_CC_STRUCTURE)
        for k in range(1, n + 1):
            labels[comp == k] = next_id
            categories[next_id] = cat
            next_id += 1
    return InstanceLabelMap(labels, categories)


def flow_magnitude_percentile(flow, p: float) -> float:
    """Nearest-rank percentile of the per-pixel L2 flow magnitude."""
    f = as_flow(flow)
    if not (0.0 < p < 1.0):
        raise ValueError(f"percentile must be in (0, 1), got {p}")
    mags = np.sort(np.hypot(f[..., 0], f[..., 1]).ravel())
    if mags.size == 0:
        raise ValueError("cannot take a percentile of an empty field")
    rank = int(np.ceil(p * mags.size))
    return float(mags[max(rank, 1) - 1])


def amplify_cam(cams: ScoreMapStack, flow, cfg: AmplifyConfig) -> ScoreMapStack:
    """Multiply scores by ``cfg.gain`` wherever the flow magnitude exceeds the
    configured percentile cutoff.

    The same per-pixel factor applies to every category, so the per-pixel
    category ordering (and argmax) is unchanged.
    """
    f = as_flow(flow)
    if f.shape[:2] != (cams.height, cams.width):
        raise ValueError(
            f"flow raster {f.shape[:2]} != score raster {(cams.height, cams.width)}"
        )
    cutoff = flow_magnitude_percentile(f, cfg.percentile)
    fast = np.hypot(f[..., 0], f[..., 1]) > cutoff
    factor = np.where(fast, float(cfg.gain), 1.0)
    return ScoreMapStack(cams.categories, cams.scores * factor[None, :, :])


def bresenham_points(p: Tuple[int, int], q: Tuple[int, int]) -> List[Tuple[int, int]]:
    """Integer segment rasterization from p to q, endpoints included.

    Classic error-accumulation walk; the tie rule is pinned (e2 >= dy steps x,
    e2 <= dx steps y) so every caller sees the same pixel set.
    """
    x0, y0 = int(p[0]), int(p[1])
    x1, y1 = int(q[0]), int(q[1])
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    pts = []
    while True:
        pts.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return pts
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _canonical_pair(i: Tuple[int, int], j: Tuple[int, int]):
    # Order endpoints by (y, x) so the rasterized segment, and therefore the
    # affinity, is symmetric in (i, j).
    if (i[1], i[0]) <= (j[1], j[0]):
        return i, j
    return j, i


def line_affinity(i: Tuple[int, int], j: Tuple[int, int], boundary) -> float:
    """Affinity of a pixel pair: 1 minus the max boundary likelihood along the
    rasterized segment between them (endpoints included)."""
    b = as_boundary(boundary)
    h, w = b.shape
    for px, py in (i, j):
        if not (0 <= int(px) < w and 0 <= int(py) < h):
            raise ValueError(f"pixel {(px, py)} outside {w}x{h} raster")
    a, c = _canonical_pair((int(i[0]), int(i[1])), (int(j[0]), int(j[1])))
    peak = max(b[y, x] for x, y in bresenham_points(a, c))
    return float(1.0 - peak)


def flow_jacobian(flow) -> np.ndarray:
    """Spatial gradient of a flow field as a per-pixel 2x2 matrix.

    Returns shape (H, W, 2, 2) laid out [[du/dx, du/dy], [dv/dx, dv/dy]].
    Central differences in the interior, one-sided at the borders, so linear
    fields get exact derivatives everywhere.
    """
    f = as_flow(flow)
    h, w = f.shape[:2]
    if h < 3 or w < 3:
        raise ValueError(f"flow raster must be at least 3x3, got {w}x{h}")
    du_dy, du_dx = np.gradient(f[..., 0])
    dv_dy, dv_dx = np.gradient(f[..., 1])
    jac = np.empty((h, w, 2, 2), dtype=np.float64)
    jac[..., 0, 0] = du_dx
    jac[..., 0, 1] = du_dy
    jac[..., 1, 0] = dv_dx
    jac[..., 1, 1] = dv_dy
    return jac


def _offset_pattern(dx: int, dy: int) -> List[Tuple[int, int]]:
    # Relative segment pixels for a forward offset; (0, 0) is the canonical
    # start because forward offsets are later in (y, x) order.
    return bresenham_points((0, 0), (dx, dy))


def _offset_affinity(boundary: np.ndarray, dx: int, dy: int):
    """Affinity, for every base pixel, of the pair (base, base + (dx, dy)).

    Returns (alpha, x_lo, y_lo) where alpha[r, c] is the affinity of the base
    pixel (x_lo + c, y_lo + r). Only base pixels whose partner is inside the
    raster are covered.
    """
    h, w = boundary.shape
    pattern = _offset_pattern(dx, dy)
    pxs = [p[0] for p in pattern]
    pys = [p[1] for p in pattern]
    x_lo, x_hi = max(0, -min(pxs)), w - max(pxs)
    y_lo, y_hi = max(0, -min(pys)), h - max(pys)
    if x_hi <= x_lo or y_hi <= y_lo:
        return np.zeros((0, 0)), x_lo, y_lo
    peak = None
    for px, py in pattern:
        window = boundary[y_lo + py : y_hi + py, x_lo + px : x_hi + px]
        peak = window.copy() if peak is None else np.maximum(peak, window)
    return 1.0 - peak, x_lo, y_lo


def _pair_norm(diff: np.ndarray, norm: str) -> np.ndarray:
    if norm == "frobenius":
        return np.sqrt((diff * diff).sum(axis=(-2, -1)))
    if norm == "diagonal":
        return np.hypot(diff[..., 0, 0], diff[..., 1, 1])
    raise ValueError(f"unknown jacobian norm {norm!r}")


def flow_boundary_loss(
    jacobian,
    boundary,
    nbhd: NeighborhoodSpec = NeighborhoodSpec(),
    reg_weight: float = 2.0,
    norm: str = "frobenius",
):
    """Boundary-affinity consistency loss over all neighbor pixel pairs.

    Each unordered pair (i, j) with j in the neighborhood of i contributes

        ||J(i) - J(j)|| * alpha_ij + reg_weight * |1 - alpha_ij|

    where J is the flow Jacobian, alpha is :func:`line_affinity`, and the
    norm is Frobenius over the 2x2 matrix difference ("diagonal" compares
    only du/dx and dv/dy, for sensitivity studies). Pairs are enumerated once
    each, in (y, x)-lexicographic block order per offset, and the total is
    reduced in that fixed order so results are reproducible bit for bit.

    Returns ``(total, per_pair)`` where per_pair maps ((xi, yi), (xj, yj))
    to that pair's contribution.
    """
    jac = np.asarray(jacobian, dtype=np.float64)
    if jac.ndim != 4 or jac.shape[2:] != (2, 2):
        raise ValueError(f"jacobian must have shape (H, W, 2, 2), got {jac.shape}")
    b = as_boundary(boundary)
    if jac.shape[:2] != b.shape:
        raise ValueError(f"jacobian raster {jac.shape[:2]} != boundary raster {b.shape}")
    if reg_weight < 0:
        raise ValueError(f"reg_weight must be >= 0, got {reg_weight}")

    total = 0.0
    per_pair: Dict[tuple, float] = {}
    for dx, dy in nbhd.forward_offsets():
        alpha, x_lo, y_lo = _offset_affinity(b, dx, dy)
        if alpha.size == 0:
            continue
        rows, cols = alpha.shape
        base = jac[y_lo : y_lo + rows, x_lo : x_lo + cols]
        other = jac[y_lo + dy : y_lo + dy + rows, x_lo + dx : x_lo + dx + cols]
        smooth = _pair_norm(base - other, norm)
        contrib = smooth * alpha + reg_weight * np.abs(1.0 - alpha)
        total += float(contrib.sum())
        ys, xs = np.mgrid[0:rows, 0:cols]
        keys_x = (xs + x_lo).ravel()
        keys_y = (ys + y_lo).ravel()
        vals = contrib.ravel()
        for k in range(vals.size):
            xi, yi = int(keys_x[k]), int(keys_y[k])
            per_pair[((xi, yi), (xi + dx, yi + dy))] = float(vals[k])
    return total, per_pair


def _transition_matrix(
    boundary: np.ndarray, nbhd: NeighborhoodSpec, beta: float
) -> sparse.csr_matrix:
    """Row-stochastic transition matrix with weights alpha^beta between
    neighbors; isolated rows (all-zero weight) fall back to a self loop."""
    h, w = boundary.shape
    n = h * w
    rows_acc = []
    cols_acc = []
    vals_acc = []
    for dx, dy in nbhd.forward_offsets():
        alpha, x_lo, y_lo = _offset_affinity(boundary, dx, dy)
        if alpha.size == 0:
            continue
        rr, cc = alpha.shape
        ys, xs = np.mgrid[0:rr, 0:cc]
        base = ((ys + y_lo) * w + (xs + x_lo)).ravel()
        other = ((ys + y_lo + dy) * w + (xs + x_lo + dx)).ravel()
        wgt = np.power(alpha, beta).ravel()
        rows_acc.extend((base, other))
        cols_acc.extend((other, base))
        vals_acc.extend((wgt, wgt))
    if rows_acc:
        rows = np.concatenate(rows_acc)
        cols = np.concatenate(cols_acc)
        vals = np.concatenate(vals_acc)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    row_sums = np.bincount(rows, weights=vals, minlength=n)
    dead = row_sums <= 0.0
    safe = np.where(dead, 1.0, row_sums)
    vals = vals / safe[rows]
    if dead.any():
        idx = np.flatnonzero(dead)
        rows = np.concatenate([rows, idx])
        cols = np.concatenate([cols, idx])
        vals = np.concatenate([vals, np.ones(idx.size)])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def random_walk_refine(
    scores: ScoreMapStack,
    boundary,
    nbhd: NeighborhoodSpec = NeighborhoodSpec(),
    steps: int = 8,
    beta: float = 1.0,
) -> ScoreMapStack:
    """Smooth each category map with ``steps`` applications of the affinity
    random walk: new(i) = sum_j T(i, j) * old(j), T row-stochastic.

    Row-stochastic smoothing fixes spatially constant maps exactly and
    steps=0 is the identity.
    """
    if int(steps) < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    b = as_boundary(boundary)
    if b.shape != (scores.height, scores.width):
        raise ValueError(
            f"boundary raster {b.shape} != score raster {(scores.height, scores.width)}"
        )
    if int(steps) == 0:
        return scores
    trans = _transition_matrix(b, nbhd, float(beta))
    out = np.empty_like(scores.scores)
    for c in range(scores.scores.shape[0]):
        vec = scores.scores[c].ravel()
        for _ in range(int(steps)):
            vec = trans @ vec
        out[c] = vec.reshape(b.shape)
    return ScoreMapStack(scores.categories, out)


def group_by_displacement(
    displacement, seeds: InstanceLabelMap, max_iters: int = 100
) -> InstanceLabelMap:
    """Group foreground seed pixels by the attractor their displacement field
    drives them to.

    Every foreground pixel p is iterated p <- round(p + displacement(p))
    until it stops moving or ``max_iters`` is hit; pixels that leave the
    raster are dropped to background. Pixels of the same seed category that
    settle on the same attractor become one instance, numbered by first
    appearance in row-major order.
    """
    disp = as_flow(displacement)
    h, w = disp.shape[:2]
    if seeds.labels.shape != (h, w):
        raise ValueError(
            f"displacement raster {(h, w)} != seed raster {seeds.labels.shape}"
        )
    ys, xs = np.nonzero(seeds.labels)
    n = ys.size
    labels = np.zeros((h, w), dtype=np.int32)
    if n == 0:
        return InstanceLabelMap(labels, {})

    px = xs.astype(np.int64).copy()
    py = ys.astype(np.int64).copy()
    active = np.ones(n, dtype=bool)
    diverged = np.zeros(n, dtype=bool)
    for _ in range(int(max_iters)):
        if not active.any():
            break
        ax, ay = px[active], py[active]
        # round-half-up keeps the per-step pixel snapping deterministic
        nx = np.floor(ax + disp[ay, ax, 0] + 0.5).astype(np.int64)
        ny = np.floor(ay + disp[ay, ax, 1] + 0.5).astype(np.int64)
        out = (nx < 0) | (nx >= w) | (ny < 0) | (ny >= h)
        settled = (nx == ax) & (ny == ay)
        idx = np.flatnonzero(active)
        diverged[idx[out]] = True
        px[idx[~out]] = nx[~out]
        py[idx[~out]] = ny[~out]
        stop = out | settled
        active[idx[stop]] = False

    seed_cat = np.array(
        [seeds.categories[int(seeds.labels[y, x])] for x, y in zip(xs, ys)],
        dtype=np.int64,
    )
    categories: Dict[int, int] = {}
    cluster_ids: Dict[tuple, int] = {}
    next_id = 1
    for k in range(n):
        if diverged[k]:
            continue
        key = (int(seed_cat[k]), int(px[k]), int(py[k]))
        cid = cluster_ids.get(key)
        if cid is None:
            cid = next_id
            cluster_ids[key] = cid
            categories[cid] = int(seed_cat[k])
            next_id += 1
        labels[ys[k], xs[k]] = cid
    return InstanceLabelMap(labels, categories)
