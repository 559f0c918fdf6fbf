"""Temporally consistent pseudo-label transfer between a frame pair.

The procedure has four stages, orchestrated by :func:`maskconsist_step`:

1. expand each frame's predictions by merging fragments that overlap the
   same pseudo-label,
2. build a bipartite graph between the two expanded sets, weighted by the
   overlap of flow-warped masks, and solve it one-to-one,
3. transfer each matched prediction that is anchored by a same-category
   pseudo-label on its own frame, merging the warped mask into its match,
4. combine transferred and existing pseudo-labels, suppressing near-
   duplicate smaller masks by intersection-over-minimum.

All functions are pure; a step on one frame pair is independent of any
other pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import (
    COMBINED,
    EXPANDED,
    TRANSFERRED,
    Prediction,
    PredictionSet,
    box_iou,
    mask_iom,
    mask_iou,
    merge_all,
)
from .warp import SamplingField, T2_TO_T, T_TO_T2, require_direction, warp_prediction


@dataclass(frozen=True)
class MaskConsistConfig:
    """Knobs for the transfer procedure.

    delta is the frame gap between the paired frames; box_iou_threshold
    gates both fragment merging and the transfer anchor; iom_threshold
    drives duplicate suppression; top_k caps the candidate predictions per
    frame. edge_overlap picks the match-graph overlap measure ("mask" is
    the default, "box" is available for sensitivity studies).
    """

    delta: int = 5
    box_iou_threshold: float = 0.5
    iom_threshold: float = 0.5
    top_k: int = 100
    edge_overlap: str = "mask"

    def __post_init__(self):
        if int(self.delta) < 1:
            raise ValueError(f"delta must be >= 1, got {self.delta}")
        for name in ("box_iou_threshold", "iom_threshold"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if int(self.top_k) < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.edge_overlap not in ("mask", "box"):
            raise ValueError(f"edge_overlap must be 'mask' or 'box', got {self.edge_overlap!r}")


@dataclass(frozen=True)
class MatchGraph:
    """Bipartite overlap graph between two expanded prediction sets; weights
    are sparse over same-category pairs with positive overlap."""

    left: PredictionSet
    right: PredictionSet
    weights: dict

    def __post_init__(self):
        for (i, j), w in self.weights.items():
            if not (0 <= i < len(self.left) and 0 <= j < len(self.right)):
                raise ValueError(f"edge ({i}, {j}) out of range")
            if not (0.0 < w <= 1.0):
                raise ValueError(f"edge weight {w} outside (0, 1]")
            if self.left[i].category != self.right[j].category:
                raise ValueError(f"edge ({i}, {j}) joins different categories")


@dataclass(frozen=True)
class MatchSet:
    """One-to-one matches as (left index, right index, weight) triples."""

    pairs: tuple = ()

    def __post_init__(self):
        pairs = tuple((int(i), int(j), float(w)) for i, j, w in self.pairs)
        lefts = [i for i, _, _ in pairs]
        rights = [j for _, j, _ in pairs]
        if len(set(lefts)) != len(lefts) or len(set(rights)) != len(rights):
            raise ValueError("match set is not one-to-one")
        if any(w <= 0 for _, _, w in pairs):
            raise ValueError("match weights must be > 0")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def reversed(self) -> "MatchSet":
        return MatchSet(tuple((j, i, w) for i, j, w in self.pairs))

    def total_weight(self) -> float:
        # exact summation: the total is independent of pair order
        return math.fsum(w for _, _, w in self.pairs)


def _score_order(preds: PredictionSet) -> List[Prediction]:
    # stable sort: equal scores keep their input order
    return sorted(preds, key=lambda p: -p.score)


def expand_predictions(
    preds: PredictionSet, pseudo: PredictionSet, cfg: MaskConsistConfig
) -> PredictionSet:
    """Expand a frame's predictions with merged fragments.

    The output keeps the top_k predictions by score, then appends, for each
    pseudo-label, the union of every same-category prediction whose box IoU
    with that label exceeds the threshold. A union is appended when it came
    from two or more fragments or when its mask differs from every original
    prediction, so single-fragment "unions" never duplicate an original.
    """
    if preds.frame != pseudo.frame:
        raise ValueError("prediction and pseudo-label sets are for different frames")
    ordered = _score_order(preds)
    out = list(ordered[: cfg.top_k])
    for label in pseudo:
        cands = [
            p
            for p in ordered
            if p.category == label.category
            and box_iou(p.box, label.box) > cfg.box_iou_threshold
        ]
        if not cands:
            continue
        merged = merge_all(cands)
        if len(cands) >= 2 or not any(
            np.array_equal(merged.mask, p.mask) for p in ordered
        ):
            out.append(merged)
    return preds.replace(out, EXPANDED)


def build_match_graph(
    left: PredictionSet,
    right: PredictionSet,
    sampling: SamplingField,
    cfg: MaskConsistConfig = MaskConsistConfig(),
) -> MatchGraph:
    """Weight every same-category (left, right) pair by the overlap of the
    flow-warped left mask with the right mask; empty warps and zero overlaps
    yield no edge."""
    if (left.height, left.width) != (right.height, right.width):
        raise ValueError("frame rasters differ")
    if (sampling.height, sampling.width) != (left.height, left.width):
        raise ValueError("sampling raster differs from the frame raster")
    weights: Dict[Tuple[int, int], float] = {}
    warped = [warp_prediction(p, sampling, frame=right.frame) for p in left]
    for i, wp in enumerate(warped):
        if wp is None:
            continue
        for j, q in enumerate(right):
            if q.category != wp.category:
                continue
            if cfg.edge_overlap == "mask":
                v = mask_iou(wp.mask, q.mask)
            else:
                v = box_iou(wp.box, q.box)
            if v > 0.0:
                weights[(i, j)] = float(v)
    return MatchGraph(left, right, weights)


def _canonicalize_assignment(w: np.ndarray, assign: Dict[int, int]) -> Dict[int, int]:
    """Deterministic tie-break: among equal-total optimal assignments prefer
    the lowest right index on the lowest left index, applying exact zero-cost
    swaps until none remain."""
    n = w.shape[0]
    for _ in range(n + 1):
        changed = False
        lefts = sorted(assign)
        used = set(assign.values())
        # move a matched left to an equal-weight, lower right column
        for a in lefts:
            x = assign[a]
            for y in range(x):
                if y not in used and w[a, y] == w[a, x]:
                    assign[a] = y
                    used.discard(x)
                    used.add(y)
                    x = y
                    changed = True
        # swap the right columns of two matched lefts when the total is
        # exactly preserved and the lower left gets the lower right
        for ai in range(len(lefts)):
            for bi in range(ai + 1, len(lefts)):
                a, b = lefts[ai], lefts[bi]
                x, y = assign[a], assign[b]
                if y < x and w[a, y] > 0 and w[b, x] > 0 and w[a, y] + w[b, x] == w[a, x] + w[b, y]:
                    assign[a], assign[b] = y, x
                    changed = True
        if not changed:
            break
    return assign


def hungarian_match(graph: MatchGraph) -> MatchSet:
    """Maximum-weight one-to-one matching over the graph's edges.

    Absent edges count as zero weight and zero-weight pairs are dropped from
    the result, so only genuinely overlapping predictions are matched. Ties
    between equally heavy assignments resolve to the lowest left index, then
    the lowest right index.
    """
    if not graph.weights:
        return MatchSet(())
    n, m = len(graph.left), len(graph.right)
    w = np.zeros((n, m), dtype=np.float64)
    for (i, j), v in graph.weights.items():
        w[i, j] = v
    rows, cols = linear_sum_assignment(w, maximize=True)
    assign = {int(r): int(c) for r, c in zip(rows, cols) if w[r, c] > 0.0}
    assign = _canonicalize_assignment(w, assign)
    return MatchSet(tuple((i, assign[i], float(w[i, assign[i]])) for i in sorted(assign)))


def transfer_labels(
    matches: MatchSet,
    src: PredictionSet,
    dst: PredictionSet,
    pseudo_src: PredictionSet,
    sampling: SamplingField,
    cfg: MaskConsistConfig = MaskConsistConfig(),
) -> PredictionSet:
    """Emit new pseudo-labels for the destination frame from matched pairs.

    For each matched (src, dst) pair, the source frame's pseudo-labels are
    scanned in stored order; at the first same-category label whose box IoU
    with the source prediction exceeds the threshold, the warped source mask
    is merged with the matched destination prediction and emitted, and the
    scan stops for that pair. ``sampling`` must warp src content onto the
    destination grid.
    """
    out = []
    for i, j, _ in matches.pairs:
        p_src = src[i]
        p_dst = dst[j]
        for label in pseudo_src:
            if (
                label.category == p_src.category
                and box_iou(p_src.box, label.box) > cfg.box_iou_threshold
            ):
                warped = warp_prediction(p_src, sampling, frame=p_dst.frame)
                if warped is not None:
                    out.append(merge_all([warped, p_dst]))
                break
    return PredictionSet(dst.frame, dst.width, dst.height, tuple(out), TRANSFERRED)


def combine_labels(
    transferred: PredictionSet, pseudo: PredictionSet, cfg: MaskConsistConfig
) -> PredictionSet:
    """Union of transferred and existing pseudo-labels with duplicate
    suppression: any pair with mask IoM above the threshold loses its
    smaller-area member. Pairs are processed in descending IoM; on equal
    areas the lower original index survives.
    """
    if transferred.frame != pseudo.frame:
        raise ValueError("cannot combine label sets from different frames")
    items = list(transferred) + list(pseudo)
    n = len(items)
    overlaps = []
    for i in range(n):
        for j in range(i + 1, n):
            v = mask_iom(items[i].mask, items[j].mask)
            if v > cfg.iom_threshold:
                overlaps.append((v, i, j))
    overlaps.sort(key=lambda t: (-t[0], t[1], t[2]))
    alive = [True] * n
    for _, i, j in overlaps:
        if not (alive[i] and alive[j]):
            continue
        ai, aj = items[i].area, items[j].area
        if ai < aj:
            alive[i] = False
        elif aj < ai:
            alive[j] = False
        else:
            alive[j] = False
    kept = [items[k] for k in range(n) if alive[k]]
    return PredictionSet(pseudo.frame, pseudo.width, pseudo.height, tuple(kept), COMBINED)


def _new_label_count(combined: PredictionSet, pseudo: PredictionSet) -> int:
    """Combined-output labels that match no input pseudo-label exactly."""
    count = 0
    for p in combined:
        if not any(
            p.category == q.category and np.array_equal(p.mask, q.mask) for q in pseudo
        ):
            count += 1
    return count


def maskconsist_step(
    preds_t: PredictionSet,
    pseudo_t: PredictionSet,
    preds_t2: PredictionSet,
    pseudo_t2: PredictionSet,
    sampling_fwd: SamplingField,
    sampling_bwd: SamplingField,
    cfg: MaskConsistConfig = MaskConsistConfig(),
):
    """Run the full transfer procedure on a frame pair, symmetrically.

    Both frames are expanded, matched once with the forward-warping field,
    and labels are transferred in both directions; each frame's transfers
    are combined with its own pseudo-labels. Returns
    ``(labels_t, labels_t2, stats)`` where stats counts expansions, matches,
    raw transfers, net new labels and suppressions per side.
    """
    require_direction(sampling_fwd, T_TO_T2)
    require_direction(sampling_bwd, T2_TO_T)
    exp_t = expand_predictions(preds_t, pseudo_t, cfg)
    exp_t2 = expand_predictions(preds_t2, pseudo_t2, cfg)
    graph = build_match_graph(exp_t, exp_t2, sampling_fwd, cfg)
    matches = hungarian_match(graph)
    moved_t2 = transfer_labels(matches, exp_t, exp_t2, pseudo_t, sampling_fwd, cfg)
    moved_t = transfer_labels(matches.reversed(), exp_t2, exp_t, pseudo_t2, sampling_bwd, cfg)
    labels_t = combine_labels(moved_t, pseudo_t, cfg)
    labels_t2 = combine_labels(moved_t2, pseudo_t2, cfg)
    stats = {
        "expanded_t": len(exp_t) - min(cfg.top_k, len(preds_t)),
        "expanded_t2": len(exp_t2) - min(cfg.top_k, len(preds_t2)),
        "matched": len(matches),
        "emitted_t": len(moved_t),
        "emitted_t2": len(moved_t2),
        "new_t": _new_label_count(labels_t, pseudo_t),
        "new_t2": _new_label_count(labels_t2, pseudo_t2),
        "suppressed_t": len(moved_t) + len(pseudo_t) - len(labels_t),
        "suppressed_t2": len(moved_t2) + len(pseudo_t2) - len(labels_t2),
    }
    return labels_t, labels_t2, stats
