"""Frame- and video-level evaluation: AP, a greedy flow tracker, track IoU
and temporal consistency.

Detection matching follows one protocol everywhere: predictions are taken
in descending score order and each is greedily matched to the not-yet-used
ground-truth instance of its own category (and frame or video) with the
highest overlap at or above the threshold. Average precision is the exact
area under the monotonized precision-recall curve, averaged over the
categories present in the ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from .core import MODEL, InstanceLabelMap, PredictionSet, mask_iou, _frozen
from .consist import MatchGraph, hungarian_match
from .warp import SamplingField, T_TO_T2, require_direction, warp_prediction

VIDEO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(9))


class MetricUndefinedError(ValueError):
    """Raised when a metric has no ground truth to evaluate against."""


@dataclass(frozen=True)
class Track:
    """One instance through time: a category, a score, and a mask per frame
    the instance appears on (frames may be missing)."""

    category: int
    score: float
    masks: dict

    def __post_init__(self):
        if not self.masks:
            raise ValueError("a track needs at least one frame")
        if int(self.category) < 1:
            raise ValueError(f"track category must be >= 1, got {self.category}")
        masks = {}
        shape = None
        for f, m in self.masks.items():
            m = _frozen(np.asarray(m, dtype=bool))
            if shape is None:
                shape = m.shape
            elif m.shape != shape:
                raise ValueError("track masks must share raster dimensions")
            masks[int(f)] = m
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "category", int(self.category))
        object.__setattr__(self, "score", float(self.score))

    @property
    def frames(self) -> List[int]:
        return sorted(self.masks)


def video_iou(a: Track, b: Track) -> float:
    """Track overlap: summed per-frame intersections over summed unions.

    Frames where only one track is present contribute zero intersection and
    that mask's full area to the union.
    """
    frames = set(a.masks) | set(b.masks)
    if not frames:
        raise ValueError("cannot compare two empty tracks")
    inter = 0
    union = 0
    for f in sorted(frames):
        ma = a.masks.get(f)
        mb = b.masks.get(f)
        if ma is not None and mb is not None:
            if ma.shape != mb.shape:
                raise ValueError("tracks live on different rasters")
            inter += int(np.count_nonzero(ma & mb))
            union += int(np.count_nonzero(ma | mb))
        elif ma is not None:
            union += int(np.count_nonzero(ma))
        else:
            union += int(np.count_nonzero(mb))
    if union == 0:
        return 0.0
    return inter / union


def _average_precision(tp_flags: Sequence[bool], n_gt: int) -> float:
    """Exact area under the monotonized PR curve for one ranked detection
    list against ``n_gt`` ground-truth instances."""
    if n_gt == 0:
        raise MetricUndefinedError("no ground truth")
    if not tp_flags:
        return 0.0
    tp = np.cumsum(np.asarray(tp_flags, dtype=np.float64))
    fp = np.cumsum(~np.asarray(tp_flags, dtype=bool))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate(([0.0], recall))
    mpre = np.concatenate(([1.0], precision))
    for k in range(mpre.size - 2, -1, -1):
        mpre[k] = max(mpre[k], mpre[k + 1])
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


def _greedy_tp_flags(dets, gts_by_group, overlap, threshold):
    """Score-descending greedy matching.

    dets: list of (score, group, payload) already restricted to one category;
    gts_by_group: group -> list of gt payloads. Returns per-detection TP
    flags in ranked order. Each ground truth matches at most once; the best
    (highest-overlap) free ground truth wins, ties to the lowest index.
    """
    ranked = sorted(range(len(dets)), key=lambda k: (-dets[k][0], k))
    used = {g: [False] * len(v) for g, v in gts_by_group.items()}
    flags = []
    for k in ranked:
        _, group, payload = dets[k]
        best, best_i = 0.0, -1
        for i, gt in enumerate(gts_by_group.get(group, ())):
            if used.get(group, [])[i]:
                continue
            v = overlap(payload, gt)
            if v >= threshold and v > best:
                best, best_i = v, i
        if best_i >= 0:
            used[group][best_i] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def ap_frame(
    pred_sets: Sequence[PredictionSet],
    gt_sets: Sequence[PredictionSet],
    iou_threshold: float = 0.5,
) -> float:
    """Frame-level average precision at a mask-IoU threshold.

    Detections are pooled per category across all frames and matched within
    their own frame. The result is the mean AP over the categories that
    appear in the ground truth; with no ground truth at all the metric is
    undefined and raises :class:`MetricUndefinedError`.
    """
    gt_by_cat: Dict[int, Dict[int, list]] = {}
    n_gt: Dict[int, int] = {}
    for gs in gt_sets:
        for g in gs:
            gt_by_cat.setdefault(g.category, {}).setdefault(gs.frame, []).append(g)
            n_gt[g.category] = n_gt.get(g.category, 0) + 1
    if not n_gt:
        raise MetricUndefinedError("ground truth contains no instances")

    dets_by_cat: Dict[int, list] = {c: [] for c in n_gt}
    for ps in pred_sets:
        for p in ps:
            if p.category in dets_by_cat:
                dets_by_cat[p.category].append((p.score, ps.frame, p))

    aps = []
    for cat in sorted(n_gt):
        flags = _greedy_tp_flags(
            dets_by_cat[cat],
            gt_by_cat[cat],
            lambda p, g: mask_iou(p.mask, g.mask),
            iou_threshold,
        )
        aps.append(_average_precision(flags, n_gt[cat]))
    return float(np.mean(aps))


def greedy_track(
    per_frame: Sequence[PredictionSet],
    samplings: Sequence[SamplingField],
    iou_threshold: float = 0.3,
) -> List[Track]:
    """Link per-frame predictions into tracks by warped-mask overlap.

    Each active track's latest mask is warped one frame forward and matched
    one-to-one (same category, mask IoU >= threshold) against the next
    frame's predictions via the assignment solver. Matched tracks extend,
    unmatched tracks terminate, and unmatched predictions start new tracks.
    A track's score is the mean of its member scores.
    """
    if len(samplings) != max(len(per_frame) - 1, 0):
        raise ValueError("need one sampling field per consecutive frame gap")
    live: List[dict] = []
    done: List[dict] = []
    for k, pset in enumerate(per_frame):
        if k == 0:
            for p in pset:
                live.append({"category": p.category, "scores": [p.score],
                             "masks": {pset.frame: p.mask}, "last": p})
            continue
        field = samplings[k - 1]
        require_direction(field, T_TO_T2)
        warped = []
        keep = []
        for t in live:
            wp = warp_prediction(t["last"], field, frame=pset.frame)
            if wp is None:
                done.append(t)
            else:
                warped.append(wp)
                keep.append(t)
        left = PredictionSet(pset.frame, pset.width, pset.height, tuple(warped), MODEL)
        weights = {}
        for i, wp in enumerate(warped):
            for j, p in enumerate(pset):
                if p.category != wp.category:
                    continue
                v = mask_iou(wp.mask, p.mask)
                if v >= iou_threshold and v > 0:
                    weights[(i, j)] = v
        matches = hungarian_match(MatchGraph(left, pset, weights))
        matched_left = {i for i, _, _ in matches.pairs}
        matched_right = {}
        for i, j, _ in matches.pairs:
            matched_right[j] = i
        next_live = []
        for j, p in enumerate(pset):
            if j in matched_right:
                t = keep[matched_right[j]]
                t["scores"].append(p.score)
                t["masks"][pset.frame] = p.mask
                t["last"] = p
                next_live.append(t)
        for i, t in enumerate(keep):
            if i not in matched_left:
                done.append(t)
        for j, p in enumerate(pset):
            if j not in matched_right:
                next_live.append({"category": p.category, "scores": [p.score],
                                  "masks": {pset.frame: p.mask}, "last": p})
        live = next_live
    done.extend(live)
    done.sort(key=lambda t: (min(t["masks"]),))
    return [
        Track(t["category"], float(np.mean(t["scores"])), t["masks"]) for t in done
    ]


def tracks_from_labels(
    label_maps: Sequence[InstanceLabelMap],
    frames: Sequence[int] = None,
    track_ids: Sequence[dict] = None,
) -> List[Track]:
    """Assemble tracks from per-frame label maps.

    Label ids are per-frame; ``track_ids`` optionally maps each frame's label
    id to a persistent identity (defaults to the label id itself, which is
    correct when instances keep their id across frames).
    """
    if frames is None:
        frames = list(range(len(label_maps)))
    acc: Dict[int, dict] = {}
    for k, (f, lm) in enumerate(zip(frames, label_maps)):
        for label, cat in lm.categories.items():
            tid = int(track_ids[k][label]) if track_ids else label
            t = acc.setdefault(tid, {"category": cat, "masks": {}})
            if t["category"] != cat:
                raise ValueError(f"track {tid} changes category")
            t["masks"][f] = lm.mask_of(label)
    return [Track(acc[tid]["category"], 1.0, acc[tid]["masks"]) for tid in sorted(acc)]


def video_ap(
    pred_tracks: Sequence[Sequence[Track]],
    gt_tracks: Sequence[Sequence[Track]],
    thresholds: Sequence[float] = VIDEO_IOU_THRESHOLDS,
) -> Dict[str, float]:
    """Track-level metric bundle over a collection of videos.

    Uses :func:`video_iou` as overlap and the shared matching protocol, with
    detections pooled per category across videos and matched within their
    own video. Returns mAP over the threshold sweep, AP at 0.5 and 0.75, and
    recall averaged over thresholds with at most 1 / 10 highest-scored tracks
    per video and category (AR1 / AR10).
    """
    if len(pred_tracks) != len(gt_tracks):
        raise ValueError("prediction and ground-truth video counts differ")
    cats = sorted({t.category for vid in gt_tracks for t in vid})
    if not cats:
        raise MetricUndefinedError("ground truth contains no tracks")
    n_gt = {
        c: sum(1 for vid in gt_tracks for t in vid if t.category == c) for c in cats
    }
    gt_by_cat = {
        c: {
            v: [t for t in vid if t.category == c]
            for v, vid in enumerate(gt_tracks)
        }
        for c in cats
    }

    def ap_at(tau: float, cat: int) -> float:
        dets = [
            (t.score, v, t)
            for v, vid in enumerate(pred_tracks)
            for t in vid
            if t.category == cat
        ]
        flags = _greedy_tp_flags(dets, gt_by_cat[cat], video_iou, tau)
        return _average_precision(flags, n_gt[cat])

    def recall_at(tau: float, cat: int, max_tracks: int) -> float:
        matched = 0
        for v, vid in enumerate(pred_tracks):
            mine = sorted(
                (t for t in vid if t.category == cat), key=lambda t: -t.score
            )[:max_tracks]
            dets = [(t.score, v, t) for t in mine]
            flags = _greedy_tp_flags(dets, {v: gt_by_cat[cat].get(v, [])}, video_iou, tau)
            matched += sum(flags)
        return matched / n_gt[cat]

    ap_grid = {tau: [ap_at(tau, c) for c in cats] for tau in thresholds}
    bundle = {
        "mAP": float(np.mean([np.mean(ap_grid[tau]) for tau in thresholds])),
        "AP50": float(np.mean(ap_grid[0.5])) if 0.5 in ap_grid else float("nan"),
        "AP75": float(np.mean(ap_grid[0.75])) if 0.75 in ap_grid else float("nan"),
    }
    for name, k in (("AR1", 1), ("AR10", 10)):
        vals = [recall_at(tau, c, k) for tau in thresholds for c in cats]
        bundle[name] = float(np.mean(vals))
    return bundle


def temporal_consistency(
    per_frame: Sequence[PredictionSet], samplings: Sequence[SamplingField]
) -> float:
    """Mean AP at mask IoU 0.5 between flow-warped predictions and the next
    frame's predictions, over consecutive frame pairs.

    The warped frame-k predictions act as the pair's ground truth. Pairs
    whose warped set is empty carry no signal and are skipped; if no pair
    has signal (for example, an entirely empty stream) the score is 0.0.
    """
    if len(per_frame) < 2:
        raise ValueError("temporal consistency needs at least two frames")
    if len(samplings) != len(per_frame) - 1:
        raise ValueError("need one sampling field per consecutive frame gap")
    vals = []
    for k in range(len(per_frame) - 1):
        field = samplings[k]
        require_direction(field, T_TO_T2)
        target = per_frame[k + 1]
        warped = [warp_prediction(p, field, frame=target.frame) for p in per_frame[k]]
        warped = [p for p in warped if p is not None]
        if not warped:
            continue
        gt = PredictionSet(target.frame, target.width, target.height, tuple(warped), MODEL)
        vals.append(ap_frame([target], [gt], 0.5))
    if not vals:
        return 0.0
    return float(np.mean(vals))
