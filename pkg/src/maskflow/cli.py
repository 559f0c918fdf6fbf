"""Command-line pipeline runner.

Subcommands: fcam, affinity, fboundary-loss, warp, maskconsist, track,
metrics, synth, pipeline. Every command takes --config (a JSON document,
see config.DEFAULTS for the keys), plus --seed / --out / --overlay / --jobs,
validates all inputs before writing anything, and is deterministic given
(inputs, config, seed): re-runs produce byte-identical output trees,
regardless of --jobs.

Exit codes: 0 success, 2 bad input, 3 invalid config.

Single-channel float rasters (boundary likelihoods) travel in the same
container as score stacks, as a one-map stack.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import formats
from .config import (
    ConfigError,
    amplify_config,
    consist_config,
    corruption_spec,
    echo_config,
    load_config,
    neighborhood,
    scene_spec,
)
from .consist import maskconsist_step
from .core import SEEDED, PredictionSet, mask_iou, predictions_from_labels
from .formats import InputError
from .metrics import (
    MetricUndefinedError,
    ap_frame,
    greedy_track,
    temporal_consistency,
    tracks_from_labels,
    video_ap,
)
from .seeding import (
    ScoreMapStack,
    amplify_cam,
    cam_seeds,
    flow_boundary_loss,
    flow_jacobian,
    group_by_displacement,
    line_affinity,
    normalize_scores,
    random_walk_refine,
)
from .synth import corrupt_labels, render_scene
from .warp import T2_TO_T, T_TO_T2, compose_sampling, flow_to_sampling, warp_prediction

_PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 190), (0, 128, 128), (230, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
    (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
]


def _map_jobs(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _write_echo(out: Path, cfg: dict) -> None:
    formats.write_json(out / "config.json", echo_config(cfg))


def _list_inputs(path_or_dir: str, suffix: str):
    p = Path(path_or_dir)
    if p.is_dir():
        files = sorted(p.glob(f"*{suffix}"))
        if not files:
            raise InputError(f"{p}: no {suffix} files found")
        return files
    if not p.exists():
        raise InputError(f"{p}: no such file")
    return [p]


def _overlay_png(path: Path, pset: PredictionSet) -> None:
    img = np.full((pset.height, pset.width, 3), 40, dtype=np.float64)
    for k, p in enumerate(pset):
        color = np.array(_PALETTE[k % len(_PALETTE)], dtype=np.float64)
        img[p.mask] = 0.4 * img[p.mask] + 0.6 * color
        b = p.box
        img[b.y0, b.x0 : b.x1] = 255
        img[b.y1 - 1, b.x0 : b.x1] = 255
        img[b.y0 : b.y1, b.x0] = 255
        img[b.y0 : b.y1, b.x1 - 1] = 255
    Image.fromarray(img.astype(np.uint8)).save(path, format="PNG")


# ---------------------------------------------------------------------------
# synth


def _write_scene(out: Path, scene, jobs: int) -> None:
    (out / "gt").mkdir(parents=True, exist_ok=True)
    (out / "flow").mkdir(exist_ok=True)
    (out / "fields").mkdir(exist_ok=True)
    (out / "cams").mkdir(exist_ok=True)

    def write_frame(k: int) -> None:
        formats.write_label_map(
            out / "gt" / f"labels_{k:04d}.png",
            scene.gt_labels[k],
            track_ids=scene.gt_track_ids[k],
        )
        formats.write_flow_file(out / "fields" / f"disp_{k:04d}.flo",
                                scene.displacements[k])
        formats.write_cam_file(
            out / "fields" / f"boundary_{k:04d}.camb",
            ScoreMapStack((1,), scene.boundaries[k][None]),
        )
        formats.write_cam_file(out / "cams" / f"cams_{k:04d}.camb", scene.cams[k])

    def write_gap(k: int) -> None:
        formats.write_flow_file(out / "flow" / f"fwd_{k:04d}.flo", scene.flows_fwd[k])
        formats.write_flow_file(out / "flow" / f"bwd_{k:04d}.flo", scene.flows_bwd[k])

    _map_jobs(write_frame, range(scene.spec.frames), jobs)
    _map_jobs(write_gap, range(scene.spec.frames - 1), jobs)
    formats.write_predictions(out / "predictions.jsonl", scene.predictions)


def cmd_synth(args, cfg: dict, out: Path) -> None:
    if cfg.get("scene") is None:
        raise ConfigError("synth needs a scene in the config")
    scene = render_scene(scene_spec(cfg["scene"]))
    _write_echo(out, cfg)
    _write_scene(out, scene, args.jobs)
    if args.overlay:
        (out / "overlays").mkdir(exist_ok=True)
        for k, ps in enumerate(scene.predictions):
            _overlay_png(out / "overlays" / f"gt_{k:04d}.png", ps)


# ---------------------------------------------------------------------------
# fcam


def cmd_fcam(args, cfg: dict, out: Path) -> None:
    cam_files = _list_inputs(args.cams, ".camb")
    flow_files = _list_inputs(args.flows, ".flo")
    if len(cam_files) != len(flow_files):
        raise InputError(
            f"{len(cam_files)} score stacks but {len(flow_files)} flow files"
        )
    stacks = [formats.read_cam_file(p) for p in cam_files]
    flows = [formats.read_flow_file(p) for p in flow_files]
    acfg = amplify_config(cfg)
    _write_echo(out, cfg)

    def process(k: int) -> None:
        amplified = amplify_cam(stacks[k], flows[k], acfg)
        stem = cam_files[k].stem
        formats.write_cam_file(out / f"fcam_{stem}.camb", amplified)
        seeds = cam_seeds(normalize_scores(amplified), cfg["fg_threshold"])
        formats.write_label_map(out / f"seeds_{stem}.png", seeds)

    _map_jobs(process, range(len(stacks)), args.jobs)


# ---------------------------------------------------------------------------
# affinity and the boundary loss


def _read_boundary(path) -> np.ndarray:
    stack = formats.read_cam_file(path)
    if stack.scores.shape[0] != 1:
        raise InputError(f"{path}: boundary map must be a one-map stack")
    return stack.scores[0]


def cmd_affinity(args, cfg: dict, out: Path) -> None:
    boundary = _read_boundary(args.boundary)
    spec = formats.read_json(args.pairs)
    pairs = spec.get("pairs")
    if not isinstance(pairs, list):
        raise InputError(f"{args.pairs}: expected a 'pairs' list of [x1, y1, x2, y2]")
    values = []
    for k, quad in enumerate(pairs):
        if len(quad) != 4:
            raise InputError(f"{args.pairs}: pair {k} must have 4 coordinates")
        x1, y1, x2, y2 = (int(v) for v in quad)
        values.append(line_affinity((x1, y1), (x2, y2), boundary))
    _write_echo(out, cfg)
    formats.write_json(out / "affinity.json", {"pairs": pairs, "affinity": values})


def cmd_fboundary_loss(args, cfg: dict, out: Path) -> None:
    flow = formats.read_flow_file(args.flow)
    boundary = _read_boundary(args.boundary)
    jac = flow_jacobian(flow)
    total, per_pair = flow_boundary_loss(
        jac, boundary, neighborhood(cfg), reg_weight=cfg["reg_weight"]
    )
    report = {
        "total": total,
        "num_pairs": len(per_pair),
        "reg_weight": cfg["reg_weight"],
        "radius": cfg["neighborhood_radius"],
    }
    if args.per_pair:
        report["pairs"] = [
            {"i": list(i), "j": list(j), "value": v}
            for (i, j), v in sorted(per_pair.items())
        ]
    _write_echo(out, cfg)
    formats.write_json(out / "fboundary_loss.json", report)


# ---------------------------------------------------------------------------
# warp


def cmd_warp(args, cfg: dict, out: Path) -> None:
    flow = formats.read_flow_file(args.flow)
    field = flow_to_sampling(flow, args.flow_direction, args.warp_direction)
    h, w = flow.shape[:2]
    preds = formats.read_predictions(args.predictions, w, h)
    frames = sorted({p.frame for p in preds})
    sets = formats.group_predictions(preds, w, h, frames)
    warped_sets = []
    for ps in sets:
        kept = [q for q in (warp_prediction(p, field) for p in ps) if q is not None]
        warped_sets.append(ps.replace(kept))
    _write_echo(out, cfg)
    formats.write_predictions(out / "warped.jsonl", warped_sets)


# ---------------------------------------------------------------------------
# maskconsist


def _single_frame(preds, default: int, what: str) -> int:
    frames = {p.frame for p in preds}
    if len(frames) > 1:
        raise InputError(f"{what}: expected one frame, found {sorted(frames)}")
    return frames.pop() if frames else default


def cmd_maskconsist(args, cfg: dict, out: Path) -> None:
    flow_fwd = formats.read_flow_file(args.flow_fwd)
    flow_bwd = formats.read_flow_file(args.flow_bwd)
    if flow_fwd.shape != flow_bwd.shape:
        raise InputError("forward and backward flow rasters differ")
    h, w = flow_fwd.shape[:2]
    raw = {
        name: formats.read_predictions(getattr(args, name), w, h)
        for name in ("preds_t", "pseudo_t", "preds_t2", "pseudo_t2")
    }
    ccfg = consist_config(cfg)
    t = _single_frame(raw["preds_t"] + raw["pseudo_t"], 0, "frame t inputs")
    t2 = _single_frame(raw["preds_t2"] + raw["pseudo_t2"], t + ccfg.delta, "frame t2 inputs")
    if t2 <= t:
        raise InputError(f"frame t2 ({t2}) must come after frame t ({t})")
    sets = {
        "preds_t": formats.group_predictions(raw["preds_t"], w, h, [t])[0],
        "pseudo_t": formats.group_predictions(raw["pseudo_t"], w, h, [t], SEEDED)[0],
        "preds_t2": formats.group_predictions(raw["preds_t2"], w, h, [t2])[0],
        "pseudo_t2": formats.group_predictions(raw["pseudo_t2"], w, h, [t2], SEEDED)[0],
    }
    sampling_fwd = flow_to_sampling(flow_bwd, T2_TO_T, T_TO_T2)
    sampling_bwd = flow_to_sampling(flow_fwd, T_TO_T2, T2_TO_T)
    labels_t, labels_t2, stats = maskconsist_step(
        sets["preds_t"], sets["pseudo_t"], sets["preds_t2"], sets["pseudo_t2"],
        sampling_fwd, sampling_bwd, ccfg,
    )
    _write_echo(out, cfg)
    formats.write_predictions(out / "labels_t.jsonl", [labels_t])
    formats.write_predictions(out / "labels_t2.jsonl", [labels_t2])
    formats.write_json(out / "report.json", {
        "expanded": stats["expanded_t"] + stats["expanded_t2"],
        "matched": stats["matched"],
        "transferred": stats["new_t"] + stats["new_t2"],
        "suppressed": stats["suppressed_t"] + stats["suppressed_t2"],
    })
    if args.overlay:
        _overlay_png(out / "labels_t.png", labels_t)
        _overlay_png(out / "labels_t2.png", labels_t2)


# ---------------------------------------------------------------------------
# track and metrics


def _read_gap_samplings(flow_dir, expect: int = None):
    files = _list_inputs(flow_dir, ".flo")
    bwd = [p for p in files if p.name.startswith("bwd_")]
    if not bwd:
        raise InputError(f"{flow_dir}: no bwd_*.flo files")
    if expect is not None and len(bwd) != expect:
        raise InputError(f"{flow_dir}: expected {expect} backward flows, found {len(bwd)}")
    return [flow_to_sampling(formats.read_flow_file(p), T2_TO_T, T_TO_T2) for p in bwd]


def _track_payload(tracks, width: int, height: int) -> dict:
    return {
        "width": width,
        "height": height,
        "tracks": [
            {
                "category": t.category,
                "score": t.score,
                "masks": {str(f): formats.rle_encode(t.masks[f]) for f in t.frames},
            }
            for t in tracks
        ],
    }


def cmd_track(args, cfg: dict, out: Path) -> None:
    samplings = _read_gap_samplings(args.flows)
    h, w = samplings[0].height, samplings[0].width
    preds = formats.read_predictions(args.predictions, w, h)
    frames = list(range(len(samplings) + 1))
    sets = formats.group_predictions(preds, w, h, frames)
    tracks = greedy_track(sets, samplings, cfg["track_iou_threshold"])
    _write_echo(out, cfg)
    formats.write_json(out / "tracks.json", _track_payload(tracks, w, h))


def _metric_bundle(pred_sets, gt_sets, gt_tracks, samplings, track_iou: float) -> dict:
    pred_tracks = greedy_track(pred_sets, samplings, track_iou)
    bundle = video_ap([pred_tracks], [gt_tracks])
    return {
        "AP50": ap_frame(pred_sets, gt_sets, 0.5),
        "mAP": bundle["mAP"],
        "AP75": bundle["AP75"],
        "AR1": bundle["AR1"],
        "AR10": bundle["AR10"],
        "TC": temporal_consistency(pred_sets, samplings),
    }


def _read_gt(gt_dir):
    files = _list_inputs(gt_dir, ".png")
    files = [p for p in files if p.name.startswith("labels_")]
    if not files:
        raise InputError(f"{gt_dir}: no labels_*.png files")
    maps, tids = [], []
    for p in files:
        lmap, _, tid = formats.read_label_map(p)
        maps.append(lmap)
        tids.append(tid)
    return maps, tids


def cmd_metrics(args, cfg: dict, out: Path) -> None:
    gt_maps, gt_tids = _read_gt(args.gt)
    h, w = gt_maps[0].height, gt_maps[0].width
    samplings = _read_gap_samplings(args.flows, expect=len(gt_maps) - 1)
    preds = formats.read_predictions(args.predictions, w, h)
    frames = list(range(len(gt_maps)))
    pred_sets = formats.group_predictions(preds, w, h, frames)
    gt_sets = [predictions_from_labels(m, k, provenance="model")
               for k, m in enumerate(gt_maps)]
    gt_tracks = tracks_from_labels(gt_maps, frames, gt_tids)
    try:
        report = _metric_bundle(pred_sets, gt_sets, gt_tracks, samplings,
                                cfg["track_iou_threshold"])
    except MetricUndefinedError as e:
        raise InputError(f"metrics undefined: {e}") from e
    _write_echo(out, cfg)
    formats.write_json(out / "metrics.json", report)


# ---------------------------------------------------------------------------
# pipeline


def _seed_pseudo_labels(cfg: dict, scene) -> list:
    """The full seeding chain: amplified score maps, random-walk refinement,
    threshold seeds, displacement grouping."""
    acfg = amplify_config(cfg)
    nbhd = neighborhood(cfg)
    out = []
    for k in range(scene.spec.frames):
        flow = scene.flows_fwd[min(k, scene.spec.frames - 2)] \
            if scene.spec.frames > 1 else np.zeros((scene.spec.height, scene.spec.width, 2))
        amplified = amplify_cam(scene.cams[k], flow, acfg)
        refined = random_walk_refine(
            normalize_scores(amplified), scene.boundaries[k], nbhd,
            steps=int(cfg["walk_steps"]), beta=float(cfg["walk_beta"]),
        )
        seeds = cam_seeds(refined, cfg["fg_threshold"])
        grouped = group_by_displacement(scene.displacements[k], seeds)
        out.append(predictions_from_labels(grouped, k, provenance=SEEDED))
    return out


def _recovery_report(scene, manifest, final_sets) -> dict:
    dropped = [e for e in manifest if e["mode"] == "drop"]
    recovered = 0
    for e in dropped:
        gt = scene.predictions[e["frame"]][e["index"]]
        hits = (
            mask_iou(p.mask, gt.mask) >= 0.9
            for p in final_sets[e["frame"]]
            if p.category == gt.category
        )
        if any(hits):
            recovered += 1
    corrupted_frames = {e["frame"] for e in manifest}
    false_pos = 0
    for k, ps in enumerate(final_sets):
        if k in corrupted_frames:
            continue
        for p in ps:
            matches_gt = any(
                p.category == g.category and mask_iou(p.mask, g.mask) >= 0.5
                for g in scene.predictions[k]
            )
            if not matches_gt:
                false_pos += 1
    return {
        "dropped": len(dropped),
        "recovered": recovered,
        "recovery_rate": (recovered / len(dropped)) if dropped else 1.0,
        "eroded": sum(1 for e in manifest if e["mode"] == "erode"),
        "false_positives": false_pos,
    }


def run_pipeline(cfg: dict, out: Path, jobs: int = 1, overlay: bool = False) -> dict:
    """End-to-end run: render (or load) data, build pseudo-labels, sweep the
    transfer over frame pairs with sequential label updating, then score.

    The sweep processes pairs (k, k + delta) in increasing k and feeds each
    step's outputs into the next pair's inputs, so a label recovered on one
    frame can propagate along the sequence within a single pass.
    """
    if cfg.get("scene") is None and cfg.get("data_dir") is None:
        raise ConfigError("pipeline needs either a scene or a data_dir")
    if cfg.get("scene") is not None:
        scene = render_scene(scene_spec(cfg["scene"]))
    else:
        scene = _load_scene_dir(Path(cfg["data_dir"]))
    frames = scene.spec.frames
    delta = int(cfg["delta"])
    if frames < delta + 1:
        raise ConfigError(f"pipeline needs at least delta + 1 = {delta + 1} frames")

    _write_echo(out, cfg)
    _write_scene(out / "dataset", scene, jobs)

    manifest = []
    if cfg["pseudo_source"] == "cam_seeds":
        pseudo = _seed_pseudo_labels(cfg, scene)
    else:
        corrupted, manifest = corrupt_labels(scene.predictions, corruption_spec(cfg))
        pseudo = [ps.replace(list(ps), SEEDED) for ps in corrupted]
    (out / "labels").mkdir(parents=True, exist_ok=True)
    formats.write_predictions(out / "labels" / "pseudo.jsonl", pseudo)
    formats.write_json(out / "labels" / "corruption_manifest.json", manifest)

    fwd_leg = [flow_to_sampling(f, T2_TO_T, T_TO_T2) for f in scene.flows_bwd]
    bwd_leg = [flow_to_sampling(f, T_TO_T2, T2_TO_T) for f in scene.flows_fwd]

    def fwd_field(k: int):
        acc = fwd_leg[k]
        for g in range(k + 1, k + delta):
            acc = compose_sampling(acc, fwd_leg[g])
        return acc

    def bwd_field(k: int):
        acc = bwd_leg[k]
        for g in range(k + 1, k + delta):
            acc = compose_sampling(bwd_leg[g], acc)
        return acc

    totals = {"matched": 0, "transferred": 0, "suppressed": 0, "expanded": 0}
    final = list(pseudo)
    for k in range(frames - delta):
        labels_t, labels_t2, stats = maskconsist_step(
            scene.predictions[k], final[k],
            scene.predictions[k + delta], final[k + delta],
            fwd_field(k), bwd_field(k), consist_config(cfg),
        )
        final[k] = labels_t
        final[k + delta] = labels_t2
        totals["matched"] += stats["matched"]
        totals["transferred"] += stats["new_t"] + stats["new_t2"]
        totals["suppressed"] += stats["suppressed_t"] + stats["suppressed_t2"]
        totals["expanded"] += stats["expanded_t"] + stats["expanded_t2"]
    formats.write_predictions(out / "labels" / "combined.jsonl", final)

    gt_sets = [
        predictions_from_labels(m, k, provenance="model")
        for k, m in enumerate(scene.gt_labels)
    ]
    gt_tracks = tracks_from_labels(scene.gt_labels, list(range(frames)),
                                   scene.gt_track_ids)
    metrics = _metric_bundle(final, gt_sets, gt_tracks, fwd_leg,
                             cfg["track_iou_threshold"])
    summary = {"transfer": totals, "metrics": metrics}
    if cfg["pseudo_source"] == "corrupted_gt":
        summary["recovery"] = _recovery_report(scene, manifest, final)
    formats.write_json(out / "summary.json", summary)

    if overlay:
        (out / "overlays").mkdir(exist_ok=True)
        for k, ps in enumerate(final):
            _overlay_png(out / "overlays" / f"labels_{k:04d}.png", ps)
    return summary


def _load_scene_dir(root: Path):
    """Load a dataset tree written by the synth command as a Scene."""
    from .synth import Scene, SceneSpec

    gt_maps, gt_tids = _read_gt(root / "gt")
    h, w = gt_maps[0].height, gt_maps[0].width
    frames = len(gt_maps)
    preds = formats.read_predictions(root / "predictions.jsonl", w, h)
    pred_sets = formats.group_predictions(preds, w, h, list(range(frames)))
    fwd, bwd, disp, bounds, cams = [], [], [], [], []
    for k in range(frames - 1):
        fwd.append(formats.read_flow_file(root / "flow" / f"fwd_{k:04d}.flo"))
        bwd.append(formats.read_flow_file(root / "flow" / f"bwd_{k:04d}.flo"))
    for k in range(frames):
        disp.append(formats.read_flow_file(root / "fields" / f"disp_{k:04d}.flo"))
        bounds.append(_read_boundary(root / "fields" / f"boundary_{k:04d}.camb"))
        cams.append(formats.read_cam_file(root / "cams" / f"cams_{k:04d}.camb"))
    # a stand-in spec: geometry comes from the files, not from object models
    spec = SceneSpec(w, h, frames, ())
    return Scene(spec, gt_maps, gt_tids, pred_sets, fwd, bwd, disp, bounds, cams)


def cmd_pipeline(args, cfg: dict, out: Path) -> None:
    run_pipeline(cfg, out, jobs=args.jobs, overlay=args.overlay)


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskflow",
        description="Temporally consistent pseudo-labels for video instance "
        "segmentation: seeding, matching, transfer and metrics.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON config file")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--overlay", action="store_true", help="emit PNG overlays")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic dataset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fcam", parents=[common], help="amplify score maps and emit seeds")
    p.add_argument("--cams", required=True, help=".camb file or directory")
    p.add_argument("--flows", required=True, help=".flo file or directory")
    p.set_defaults(func=cmd_fcam)

    p = sub.add_parser("affinity", parents=[common], help="pixel-pair affinities")
    p.add_argument("--boundary", required=True, help="one-map .camb boundary file")
    p.add_argument("--pairs", required=True, help="JSON with a 'pairs' list")
    p.set_defaults(func=cmd_affinity)

    p = sub.add_parser("fboundary-loss", parents=[common],
                       help="flow-gradient boundary loss")
    p.add_argument("--flow", required=True)
    p.add_argument("--boundary", required=True)
    p.add_argument("--per-pair", action="store_true", dest="per_pair",
                   help="include every pair contribution in the report")
    p.set_defaults(func=cmd_fboundary_loss)

    p = sub.add_parser("warp", parents=[common], help="warp predictions with a flow")
    p.add_argument("--predictions", required=True)
    p.add_argument("--flow", required=True,
                   help="flow field measured opposite to the warp direction")
    p.add_argument("--flow-direction", required=True, choices=(T_TO_T2, T2_TO_T),
                   dest="flow_direction")
    p.add_argument("--warp-direction", required=True, choices=(T_TO_T2, T2_TO_T),
                   dest="warp_direction")
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("maskconsist", parents=[common],
                       help="transfer stable labels within one frame pair")
    p.add_argument("--preds-t", required=True, dest="preds_t")
    p.add_argument("--pseudo-t", required=True, dest="pseudo_t")
    p.add_argument("--preds-t2", required=True, dest="preds_t2")
    p.add_argument("--pseudo-t2", required=True, dest="pseudo_t2")
    p.add_argument("--flow-fwd", required=True, dest="flow_fwd",
                   help="flow measured from t to t2")
    p.add_argument("--flow-bwd", required=True, dest="flow_bwd",
                   help="flow measured from t2 to t")
    p.set_defaults(func=cmd_maskconsist)

    p = sub.add_parser("track", parents=[common], help="greedy flow tracking")
    p.add_argument("--predictions", required=True)
    p.add_argument("--flows", required=True, help="directory with bwd_*.flo per gap")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("metrics", parents=[common], help="frame and video metrics")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gt", required=True, help="directory with labels_*.png")
    p.add_argument("--flows", required=True, help="directory with bwd_*.flo per gap")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("pipeline", parents=[common], help="end-to-end run")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides={"seed": args.seed})
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, cfg, out)
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    except (InputError, OSError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"input error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
