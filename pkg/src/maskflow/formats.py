"""Bit-exact file formats used by the command-line tools.

* Flow and displacement fields: Middlebury .flo (little-endian float32 magic
  202021.25, int32 width, int32 height, then row-major interleaved (u, v)
  float32 pairs).
* Score-map stacks: raw binary, ASCII magic "CAMB", uint32 version 1, uint32
  C, H, W, then C*H*W little-endian float32; a same-stem .json sidecar lists
  the category ids in map order.
* Instance label rasters: 16-bit single-channel PNG, pixel value = instance
  id with 0 background; a same-stem .json sidecar maps each id to
  {category, score} and optionally a persistent "track" identity.
* Predictions: JSON lines, one object per line with keys
  frame / category / score / bbox [x0, y0, x1, y1] / rle (row-major
  run-length counts starting with the zero run).

Readers validate eagerly and report the byte offset of the first problem;
writers emit canonical bytes (sorted JSON keys, fixed dtypes) so identical
data always produces identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
from PIL import Image

from .core import (
    BBox,
    InstanceLabelMap,
    Prediction,
    PredictionSet,
    rle_decode,
    rle_encode,
)
from .seeding import ScoreMapStack

FLO_MAGIC = 202021.25
CAM_MAGIC = b"CAMB"
_MAX_DIM = 1 << 20


class InputError(Exception):
    """A malformed or inconsistent input file."""


def _read_exact(f, n: int, offset: int, path, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise InputError(f"{path}: truncated {what} at byte {offset}")
    return data


def write_flow_file(path, flow) -> None:
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must have shape (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(flow.astype("<f4").tobytes())


def read_flow_file(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        magic = struct.unpack("<f", _read_exact(f, 4, 0, path, "magic"))[0]
        if magic != np.float32(FLO_MAGIC):
            raise InputError(f"{path}: bad flow magic at byte 0")
        w, h = struct.unpack("<ii", _read_exact(f, 8, 4, path, "dimensions"))
        if not (0 < w < _MAX_DIM and 0 < h < _MAX_DIM):
            raise InputError(f"{path}: implausible dimensions {w}x{h} at byte 4")
        payload = _read_exact(f, 8 * w * h, 12, path, "flow payload")
        if f.read(1):
            raise InputError(f"{path}: trailing bytes at byte {12 + 8 * w * h}")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, 2)
    return data.astype(np.float64)


def write_cam_file(path, stack: ScoreMapStack) -> None:
    path = Path(path)
    c = len(stack.categories)
    with open(path, "wb") as f:
        f.write(CAM_MAGIC)
        f.write(struct.pack("<IIII", 1, c, stack.height, stack.width))
        f.write(stack.scores.astype("<f4").tobytes())
    write_json(path.with_suffix(".json"), {"categories": list(stack.categories)})


def read_cam_file(path) -> ScoreMapStack:
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, 0, path, "magic")
        if magic != CAM_MAGIC:
            raise InputError(f"{path}: bad score-stack magic at byte 0")
        version, c, h, w = struct.unpack("<IIII", _read_exact(f, 16, 4, path, "header"))
        if version != 1:
            raise InputError(f"{path}: unsupported version {version} at byte 4")
        if not (0 < c < 4096 and 0 < h < _MAX_DIM and 0 < w < _MAX_DIM):
            raise InputError(f"{path}: implausible shape {c}x{h}x{w} at byte 8")
        payload = _read_exact(f, 4 * c * h * w, 20, path, "score payload")
        if f.read(1):
            raise InputError(f"{path}: trailing bytes at byte {20 + 4 * c * h * w}")
    scores = np.frombuffer(payload, dtype="<f4").reshape(c, h, w).astype(np.float64)
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise InputError(f"{sidecar}: missing category sidecar")
    cats = read_json(sidecar).get("categories")
    if not isinstance(cats, list) or len(cats) != c:
        raise InputError(f"{sidecar}: categories must list {c} ids")
    try:
        return ScoreMapStack(tuple(int(x) for x in cats), scores)
    except (TypeError, ValueError) as e:
        raise InputError(f"{path}: {e}") from e


def write_label_map(path, label_map: InstanceLabelMap, scores: Dict[int, float] = None,
                    track_ids: Dict[int, int] = None) -> None:
    path = Path(path)
    labels = label_map.labels
    if labels.max(initial=0) > 0xFFFF:
        raise ValueError("more than 65535 instances cannot be stored as 16-bit PNG")
    img = Image.fromarray(labels.astype(np.uint16))
    img.save(path, format="PNG")
    instances = {}
    for i, cat in sorted(label_map.categories.items()):
        entry = {"category": cat, "score": 1.0 if scores is None else float(scores[i])}
        if track_ids is not None:
            entry["track"] = int(track_ids[i])
        instances[str(i)] = entry
    write_json(path.with_suffix(".json"), {"instances": instances})


def read_label_map(path):
    """Returns (label_map, scores, track_ids); track ids default to the
    label ids when the sidecar does not carry them."""
    path = Path(path)
    try:
        arr = np.asarray(Image.open(path), dtype=np.int64)
    except Exception as e:
        raise InputError(f"{path}: unreadable PNG ({e})") from e
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise InputError(f"{sidecar}: missing instance sidecar")
    meta = read_json(sidecar).get("instances", {})
    categories = {}
    scores = {}
    track_ids = {}
    for key, entry in meta.items():
        i = int(key)
        categories[i] = int(entry["category"])
        scores[i] = float(entry.get("score", 1.0))
        track_ids[i] = int(entry.get("track", i))
    try:
        lmap = InstanceLabelMap(arr.astype(np.int32), categories)
    except ValueError as e:
        raise InputError(f"{path}: {e}") from e
    return lmap, scores, track_ids


def prediction_to_record(p: Prediction) -> dict:
    return {
        "frame": p.frame,
        "category": p.category,
        "score": p.score,
        "bbox": p.box.as_list(),
        "rle": rle_encode(p.mask),
    }


def prediction_from_record(rec: dict, width: int, height: int) -> Prediction:
    mask = rle_decode(rec["rle"], width, height)
    pred = Prediction(mask, int(rec["category"]), float(rec["score"]), int(rec["frame"]))
    stated = BBox(*[int(v) for v in rec["bbox"]])
    if stated != pred.box:
        raise ValueError(f"stated bbox {stated.as_list()} is not the mask's tight box")
    return pred


def write_predictions(path, sets: Sequence[PredictionSet]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ps in sorted(sets, key=lambda s: s.frame):
            for p in ps:
                f.write(json.dumps(prediction_to_record(p), sort_keys=True))
                f.write("\n")


def read_predictions(path, width: int, height: int) -> List[Prediction]:
    """All predictions in file order; raster dims come from a co-input (flow
    file, label PNG or config) since RLE alone does not carry them."""
    path = Path(path)
    preds = []
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                preds.append(prediction_from_record(rec, width, height))
            except (KeyError, TypeError, ValueError) as e:
                raise InputError(f"{path}:{ln}: bad prediction record ({e})") from e
    return preds


def group_predictions(
    preds: Sequence[Prediction],
    width: int,
    height: int,
    frames: Sequence[int],
    provenance: str = "model",
) -> List[PredictionSet]:
    """Bucket flat predictions into one PredictionSet per requested frame;
    frames without predictions yield empty sets."""
    by_frame: Dict[int, list] = {int(f): [] for f in frames}
    for p in preds:
        if p.frame not in by_frame:
            raise InputError(f"prediction frame {p.frame} outside frames {list(frames)}")
        by_frame[p.frame].append(p)
    return [
        PredictionSet(f, width, height, tuple(by_frame[f]), provenance) for f in frames
    ]


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def read_json(path):
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON at byte {e.pos}") from e
    except OSError as e:
        raise InputError(f"{path}: {e}") from e
