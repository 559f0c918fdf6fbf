"""Deterministic synthetic scenes with analytically exact ground truth.

Rigid rectangle/ellipse objects move parallel to the image plane under a
pinhole camera: an object at depth Z moving with world velocity (VX, VY)
produces image flow (focal * VX / Z, focal * VY / Z) on its pixels. Depth is
either constant or a linear ramp in the image x coordinate,
Z(x) = z0 + z_gradient * x, in which case flow varies across the object and
its spatial gradient is the closed form -focal * VX * z_gradient / Z(x)^2.

The renderer emits, per frame: ground-truth instance label maps, perfect
predictions, forward and backward flow, centroid displacement fields,
boundary maps, and blurred center-peaked score maps that imitate the partial
response of a classification network. Everything is a pure function of the
scene spec, so re-rendering is bit-identical.

The oracle's validity envelope is small motion (a few pixels per frame) and,
for ramp depth, rectangles with VY = 0: those shapes stay exact rectangles
under the depth-dependent motion, which keeps the cross-frame mask/flow
consistency analytic rather than approximate. Integer per-frame motion warps
masks exactly; fractional motion re-rasterizes every mask edge and can move
it by one pixel per frame, so cross-frame warp consistency at tight
tolerances additionally needs shapes whose boundary is small relative to
their area.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage

from .core import InstanceLabelMap, MODEL, Prediction, PredictionSet
from .seeding import ScoreMapStack


@dataclass(frozen=True)
class ObjectSpec:
    """One rigid object: shape, category, geometry and motion."""

    shape: str
    category: int
    size: Tuple[float, float]
    position: Tuple[float, float]
    velocity: Tuple[float, float] = (0.0, 0.0)
    z0: float = 100.0
    z_gradient: float = 0.0
    focal: float = 100.0

    def __post_init__(self):
        if self.shape not in ("rectangle", "ellipse"):
            raise ValueError(f"shape must be rectangle or ellipse, got {self.shape!r}")
        if int(self.category) < 1:
            raise ValueError("object category must be >= 1")
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise ValueError("object size must be positive")
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        if self.z0 <= 0:
            raise ValueError("object depth must be positive")
        if self.z_gradient != 0.0:
            if self.shape != "rectangle":
                raise ValueError("ramp depth supports rectangles only")
            if self.velocity[1] != 0.0:
                raise ValueError("ramp depth requires zero vertical velocity")


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    frames: int
    objects: tuple
    seed: int = 0
    cam_blur: float = 2.0
    cam_truncate: float = 0.0
    allow_clip: bool = False

    def __post_init__(self):
        if self.width < 4 or self.height < 4:
            raise ValueError("scene raster must be at least 4x4")
        if self.frames < 1:
            raise ValueError("scene needs at least one frame")
        object.__setattr__(self, "objects", tuple(self.objects))
        if not (0.0 <= self.cam_truncate < 1.0):
            raise ValueError("cam_truncate must be in [0, 1)")


@dataclass(frozen=True)
class CorruptionSpec:
    """Deterministic pseudo-label damage: ``drop_rate`` of all object-frames
    lose their label entirely, ``erode_rate`` keep only a centered core of
    roughly ``erode_keep`` of their area (jittered by ``erode_jitter``)."""

    drop_rate: float = 0.0
    erode_rate: float = 0.0
    erode_keep: float = 0.5
    erode_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("drop_rate", "erode_rate"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ValueError(f"{name} must be in [0, 1), got {v}")
        if self.drop_rate + self.erode_rate >= 1.0 + 1e-12:
            raise ValueError("drop_rate + erode_rate must stay below 1")
        if not (0.0 < self.erode_keep < 1.0):
            raise ValueError("erode_keep must be in (0, 1)")
        if self.erode_jitter < 0:
            raise ValueError("erode_jitter must be >= 0")


@dataclass(frozen=True)
class Scene:
    """Rendered oracle data; lists are indexed by frame (flows by gap)."""

    spec: SceneSpec
    gt_labels: list
    gt_track_ids: list
    predictions: list
    flows_fwd: list
    flows_bwd: list
    displacements: list
    boundaries: list
    cams: list


class _ObjectState:
    """Per-frame extents of one object, advanced by its own image motion."""

    def __init__(self, obj: ObjectSpec):
        self.obj = obj
        w, h = obj.size
        cx, cy = obj.position
        self.x0 = cx - w / 2.0
        self.x1 = cx + w / 2.0
        self.y0 = cy - h / 2.0
        self.y1 = cy + h / 2.0

    def _speed_x(self, x: float) -> float:
        o = self.obj
        return o.focal * o.velocity[0] / (o.z0 + o.z_gradient * x)

    def _speed_y(self, x: float) -> float:
        o = self.obj
        return o.focal * o.velocity[1] / (o.z0 + o.z_gradient * x)

    def step(self) -> None:
        # the x extent endpoints follow the same motion map as every material
        # point; with ramp depth this keeps rectangles exactly rectangular
        x0n = self.x0 + self._speed_x(self.x0)
        x1n = self.x1 + self._speed_x(self.x1)
        dy = self._speed_y(self.x0)
        self.x0, self.x1 = x0n, x1n
        self.y0 += dy
        self.y1 += dy

    def mask(self, width: int, height: int) -> np.ndarray:
        ys, xs = np.mgrid[0:height, 0:width]
        px = xs + 0.5
        py = ys + 0.5
        if self.obj.shape == "rectangle":
            return (px >= self.x0) & (px <= self.x1) & (py >= self.y0) & (py <= self.y1)
        cx = (self.x0 + self.x1) / 2.0
        cy = (self.y0 + self.y1) / 2.0
        rx = (self.x1 - self.x0) / 2.0
        ry = (self.y1 - self.y0) / 2.0
        return ((px - cx) / rx) ** 2 + ((py - cy) / ry) ** 2 <= 1.0

    def depth_at(self, px: np.ndarray) -> np.ndarray:
        return self.obj.z0 + self.obj.z_gradient * px

    def inside_raster(self, width: int, height: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height


def _invert_ramp_step(x_new: np.ndarray, c: float, z0: float, g: float) -> np.ndarray:
    """Solve x + c / (z0 + g*x) = x_new for x by fixed-point iteration.

    The map is a contraction in the oracle's small-motion envelope, so a few
    dozen iterations reach machine precision.
    """
    x = x_new - c / (z0 + g * x_new)
    for _ in range(40):
        x = x_new - c / (z0 + g * x)
    return x


def render_scene(spec: SceneSpec) -> Scene:
    """Render every per-frame artifact of the scene. See the module doc for
    the exact flow model; all outputs are deterministic in the spec."""
    w, h = spec.width, spec.height
    states = [_ObjectState(o) for o in spec.objects]
    for o in spec.objects:
        zmin = min(o.z0, o.z0 + o.z_gradient * w)
        if zmin <= 0:
            raise ValueError("depth must stay positive across the raster")

    gt_labels: List[InstanceLabelMap] = []
    gt_track_ids: List[Dict[int, int]] = []
    predictions: List[PredictionSet] = []
    flows_fwd: List[np.ndarray] = []
    flows_bwd: List[np.ndarray] = []
    displacements: List[np.ndarray] = []
    boundaries: List[np.ndarray] = []
    cams: List[ScoreMapStack] = []

    owner_per_frame: List[np.ndarray] = []
    states_per_frame: List[List[_ObjectState]] = []

    ys, xs = np.mgrid[0:h, 0:w]
    px = xs + 0.5

    for k in range(spec.frames):
        if k > 0:
            for st in states:
                st.step()
        if not spec.allow_clip:
            for i, st in enumerate(states):
                if not st.inside_raster(w, h):
                    raise ValueError(
                        f"object {i} leaves the raster at frame {k}; "
                        "set allow_clip to permit this"
                    )
        # nearest surface wins each pixel; earlier objects win exact depth ties
        owner = np.full((h, w), -1, dtype=np.int64)
        depth = np.full((h, w), np.inf)
        for i, st in enumerate(states):
            m = st.mask(w, h)
            d = st.depth_at(px)
            take = m & (d < depth)
            owner[take] = i
            depth[take] = d[take]
        owner_per_frame.append(owner)
        states_per_frame.append([_copy_state(st) for st in states])

        labels = np.zeros((h, w), dtype=np.int32)
        cats: Dict[int, int] = {}
        tids: Dict[int, int] = {}
        next_id = 1
        for i in range(len(states)):
            vis = owner == i
            if not vis.any():
                continue
            labels[vis] = next_id
            cats[next_id] = spec.objects[i].category
            tids[next_id] = i + 1
            next_id += 1
        lmap = InstanceLabelMap(labels, cats)
        gt_labels.append(lmap)
        gt_track_ids.append(tids)

        preds = [
            Prediction(lmap.mask_of(lab), cats[lab], 1.0, k) for lab in sorted(cats)
        ]
        predictions.append(PredictionSet(k, w, h, tuple(preds), MODEL))

        disp = np.zeros((h, w, 2))
        for lab in sorted(cats):
            vis = labels == lab
            vy, vx = np.nonzero(vis)
            disp[vis, 0] = vx.mean() - vx
            disp[vis, 1] = vy.mean() - vy
        displacements.append(disp)

        grad = ndimage.morphological_gradient(labels, size=(3, 3))
        boundaries.append((grad > 0).astype(np.float64))

        cams.append(_render_cams(spec, states, owner))

    # Flow fields are painted over each object's footprint on BOTH frames of
    # the gap: the extra strip (the area the object vacates or newly covers)
    # carries the same motion, so backward sampling of a mask reads outside
    # the object there instead of leaving a ghost copy at the old location.
    # The frame owning the field stays authoritative where objects disagree.
    for k in range(spec.frames - 1):
        owner_a = owner_per_frame[k]
        owner_b = owner_per_frame[k + 1]

        def forward_motion(st, at_px):
            z = st.depth_at(at_px)
            o = st.obj
            return o.focal * o.velocity[0] / z, o.focal * o.velocity[1] / z

        def backward_motion(st, at_px):
            o = st.obj
            c = o.focal * o.velocity[0]
            if o.z_gradient == 0.0:
                prev = at_px - c / o.z0
            else:
                prev = _invert_ramp_step(at_px, c, o.z0, o.z_gradient)
            return prev - at_px, -o.focal * o.velocity[1] / o.z0

        fwd = np.zeros((h, w, 2))
        for authoritative in (False, True):
            for i, st in enumerate(states_per_frame[k]):
                vis = (owner_a == i) if authoritative else \
                    ((owner_b == i) & (owner_a == -1))
                if not vis.any():
                    continue
                u, v = forward_motion(st, px[vis])
                fwd[vis, 0] = u
                fwd[vis, 1] = v
        flows_fwd.append(fwd)

        bwd = np.zeros((h, w, 2))
        for authoritative in (False, True):
            for i, st in enumerate(states_per_frame[k]):
                vis = (owner_b == i) if authoritative else \
                    ((owner_a == i) & (owner_b == -1))
                if not vis.any():
                    continue
                u, v = backward_motion(st, px[vis])
                bwd[vis, 0] = u
                bwd[vis, 1] = v
        flows_bwd.append(bwd)

    return Scene(
        spec,
        gt_labels,
        gt_track_ids,
        predictions,
        flows_fwd,
        flows_bwd,
        displacements,
        boundaries,
        cams,
    )


def _copy_state(st: _ObjectState) -> _ObjectState:
    dup = _ObjectState(st.obj)
    dup.x0, dup.x1, dup.y0, dup.y1 = st.x0, st.x1, st.y0, st.y1
    return dup


def _render_cams(spec: SceneSpec, states, owner: np.ndarray) -> ScoreMapStack:
    """Score maps imitating a classifier's response: the category mask,
    blurred, weighted by a bump peaked at each object's center so only the
    most discriminative region scores high; an optional truncation knob
    zeroes the weak tail to produce partial seeds."""
    h, w = owner.shape
    ys, xs = np.mgrid[0:h, 0:w]
    cats = sorted({o.category for o in spec.objects})
    maps = np.zeros((len(cats), h, w))
    for ci, cat in enumerate(cats):
        m = np.zeros((h, w))
        peak = np.zeros((h, w))
        for i, st in enumerate(states):
            if spec.objects[i].category != cat:
                continue
            m[owner == i] = 1.0
            cx = (st.x0 + st.x1) / 2.0
            cy = (st.y0 + st.y1) / 2.0
            sigma = max(st.x1 - st.x0, st.y1 - st.y0) / 2.0
            bump = np.exp(-(((xs + 0.5) - cx) ** 2 + ((ys + 0.5) - cy) ** 2) / (2 * sigma**2))
            peak = np.maximum(peak, bump)
        cam = ndimage.gaussian_filter(m, sigma=spec.cam_blur) * (0.25 + 0.75 * peak)
        if spec.cam_truncate > 0 and cam.max() > 0:
            cam[cam < spec.cam_truncate * cam.max()] = 0.0
        maps[ci] = cam
    return ScoreMapStack(tuple(cats), maps)


def _erode_to_fraction(mask: np.ndarray, keep: float) -> np.ndarray:
    """Shrink a mask from its boundary inward until only about ``keep`` of
    the original area is left; never returns an empty mask."""
    target = max(1, int(round(keep * np.count_nonzero(mask))))
    cur = mask
    while np.count_nonzero(cur) > target:
        nxt = ndimage.binary_erosion(cur)
        if not nxt.any():
            break
        cur = nxt
    return cur


def corrupt_labels(per_frame: List[PredictionSet], spec: CorruptionSpec):
    """Damage pseudo-labels reproducibly.

    All (frame, index) object-frames are permuted with the spec's seed; the
    first floor(drop_rate * N) are removed and the next floor(erode_rate * N)
    are center-eroded. Returns the damaged sets plus a manifest of
    ``{"frame", "index", "mode"}`` records sorted by (frame, index), where
    index refers to the original per-frame prediction order.
    """
    entries = [(k, i) for k, ps in enumerate(per_frame) for i in range(len(ps))]
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(len(entries))
    n_drop = int(np.floor(spec.drop_rate * len(entries)))
    n_erode = int(np.floor(spec.erode_rate * len(entries)))
    dropped = {tuple(entries[p]) for p in perm[:n_drop]}
    eroded = {tuple(entries[p]) for p in perm[n_drop : n_drop + n_erode]}

    keep_of = {}
    for key in sorted(eroded):
        jitter = rng.uniform(-spec.erode_jitter, spec.erode_jitter) if spec.erode_jitter else 0.0
        keep_of[key] = float(np.clip(spec.erode_keep + jitter, 0.05, 0.95))

    out = []
    manifest = []
    for k, ps in enumerate(per_frame):
        kept = []
        for i, p in enumerate(ps):
            if (k, i) in dropped:
                manifest.append({"frame": k, "index": i, "mode": "drop"})
                continue
            if (k, i) in eroded:
                manifest.append({"frame": k, "index": i, "mode": "erode"})
                core = _erode_to_fraction(p.mask, keep_of[(k, i)])
                kept.append(Prediction(core, p.category, p.score, p.frame))
            else:
                kept.append(p)
        out.append(ps.replace(kept))
    manifest.sort(key=lambda e: (e["frame"], e["index"]))
    return out, manifest
