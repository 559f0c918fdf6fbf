"""Pipeline configuration: one JSON document, validated before any work.

Command-line flags override individual keys; the effective configuration is
echoed into every output directory (without the output path itself, so two
runs of the same config into different directories produce byte-identical
trees).
"""

from __future__ import annotations

import copy
from typing import Optional

from .consist import MaskConsistConfig
from .formats import read_json
from .seeding import AmplifyConfig, NeighborhoodSpec
from .synth import CorruptionSpec, ObjectSpec, SceneSpec


class ConfigError(Exception):
    """An invalid configuration value."""


DEFAULTS = {
    "seed": 0,
    "fg_threshold": 0.3,
    "amplification": 2.0,
    "flow_percentile": 0.8,
    "reg_weight": 2.0,
    "neighborhood_radius": 5,
    "walk_steps": 8,
    "walk_beta": 1.0,
    "delta": 5,
    "box_iou_threshold": 0.5,
    "iom_threshold": 0.5,
    "top_k": 100,
    "edge_overlap": "mask",
    "track_iou_threshold": 0.3,
    "pseudo_source": "corrupted_gt",
    "corruption": {
        "drop_rate": 0.0,
        "erode_rate": 0.0,
        "erode_keep": 0.5,
        "erode_jitter": 0.0,
    },
    "scene": None,
    "data_dir": None,
}

_SCENE_KEYS = {
    "width", "height", "frames", "objects", "seed",
    "cam_blur", "cam_truncate", "allow_clip",
}
_OBJECT_KEYS = {
    "shape", "category", "size", "position", "velocity",
    "z0", "z_gradient", "focal",
}


def load_config(path, overrides: Optional[dict] = None) -> dict:
    """Read a config file, layer it over the defaults, apply overrides, and
    validate the result."""
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    cfg = copy.deepcopy(DEFAULTS)
    for key, val in raw.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "corruption":
            if not isinstance(val, dict):
                raise ConfigError("corruption must be an object")
            for ck in val:
                if ck not in DEFAULTS["corruption"]:
                    raise ConfigError(f"unknown corruption key {ck!r}")
            cfg["corruption"].update(val)
        else:
            cfg[key] = val
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg[key] = val
    validate_config(cfg)
    return cfg


def _need(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate_config(cfg: dict) -> None:
    _need(isinstance(cfg.get("seed"), int), "seed must be an integer")
    _need(0.0 <= cfg["fg_threshold"] < 1.0, "fg_threshold must be in [0, 1)")
    _need(cfg["amplification"] > 0, "amplification must be > 0")
    _need(0.0 < cfg["flow_percentile"] < 1.0, "flow_percentile must be in (0, 1)")
    _need(cfg["reg_weight"] >= 0, "reg_weight must be >= 0")
    _need(int(cfg["neighborhood_radius"]) >= 1, "neighborhood_radius must be >= 1")
    _need(int(cfg["walk_steps"]) >= 0, "walk_steps must be >= 0")
    _need(cfg["walk_beta"] >= 0, "walk_beta must be >= 0")
    _need(int(cfg["delta"]) >= 1, "delta must be >= 1")
    _need(0.0 < cfg["box_iou_threshold"] <= 1.0, "box_iou_threshold must be in (0, 1]")
    _need(0.0 < cfg["iom_threshold"] <= 1.0, "iom_threshold must be in (0, 1]")
    _need(int(cfg["top_k"]) >= 1, "top_k must be >= 1")
    _need(cfg["edge_overlap"] in ("mask", "box"), "edge_overlap must be mask or box")
    _need(0.0 < cfg["track_iou_threshold"] <= 1.0, "track_iou_threshold must be in (0, 1]")
    _need(
        cfg["pseudo_source"] in ("corrupted_gt", "cam_seeds"),
        "pseudo_source must be corrupted_gt or cam_seeds",
    )
    corr = cfg["corruption"]
    _need(0.0 <= corr["drop_rate"] < 1.0, "corruption.drop_rate must be in [0, 1)")
    _need(0.0 <= corr["erode_rate"] < 1.0, "corruption.erode_rate must be in [0, 1)")
    _need(
        corr["drop_rate"] + corr["erode_rate"] < 1.0,
        "corruption drop_rate + erode_rate must stay below 1",
    )
    _need(0.0 < corr["erode_keep"] < 1.0, "corruption.erode_keep must be in (0, 1)")
    _need(corr["erode_jitter"] >= 0, "corruption.erode_jitter must be >= 0")
    if cfg.get("scene") is not None:
        _validate_scene(cfg["scene"])
    if cfg.get("data_dir") is not None:
        _need(isinstance(cfg["data_dir"], str), "data_dir must be a path string")


def _validate_scene(scene: dict) -> None:
    _need(isinstance(scene, dict), "scene must be an object")
    for key in scene:
        _need(key in _SCENE_KEYS, f"unknown scene key {key!r}")
    for key in ("width", "height", "frames", "objects"):
        _need(key in scene, f"scene.{key} is required")
    _need(isinstance(scene["objects"], list) and scene["objects"],
          "scene.objects must be a nonempty list")
    for k, obj in enumerate(scene["objects"]):
        _need(isinstance(obj, dict), f"scene.objects[{k}] must be an object")
        for key in obj:
            _need(key in _OBJECT_KEYS, f"unknown object key {key!r}")
        for key in ("shape", "category", "size", "position"):
            _need(key in obj, f"scene.objects[{k}].{key} is required")
    try:
        scene_spec(scene)
    except ValueError as e:
        raise ConfigError(f"scene: {e}") from e


def scene_spec(scene: dict) -> SceneSpec:
    objects = tuple(
        ObjectSpec(
            shape=o["shape"],
            category=int(o["category"]),
            size=tuple(float(v) for v in o["size"]),
            position=tuple(float(v) for v in o["position"]),
            velocity=tuple(float(v) for v in o.get("velocity", (0.0, 0.0))),
            z0=float(o.get("z0", 100.0)),
            z_gradient=float(o.get("z_gradient", 0.0)),
            focal=float(o.get("focal", 100.0)),
        )
        for o in scene["objects"]
    )
    return SceneSpec(
        width=int(scene["width"]),
        height=int(scene["height"]),
        frames=int(scene["frames"]),
        objects=objects,
        seed=int(scene.get("seed", 0)),
        cam_blur=float(scene.get("cam_blur", 2.0)),
        cam_truncate=float(scene.get("cam_truncate", 0.0)),
        allow_clip=bool(scene.get("allow_clip", False)),
    )


def amplify_config(cfg: dict) -> AmplifyConfig:
    return AmplifyConfig(gain=float(cfg["amplification"]),
                         percentile=float(cfg["flow_percentile"]))


def neighborhood(cfg: dict) -> NeighborhoodSpec:
    return NeighborhoodSpec(radius=int(cfg["neighborhood_radius"]))


def consist_config(cfg: dict) -> MaskConsistConfig:
    return MaskConsistConfig(
        delta=int(cfg["delta"]),
        box_iou_threshold=float(cfg["box_iou_threshold"]),
        iom_threshold=float(cfg["iom_threshold"]),
        top_k=int(cfg["top_k"]),
        edge_overlap=cfg["edge_overlap"],
    )


def corruption_spec(cfg: dict) -> CorruptionSpec:
    corr = cfg["corruption"]
    return CorruptionSpec(
        drop_rate=float(corr["drop_rate"]),
        erode_rate=float(corr["erode_rate"]),
        erode_keep=float(corr["erode_keep"]),
        erode_jitter=float(corr["erode_jitter"]),
        seed=int(cfg["seed"]),
    )


def echo_config(cfg: dict) -> dict:
    """The effective config as echoed into output directories."""
    return copy.deepcopy(cfg)
