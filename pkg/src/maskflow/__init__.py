"""maskflow: temporally consistent pseudo-labels for video instance
segmentation, built from optical-flow-aware seeding, cross-frame matching
and label transfer, with frame/video evaluation metrics and a synthetic
rigid-motion oracle for validation."""

from .core import (
    BBox,
    InstanceLabelMap,
    Prediction,
    PredictionSet,
    bbox_of_mask,
    box_iou,
    mask_iom,
    mask_iou,
    merge_predictions,
    predictions_from_labels,
    rle_decode,
    rle_encode,
)
from .seeding import (
    AmplifyConfig,
    NeighborhoodSpec,
    ScoreMapStack,
    amplify_cam,
    cam_seeds,
    flow_boundary_loss,
    flow_jacobian,
    flow_magnitude_percentile,
    group_by_displacement,
    line_affinity,
    normalize_scores,
    random_walk_refine,
)
from .warp import (
    SamplingField,
    compose_sampling,
    flow_to_sampling,
    warp_mask,
    warp_prediction,
    warp_values,
)
from .consist import (
    MaskConsistConfig,
    MatchGraph,
    MatchSet,
    build_match_graph,
    combine_labels,
    expand_predictions,
    hungarian_match,
    maskconsist_step,
    transfer_labels,
)
from .metrics import (
    MetricUndefinedError,
    Track,
    ap_frame,
    greedy_track,
    temporal_consistency,
    tracks_from_labels,
    video_ap,
    video_iou,
)
from .synth import CorruptionSpec, ObjectSpec, Scene, SceneSpec, corrupt_labels, render_scene

__version__ = "0.1.0"
