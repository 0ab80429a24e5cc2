from .bvh import BVHError, parse_bvh, read_bvh, write_bvh
from .clip import (
    MotionClip,
    Skeleton,
    SkeletonError,
    check_same_skeleton,
    mirror_clip,
    resample_clip,
    resample_sequence,
    resample_times,
    sample_frames,
)
from .features import (
    NormalizationStats,
    PoseLayout,
    compute_target_facing,
    extract_pose_states,
    extract_style_features,
    facing_in_root_space,
    fit_normalization,
    pose_states_to_clip,
)

__all__ = [
    "BVHError", "parse_bvh", "read_bvh", "write_bvh",
    "MotionClip", "Skeleton", "SkeletonError", "check_same_skeleton", "mirror_clip",
    "resample_clip", "resample_sequence", "resample_times", "sample_frames",
    "NormalizationStats", "PoseLayout", "compute_target_facing", "extract_pose_states",
    "extract_style_features", "facing_in_root_space", "fit_normalization", "pose_states_to_clip",
]
