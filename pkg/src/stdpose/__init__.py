"""Video pose estimation on sparsely-labeled synthetic videos: temporal
feature fusion, temporal keypoint synthesis, dynamic-aware masking,
cross-attention aggregation, a mutual-information objective, and the pose
propagation / pseudo-label protocols around them."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    ABSENT,
    OCCLUDED,
    VISIBLE,
    BBox,
    FrameTriplet,
    HeatmapStack,
    LabelSchedule,
    Pose,
    SkeletonSpec,
    build_label_schedule,
    default_skeleton,
    expand_bbox,
    flip_pose,
)
