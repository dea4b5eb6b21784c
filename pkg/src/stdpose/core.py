"""Shared domain types: skeleton description, poses, boxes, label schedules,
frame triplets and heatmap stacks, plus the geometry helpers every other
module builds on."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

# Per-joint visibility states.
ABSENT = 0
OCCLUDED = 1
VISIBLE = 2

HEATMAP_ORIGINS = ("predicted", "rendered", "residual", "merged", "masked")

_DEFAULT_SKELETON_FILE = Path(__file__).parent / "data" / "skeleton15.json"


@dataclass(frozen=True)
class SkeletonSpec:
    """Joint layout of the articulated figure.

    ``flip_pairs`` lists (left, right) joint index pairs swapped under a
    horizontal mirror; ``bones`` is a connected tree of (parent, child)
    joint indices used for rendering and augmentation.
    """

    joint_names: tuple[str, ...]
    flip_pairs: tuple[tuple[int, int], ...]
    bones: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "flip_pairs", tuple(map(tuple, self.flip_pairs)))
        object.__setattr__(self, "bones", tuple(map(tuple, self.bones)))
        n = self.joint_count
        perm = self.flip_permutation()
        for idx in [i for pair in self.flip_pairs for i in pair]:
            if not 0 <= idx < n:
                raise ValueError(f"flip pair index {idx} out of range for {n} joints")
        if not np.array_equal(perm[perm], np.arange(n)):
            raise ValueError("flip_pairs must be an involution")
        for a, b in self.bones:
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"bone ({a}, {b}) out of range for {n} joints")
        if len(self.bones) != n - 1 or not self._connected():
            raise ValueError("bones must form a connected tree over all joints")

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    def flip_permutation(self) -> np.ndarray:
        perm = np.arange(self.joint_count)
        for a, b in self.flip_pairs:
            perm[a], perm[b] = b, a
        return perm

    def _connected(self) -> bool:
        parent = list(range(self.joint_count))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for a, b in self.bones:
            parent[find(a)] = find(b)
        return len({find(i) for i in range(self.joint_count)}) == 1

    def to_json(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "flip_pairs": [list(p) for p in self.flip_pairs],
            "bones": [list(b) for b in self.bones],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SkeletonSpec":
        return cls(
            joint_names=tuple(doc["joint_names"]),
            flip_pairs=tuple((int(a), int(b)) for a, b in doc["flip_pairs"]),
            bones=tuple((int(a), int(b)) for a, b in doc["bones"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "SkeletonSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


def default_skeleton() -> SkeletonSpec:
    """The 15-joint skeleton shipped with the package."""
    return SkeletonSpec.load(_DEFAULT_SKELETON_FILE)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates; (x, y) is the top-left corner."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)


@dataclass
class Pose:
    """Per-joint (x, y) coordinates plus a visibility flag per joint."""

    coords: np.ndarray  # (J, 2) float
    visibility: np.ndarray  # (J,) int, values in {ABSENT, OCCLUDED, VISIBLE}

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        if self.visibility is None:
            self.visibility = np.full(len(self.coords), VISIBLE, dtype=np.int8)
        self.visibility = np.asarray(self.visibility, dtype=np.int8).reshape(-1)
        if len(self.visibility) != len(self.coords):
            raise ValueError("visibility length must match joint count")

    @property
    def joint_count(self) -> int:
        return len(self.coords)

    def copy(self) -> "Pose":
        return Pose(self.coords.copy(), self.visibility.copy())

    def to_json(self) -> dict:
        return {
            "coords": self.coords.tolist(),
            "visibility": self.visibility.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Pose":
        return cls(np.asarray(doc["coords"]), np.asarray(doc["visibility"]))


@dataclass(frozen=True)
class LabelSchedule:
    """Which frame indices of a video carry manual annotations (stride T)."""

    num_frames: int
    interval_T: int
    labeled_indices: tuple[int, ...]

    @property
    def ratio(self) -> float:
        return len(self.labeled_indices) / self.num_frames

    def is_labeled(self, index: int) -> bool:
        return index in self._labeled_set

    @property
    def _labeled_set(self) -> frozenset:
        return frozenset(self.labeled_indices)

    def nearest_labeled(self, index: int) -> tuple[int, int]:
        """Nearest labeled indices (left <= index, right >= index).

        If a side has no labeled frame, the other side's nearest labeled
        frame is duplicated.
        """
        left = [i for i in self.labeled_indices if i <= index]
        right = [i for i in self.labeled_indices if i >= index]
        if not left and not right:
            raise RuntimeError("schedule has no labeled frames")
        li = max(left) if left else min(right)
        ri = min(right) if right else max(left)
        return li, ri


def build_label_schedule(num_frames: int, interval_T: int) -> LabelSchedule:
    """Label every ``interval_T``-th frame starting at frame 0."""
    if num_frames < 1:
        raise ValueError(f"num_frames must be >= 1, got {num_frames}")
    if interval_T < 1:
        raise ValueError(f"interval_T must be >= 1, got {interval_T}")
    labeled = tuple(range(0, num_frames, interval_T))
    return LabelSchedule(num_frames=num_frames, interval_T=interval_T, labeled_indices=labeled)


@dataclass
class FrameTriplet:
    """A key frame plus its two auxiliary frames, cropped identically.

    Images are float32 rasters of shape (3, H, W) in [0, 1]. Auxiliary
    annotations (crop coordinates) are attached only when the triplet was
    built for propagation inference. ``crop_affine`` maps original image
    coordinates to crop coordinates.
    """

    key_image: np.ndarray
    left_image: np.ndarray
    right_image: np.ndarray
    key_index: int
    left_index: int
    right_index: int
    left_annotation: Optional[Pose] = None
    right_annotation: Optional[Pose] = None
    crop_affine: Optional[np.ndarray] = None  # (2, 3)

    def __post_init__(self):
        if not (self.left_index <= self.key_index <= self.right_index):
            raise ValueError("frame indices must satisfy left <= key <= right")
        if not (self.key_image.shape == self.left_image.shape == self.right_image.shape):
            raise ValueError("all three images must share one shape")


@dataclass
class HeatmapStack:
    """Per-joint 2-D response maps of shape (J, H', W')."""

    values: np.ndarray
    origin: str = "predicted"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValueError(f"heatmap stack must be 3-D, got shape {self.values.shape}")
        if self.origin not in HEATMAP_ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")
        if not np.isfinite(self.values).all():
            raise ValueError("heatmap stack contains non-finite values")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


def expand_bbox(box: BBox, factor: float = 1.25) -> BBox:
    """Scale a box about its center; the center is preserved exactly."""
    if factor < 1:
        raise ValueError(f"expansion factor must be >= 1, got {factor}")
    cx, cy = box.center
    w, h = box.w * factor, box.h * factor
    return BBox(x=cx - w / 2.0, y=cy - h / 2.0, w=w, h=h)


def flip_pose(pose: Pose, spec: SkeletonSpec, image_width: float) -> Pose:
    """Mirror a pose about the vertical axis x = width / 2 and swap
    left/right joints; involutive."""
    perm = spec.flip_permutation()
    coords = pose.coords[perm].copy()
    coords[:, 0] = image_width - coords[:, 0]
    return Pose(coords, pose.visibility[perm].copy())
