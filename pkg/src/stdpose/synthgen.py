"""Deterministic synthetic videos of a moving stick figure, with occluders
and motion blur, plus crop-triplet construction and the on-disk dataset
format.

A video is fully determined by its SceneConfig (including the seed): joint
trajectories are bounded smoothed random walks, bones/joints are drawn with
anti-aliased OpenCV primitives, occluder rectangles travel on their own
walks, and blurred frames average three sub-step renders.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from .core import (
    BBox,
    FrameTriplet,
    LabelSchedule,
    Pose,
    SkeletonSpec,
    default_skeleton,
    expand_bbox,
)

# Fraction of the shorter image side occupied by the figure, and walk bounds
# relative to person height. These fix the documented per-frame displacement
# bound (see max_joint_step).
PERSON_FRACTION = 0.45
CENTER_STEP = 0.06
LOCAL_AMPLITUDE = 0.07
LOCAL_STEP = 0.025
ANGLE_AMPLITUDE = 0.30
ANGLE_STEP = 0.02
SCALE_AMPLITUDE = 0.12
SCALE_STEP = 0.01
BLUR_SUBSTEP = 0.45
NOISE_SIGMA = 0.02  # of dynamic range

# Canonical 15-joint layout in units of person height, centered later.
# Order matches data/skeleton15.json.
_CANONICAL = np.array(
    [
        [0.00, 0.10],  # nose
        [0.00, 0.18],  # head_bottom
        [0.00, 0.00],  # head_top
        [0.14, 0.22],  # left_shoulder
        [-0.14, 0.22],  # right_shoulder
        [0.23, 0.38],  # left_elbow
        [-0.23, 0.38],  # right_elbow
        [0.26, 0.54],  # left_wrist
        [-0.26, 0.54],  # right_wrist
        [0.09, 0.52],  # left_hip
        [-0.09, 0.52],  # right_hip
        [0.11, 0.74],  # left_knee
        [-0.11, 0.74],  # right_knee
        [0.12, 0.96],  # left_ankle
        [-0.12, 0.96],  # right_ankle
    ]
)

# Left limbs warm, right limbs cool, spine neutral: keeps mirrored joints
# visually distinguishable so flips stay learnable.
_BONE_COLORS = [
    (230, 230, 230),  # head_bottom - nose
    (200, 200, 200),  # head_bottom - head_top
    (0, 80, 255),  # - left_shoulder
    (255, 120, 0),  # - right_shoulder
    (0, 160, 255),  # left upper arm
    (0, 230, 255),  # left forearm
    (255, 200, 0),  # right upper arm
    (255, 255, 0),  # right forearm
    (60, 40, 220),  # - left_hip
    (220, 60, 60),  # - right_hip
    (90, 90, 255),  # left thigh
    (160, 120, 255),  # left shin
    (255, 120, 120),  # right thigh
    (255, 160, 200),  # right shin
]
_JOINT_COLORS = [
    (250, 250, 250),
    (210, 210, 210),
    (180, 180, 180),
    (0, 100, 255),
    (255, 140, 0),
    (0, 180, 255),
    (255, 210, 0),
    (0, 255, 255),
    (255, 255, 80),
    (80, 60, 230),
    (230, 80, 80),
    (110, 110, 255),
    (255, 140, 140),
    (170, 140, 255),
    (255, 180, 220),
]


@dataclass(frozen=True)
class SceneConfig:
    num_frames: int = 30
    image_size: tuple[int, int] = (96, 96)  # (H, W)
    num_occluders: int = 2
    blur_probability: float = 0.2
    motion_smoothness: float = 4.0  # smoothing window in frames
    seed: int = 0

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValueError(f"num_frames must be >= 1, got {self.num_frames}")
        if not 0.0 <= self.blur_probability <= 1.0:
            raise ValueError(f"blur_probability must be in [0, 1], got {self.blur_probability}")
        if self.motion_smoothness <= 0:
            raise ValueError("motion_smoothness must be positive")


@dataclass
class SyntheticVideo:
    """Rendered frames with per-frame ground truth.

    Frames are uint8 rasters of shape (3, H, W); degradation_flags holds a
    frozenset per frame, subset of {"occluded", "blurred"}.
    """

    frames: list[np.ndarray]
    gt_poses: list[Pose]
    gt_boxes: list[BBox]
    degradation_flags: list[frozenset]

    def __post_init__(self):
        n = len(self.frames)
        if not (len(self.gt_poses) == len(self.gt_boxes) == len(self.degradation_flags) == n):
            raise ValueError("all per-frame lists must share one length")

    @property
    def num_frames(self) -> int:
        return len(self.frames)


def max_joint_step(config: SceneConfig) -> float:
    """Upper bound (px) on per-frame joint displacement for generate_video."""
    person_h = PERSON_FRACTION * min(config.image_size) * 1.1
    radius = 0.62 * person_h * (1 + SCALE_AMPLITUDE)
    bound = (
        CENTER_STEP * person_h
        + LOCAL_STEP * person_h * (1 + SCALE_AMPLITUDE)
        + ANGLE_STEP * radius
        + SCALE_STEP * radius
    )
    return bound * 1.05


def _bounded_walk(rng, n: int, shape: tuple, step_max: float, amplitude: float, window: float) -> np.ndarray:
    """Smoothed random walk clipped to [-amplitude, amplitude]; consecutive
    values never differ by more than step_max (clipping is 1-Lipschitz)."""
    if n == 1:
        return np.zeros((1,) + shape)
    steps = np.clip(rng.normal(0.0, step_max / 1.5, (n - 1,) + shape), -step_max, step_max)
    k = max(1, int(round(window)))
    if k > 1:
        kernel = np.ones(k) / k
        flat = steps.reshape(n - 1, -1)
        flat = np.stack([np.convolve(flat[:, i], kernel, mode="same") for i in range(flat.shape[1])], axis=1)
        steps = flat.reshape((n - 1,) + shape)
    path = np.concatenate([np.zeros((1,) + shape), np.cumsum(steps, axis=0)])
    return np.clip(path, -amplitude, amplitude)


def _lerp(path: np.ndarray, t: float) -> np.ndarray:
    t = float(np.clip(t, 0.0, len(path) - 1))
    i0 = int(np.floor(t))
    i1 = min(i0 + 1, len(path) - 1)
    a = t - i0
    return (1 - a) * path[i0] + a * path[i1]


class _Scene:
    """All trajectories of one video, queryable at fractional frame times."""

    def __init__(self, config: SceneConfig, skeleton: SkeletonSpec):
        h, w = config.image_size
        rng = np.random.default_rng(config.seed)
        self.skeleton = skeleton
        self.person_h = PERSON_FRACTION * min(h, w) * rng.uniform(0.9, 1.1)
        offsets = (_CANONICAL - _CANONICAL.mean(axis=0)) * self.person_h
        radius = np.linalg.norm(offsets, axis=1).max() * (1 + SCALE_AMPLITUDE + LOCAL_AMPLITUDE)
        margin = radius + 2.0
        if 2 * margin >= w or 2 * margin >= h:
            raise ValueError(
                f"image {config.image_size} too small to contain a skeleton of height {self.person_h:.1f}px"
            )
        n = config.num_frames
        win = config.motion_smoothness
        ph = self.person_h
        start = np.array([rng.uniform(margin, w - margin), rng.uniform(margin, h - margin)])
        wander = _bounded_walk(rng, n, (2,), CENTER_STEP * ph, max(w, h), win)
        self.center = np.clip(start + wander, [margin, margin], [w - margin, h - margin])
        self.angle = _bounded_walk(rng, n, (), ANGLE_STEP, ANGLE_AMPLITUDE, win)
        self.scale = 1.0 + _bounded_walk(rng, n, (), SCALE_STEP, SCALE_AMPLITUDE, win)
        self.local = _bounded_walk(rng, n, offsets.shape, LOCAL_STEP * ph, LOCAL_AMPLITUDE * ph, win)
        self.offsets = offsets
        self.background = rng.uniform(0.12, 0.35, 3)
        self.bone_width = max(1, int(round(ph / 16)))
        self.joint_radius = max(1, int(round(ph / 20)))
        occ_side = rng.uniform(0.20, 0.40, (config.num_occluders, 2)) * ph
        occ_start = rng.uniform([0, 0], [w, h], (config.num_occluders, 2))
        occ_wander = _bounded_walk(rng, n, (config.num_occluders, 2), 0.04 * ph, max(w, h), win)
        self.occ_centers = np.clip(occ_start + occ_wander, 0, [w, h])
        self.occ_sizes = occ_side
        self.occ_colors = rng.uniform(0.25, 0.75, (config.num_occluders, 3))
        self.blurred = rng.random(n) < config.blur_probability
        self.noise_rng = rng  # consumed once per frame, after geometry draws

    def pose_at(self, t: float) -> np.ndarray:
        c, a = _lerp(self.center, t), float(_lerp(self.angle, t))
        s, loc = float(_lerp(self.scale, t)), _lerp(self.local, t)
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        return c + (s * (self.offsets + loc)) @ rot.T

    def occluders_at(self, t: float) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        centers = _lerp(self.occ_centers, t)  # (num_occluders, 2)
        return [(centers[i], self.occ_sizes[i], self.occ_colors[i]) for i in range(len(self.occ_sizes))]


def _draw(scene: _Scene, config: SceneConfig, t: float) -> np.ndarray:
    h, w = config.image_size
    img = np.empty((h, w, 3), dtype=np.float32)
    img[:] = scene.background
    pose = scene.pose_at(t)
    shift = 4
    pts = np.round(pose * (1 << shift)).astype(np.int64)
    for (a, b), color in zip(scene.skeleton.bones, _BONE_COLORS):
        cv2.line(img, (int(pts[a, 0]), int(pts[a, 1])), (int(pts[b, 0]), int(pts[b, 1])),
                 tuple(float(c) / 255 for c in color),
                 scene.bone_width, lineType=cv2.LINE_AA, shift=shift)
    for j, color in enumerate(_JOINT_COLORS):
        cv2.circle(img, (int(pts[j, 0]), int(pts[j, 1])), scene.joint_radius << shift,
                   tuple(float(c) / 255 for c in color), -1, lineType=cv2.LINE_AA, shift=shift)
    for center, size, color in scene.occluders_at(t):
        x0, y0 = np.round(center - size / 2).astype(int)
        x1, y1 = np.round(center + size / 2).astype(int)
        cv2.rectangle(img, (int(x0), int(y0)), (int(x1), int(y1)), tuple(map(float, color)), -1)
    return img


def generate_video(config: SceneConfig, skeleton: Optional[SkeletonSpec] = None) -> SyntheticVideo:
    """Render one seeded video; identical configs yield byte-identical output."""
    skeleton = skeleton or default_skeleton()
    scene = _Scene(config, skeleton)
    frames, poses, boxes, flags = [], [], [], []
    for t in range(config.num_frames):
        if scene.blurred[t]:
            img = np.mean(
                [_draw(scene, config, t + d) for d in (-BLUR_SUBSTEP, 0.0, BLUR_SUBSTEP)], axis=0
            )
        else:
            img = _draw(scene, config, t)
        noise = scene.noise_rng.normal(0.0, NOISE_SIGMA, img.shape)
        img = np.clip(img + noise, 0.0, 1.0)
        frames.append(np.rint(img * 255).astype(np.uint8).transpose(2, 0, 1))

        pose_px = scene.pose_at(float(t))
        poses.append(Pose(pose_px, None))
        pad = 0.04 * scene.person_h
        x0, y0 = pose_px.min(axis=0) - pad
        x1, y1 = pose_px.max(axis=0) + pad
        boxes.append(BBox(x0, y0, x1 - x0, y1 - y0))

        frame_flags = set()
        if scene.blurred[t]:
            frame_flags.add("blurred")
        for center, size, _ in scene.occluders_at(float(t)):
            lo, hi = center - size / 2, center + size / 2
            inside = (pose_px >= lo).all(axis=1) & (pose_px <= hi).all(axis=1)
            if inside.any():
                frame_flags.add("occluded")
                break
        flags.append(frozenset(frame_flags))
    return SyntheticVideo(frames, poses, boxes, flags)


# ---------------------------------------------------------------------------
# crop triplets


def _crop_affine(box: BBox, crop_size: tuple[int, int]) -> np.ndarray:
    """Affine (2x3) mapping image coords to crop coords: the expanded box is
    padded to the crop aspect about its center, then scaled to crop_size."""
    ch, cw = crop_size
    aspect = cw / ch
    w, h = box.w, box.h
    if w / h < aspect:
        w = h * aspect
    else:
        h = w / aspect
    cx, cy = box.center
    s = cw / w
    return np.array([[s, 0.0, cw / 2.0 - s * cx], [0.0, s, ch / 2.0 - s * cy]])


def apply_affine(coords: np.ndarray, affine: np.ndarray) -> np.ndarray:
    return coords @ affine[:, :2].T + affine[:, 2]


def invert_affine(affine: np.ndarray) -> np.ndarray:
    inv = cv2.invertAffineTransform(affine.astype(np.float64))
    return np.asarray(inv)


def _warp(frame_chw: np.ndarray, affine: np.ndarray, crop_size: tuple[int, int]) -> np.ndarray:
    hwc = frame_chw.transpose(1, 2, 0)
    out = cv2.warpAffine(
        hwc, affine, (crop_size[1], crop_size[0]),
        flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    )
    return (out.astype(np.float32) / 255.0).transpose(2, 0, 1)


def transform_pose(pose: Pose, affine: np.ndarray) -> Pose:
    return Pose(apply_affine(pose.coords, affine), pose.visibility.copy())


def crop_triplet(
    video: SyntheticVideo,
    key_index: int,
    mode: str,
    schedule: Optional[LabelSchedule],
    crop_size: tuple[int, int],
    expand_factor: float = 1.25,
) -> FrameTriplet:
    """Build the model input for one key frame.

    estimation mode: auxiliaries are the direct neighbors (clamped at video
    bounds). propagation mode: auxiliaries are the nearest labeled frames on
    each side and their ground-truth poses are attached, mapped to crop
    coordinates. All three crops share the key frame's expanded-box
    transform.
    """
    n = video.num_frames
    if not 0 <= key_index < n:
        raise ValueError(f"key_index {key_index} out of range for {n} frames")
    if mode == "estimation":
        li, ri = max(0, key_index - 1), min(n - 1, key_index + 1)
        left_ann = right_ann = None
    elif mode == "propagation":
        if schedule is None or not schedule.labeled_indices:
            raise RuntimeError("propagation mode requires a schedule with labeled frames")
        li, ri = schedule.nearest_labeled(key_index)
        left_ann, right_ann = video.gt_poses[li], video.gt_poses[ri]
    else:
        raise ValueError(f"unknown triplet mode {mode!r}")

    affine = _crop_affine(expand_bbox(video.gt_boxes[key_index], expand_factor), crop_size)
    triplet = FrameTriplet(
        key_image=_warp(video.frames[key_index], affine, crop_size),
        left_image=_warp(video.frames[li], affine, crop_size),
        right_image=_warp(video.frames[ri], affine, crop_size),
        key_index=key_index,
        left_index=li,
        right_index=ri,
        left_annotation=transform_pose(left_ann, affine) if left_ann is not None else None,
        right_annotation=transform_pose(right_ann, affine) if right_ann is not None else None,
        crop_affine=affine,
    )
    return triplet


# ---------------------------------------------------------------------------
# dataset on disk


@dataclass
class DatasetEntry:
    video: SyntheticVideo
    schedule: Optional[LabelSchedule] = None
    label_source: Optional[list[str]] = None  # per frame, "manual" | "pseudo"


@dataclass
class SyntheticDataset:
    skeleton: SkeletonSpec
    entries: list[DatasetEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]


def generate_dataset(
    num_videos: int,
    base_config: SceneConfig,
    interval_T: Optional[int] = None,
    skeleton: Optional[SkeletonSpec] = None,
    seed_offset: int = 0,
) -> SyntheticDataset:
    """Generate ``num_videos`` videos with consecutive seeds starting at
    base_config.seed + seed_offset, each carrying a stride-T schedule."""
    from .core import build_label_schedule

    skeleton = skeleton or default_skeleton()
    entries = []
    for i in range(num_videos):
        cfg = SceneConfig(
            num_frames=base_config.num_frames,
            image_size=base_config.image_size,
            num_occluders=base_config.num_occluders,
            blur_probability=base_config.blur_probability,
            motion_smoothness=base_config.motion_smoothness,
            seed=base_config.seed + seed_offset + i,
        )
        video = generate_video(cfg, skeleton)
        schedule = build_label_schedule(cfg.num_frames, interval_T) if interval_T else None
        entries.append(DatasetEntry(video=video, schedule=schedule))
    return SyntheticDataset(skeleton=skeleton, entries=entries)


def _annotations_doc(entry: DatasetEntry) -> dict:
    video = entry.video
    doc = {
        "poses": [p.to_json() for p in video.gt_poses],
        "boxes": [[b.x, b.y, b.w, b.h] for b in video.gt_boxes],
        "flags": [sorted(f) for f in video.degradation_flags],
        "schedule": None,
    }
    if entry.schedule is not None:
        doc["schedule"] = {
            "num_frames": entry.schedule.num_frames,
            "interval_T": entry.schedule.interval_T,
            "labeled_indices": list(entry.schedule.labeled_indices),
        }
    if entry.label_source is not None:
        doc["label_source"] = list(entry.label_source)
    return doc


def save_dataset(dataset: SyntheticDataset, out_dir: str | Path) -> Path:
    """Write PNG frames plus one annotations JSON per video and a manifest;
    returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    skeleton_path = out_dir / "skeleton.json"
    dataset.skeleton.save(skeleton_path)
    video_entries = []
    for i, entry in enumerate(dataset.entries):
        vdir = out_dir / f"video_{i:04d}"
        vdir.mkdir(exist_ok=True)
        for t, frame in enumerate(entry.video.frames):
            cv2.imwrite(str(vdir / f"frame_{t:04d}.png"), frame.transpose(1, 2, 0))
        (vdir / "annotations.json").write_text(json.dumps(_annotations_doc(entry)))
        video_entries.append({
            "frames_dir": vdir.name,
            "annotations": f"{vdir.name}/annotations.json",
        })
    manifest = {"skeleton": skeleton_path.name, "videos": video_entries}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return manifest_path


def _load_entry(root: Path, video_entry: dict) -> DatasetEntry:
    vdir = root / video_entry["frames_dir"]
    doc = json.loads((root / video_entry["annotations"]).read_text())
    frame_paths = sorted(vdir.glob("frame_*.png"))
    frames = [cv2.imread(str(p), cv2.IMREAD_COLOR).transpose(2, 0, 1) for p in frame_paths]
    poses = [Pose.from_json(p) for p in doc["poses"]]
    boxes = [BBox(*b) for b in doc["boxes"]]
    flags = [frozenset(f) for f in doc["flags"]]
    video = SyntheticVideo(frames, poses, boxes, flags)
    schedule = None
    if doc.get("schedule"):
        s = doc["schedule"]
        schedule = LabelSchedule(s["num_frames"], s["interval_T"], tuple(s["labeled_indices"]))
    return DatasetEntry(video=video, schedule=schedule, label_source=doc.get("label_source"))


def load_dataset(manifest_path: str | Path) -> SyntheticDataset:
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    skeleton = SkeletonSpec.load(root / manifest["skeleton"])
    entries = [_load_entry(root, v) for v in manifest["videos"]]
    return SyntheticDataset(skeleton=skeleton, entries=entries)
