"""Pose propagation inference (labeled auxiliary frames to unlabeled key
frames), pseudo-label dataset construction, and pseudo-label retraining."""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
import torch

from .config import ExperimentConfig
from .core import LabelSchedule, Pose, build_label_schedule, expand_bbox
from .heatmaps import RenderParams, decode_heatmaps, render_heatmaps
from .core import HeatmapStack
from .model import STDPoseModel
from .synthgen import (
    DatasetEntry,
    SyntheticDataset,
    SyntheticVideo,
    _crop_affine,
    apply_affine,
    invert_affine,
)

logger = logging.getLogger(__name__)


def _render_params(config: ExperimentConfig) -> RenderParams:
    return RenderParams(config.data.heatmap_size, config.data.heatmap_sigma, 4.0)


def _crop_frames(video: SyntheticVideo, indices, affine, crop_size) -> torch.Tensor:
    import cv2

    ch, cw = crop_size
    crops = [
        cv2.warpAffine(
            video.frames[t].transpose(1, 2, 0), affine, (cw, ch),
            flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0,
        ).astype(np.float32)
        / 255.0
        for t in indices
    ]
    return torch.from_numpy(np.stack(crops).transpose(0, 3, 1, 2).copy())


@torch.no_grad()
def predict_frames(
    model: STDPoseModel,
    video: SyntheticVideo,
    keys: list[int],
    aux_pairs: list[tuple[int, int]],
    aux_poses: Optional[list[tuple[Pose, Pose]]] = None,
    batch_size: int = 32,
) -> dict[int, Pose]:
    """Run the model over the given key frames and decode poses back to
    image coordinates. When ``aux_poses`` is given, the auxiliary frames'
    predicted heatmaps are replaced by rendered ground-truth stacks."""
    config = model.config
    crop_size = config.data.crop_size
    params = _render_params(config)
    model.eval()
    out: dict[int, Pose] = {}
    for start in range(0, len(keys), batch_size):
        chunk = list(range(start, min(start + batch_size, len(keys))))
        lefts, keyims, rights, h_l, h_r, affines = [], [], [], [], [], []
        for c in chunk:
            t = keys[c]
            li, ri = aux_pairs[c]
            affine = _crop_affine(
                expand_bbox(video.gt_boxes[t], config.data.expand_factor), crop_size
            )
            affines.append(affine)
            frames = _crop_frames(video, (li, t, ri), affine, crop_size)
            lefts.append(frames[0])
            keyims.append(frames[1])
            rights.append(frames[2])
            if aux_poses is not None:
                lp, rp = aux_poses[c]
                lp = Pose(apply_affine(lp.coords, affine), lp.visibility.copy())
                rp = Pose(apply_affine(rp.coords, affine), rp.visibility.copy())
                h_l.append(render_heatmaps(lp, params).values)
                h_r.append(render_heatmaps(rp, params).values)
        batch = [torch.stack(lefts), torch.stack(keyims), torch.stack(rights)]
        aux = None
        if aux_poses is not None:
            aux = (
                torch.from_numpy(np.stack(h_l)),
                torch.from_numpy(np.stack(h_r)),
            )
        preds = model(*batch, aux_heatmaps=aux)["pred"].numpy()
        for c, pred, affine in zip(chunk, preds, affines):
            pose_crop = decode_heatmaps(HeatmapStack(pred, origin="predicted"), params)
            inv = invert_affine(affine)
            out[keys[c]] = Pose(apply_affine(pose_crop.coords, inv), pose_crop.visibility)
    return out


def propagate_poses(
    model: STDPoseModel, video: SyntheticVideo, schedule: LabelSchedule, batch_size: int = 32
) -> dict[int, Pose]:
    """Propagate annotations from the schedule's labeled frames to every
    unlabeled frame; labeled frames pass their annotations through
    unchanged."""
    if schedule is None or not schedule.labeled_indices:
        raise RuntimeError("propagation requires a schedule with labeled frames")
    result: dict[int, Pose] = {}
    keys, pairs, poses = [], [], []
    for t in range(video.num_frames):
        if schedule.is_labeled(t):
            result[t] = video.gt_poses[t].copy()
        else:
            li, ri = schedule.nearest_labeled(t)
            keys.append(t)
            pairs.append((li, ri))
            poses.append((video.gt_poses[li], video.gt_poses[ri]))
    if keys:
        result.update(predict_frames(model, video, keys, pairs, poses, batch_size))
    return result


def build_pseudo_dataset(
    model: STDPoseModel, dataset: SyntheticDataset, schedule_T: int
) -> SyntheticDataset:
    """Propagate poses across every video and assemble a dataset whose
    unlabeled frames carry pseudo labels; videos where propagation fails are
    skipped with a warning."""
    entries = []
    for i, entry in enumerate(dataset):
        video = entry.video
        schedule = build_label_schedule(video.num_frames, schedule_T)
        try:
            propagated = propagate_poses(model, video, schedule)
        except Exception:
            logger.warning("propagation failed on video %d; skipping", i, exc_info=True)
            continue
        poses = [propagated[t] for t in range(video.num_frames)]
        source = [
            "manual" if schedule.is_labeled(t) else "pseudo" for t in range(video.num_frames)
        ]
        pseudo_video = SyntheticVideo(
            frames=video.frames,
            gt_poses=poses,
            gt_boxes=video.gt_boxes,
            degradation_flags=video.degradation_flags,
        )
        entries.append(DatasetEntry(video=pseudo_video, schedule=schedule, label_source=source))
    return SyntheticDataset(skeleton=dataset.skeleton, entries=entries)


def manual_ratio(dataset: SyntheticDataset) -> float:
    total = labeled = 0
    for entry in dataset:
        source = entry.label_source or ["manual"] * entry.video.num_frames
        total += len(source)
        labeled += sum(1 for s in source if s == "manual")
    return labeled / total if total else 0.0


def pseudo_label_train(
    pseudo_dataset: SyntheticDataset,
    config: ExperimentConfig,
    val_dataset: Optional[SyntheticDataset] = None,
    **train_kwargs,
):
    """Estimation-mode training that treats pseudo and manual labels
    identically; the metrics log records the manual-label ratio."""
    from dataclasses import replace

    from .trainer import train_model

    config = replace(config, train=replace(config.train, mode="estimation"))
    ratio = manual_ratio(pseudo_dataset)
    model, metrics = train_model(pseudo_dataset, config, val_dataset=val_dataset, **train_kwargs)
    metrics.insert(0, {"phase": "meta", "manual_ratio": ratio})
    return model, metrics
