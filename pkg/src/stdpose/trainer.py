"""Loss assembly, data augmentation, the learning-rate schedule, and the
training loop for both propagation and estimation modes."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import cv2
import numpy as np
import torch

from .config import AugmentConfig, ExperimentConfig, TrainConfig  # noqa: F401 (re-exported)
from .core import ABSENT, FrameTriplet, Pose, build_label_schedule, expand_bbox, flip_pose
from .heatmaps import RenderParams, render_heatmaps
from .miobj import MIObjective
from .model import STDPoseModel, build_model, save_checkpoint
from .synthgen import SyntheticDataset, _crop_affine, apply_affine

_UPPER_BODY = tuple(range(9))  # head cluster, shoulders, elbows, wrists


def heatmap_loss(pred, gt) -> torch.Tensor:
    """Mean squared error between two heatmap stacks (mean reduction)."""
    pred, gt = _as_tensor(pred), _as_tensor(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return torch.mean((pred - gt) ** 2)


def total_loss(l_h, l_mi):
    """Heatmap loss plus MI loss, exactly."""
    return l_h + l_mi


def lr_at_epoch(epoch: int, config: TrainConfig) -> float:
    """Step-decay schedule: base_lr divided by decay_factor at each decay
    epoch reached."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    drops = sum(1 for d in config.decay_epochs if epoch >= d)
    return config.base_lr / config.decay_factor**drops


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    if hasattr(x, "values"):  # HeatmapStack
        x = x.values
    return torch.as_tensor(np.asarray(x, dtype=np.float32))


# ---------------------------------------------------------------------------
# augmentation


def _augment_draw(config: AugmentConfig, rng: np.random.Generator):
    rotation = rng.uniform(*config.rotation_deg)
    scale = rng.uniform(*config.scale)
    flip = rng.random() < config.flip_prob
    half_body = rng.random() < config.half_body_prob
    return rotation, scale, flip, half_body


def _augment_frames(frames_hwc: list[np.ndarray], poses: list[Optional[Pose]], skeleton,
                    config: AugmentConfig, rng: np.random.Generator):
    """Apply one rotation/scale/flip draw to every frame and pose. Frames
    are HWC; the identity draw returns the inputs untouched."""
    rotation, scale, flip, half_body = _augment_draw(config, rng)
    h, w = frames_hwc[0].shape[:2]
    if rotation == 0.0 and scale == 1.0 and not flip and not half_body:
        return frames_hwc, poses
    out_frames, out_poses = list(frames_hwc), [p.copy() if p else None for p in poses]

    if half_body:
        keep = _UPPER_BODY if rng.random() < 0.5 else tuple(
            i for i in range(skeleton.joint_count) if i not in _UPPER_BODY
        )
        key_pose = next(p for p in out_poses if p is not None)
        dropped = [i for i in range(skeleton.joint_count) if i not in keep]
        if dropped:
            pts = key_pose.coords[dropped]
            x0, y0 = np.floor(pts.min(axis=0) - 4).astype(int)
            x1, y1 = np.ceil(pts.max(axis=0) + 4).astype(int)
            x0, y0 = max(x0, 0), max(y0, 0)
            fill = out_frames[0].mean(axis=(0, 1))
            out_frames = [f.copy() for f in out_frames]
            for f in out_frames:
                f[y0:y1, x0:x1] = fill
            for p in out_poses:
                if p is not None:
                    p.visibility[dropped] = ABSENT

    if rotation != 0.0 or scale != 1.0:
        mat = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), rotation, scale)
        out_frames = [
            cv2.warpAffine(f, mat, (w, h), flags=cv2.INTER_LINEAR,
                           borderMode=cv2.BORDER_CONSTANT, borderValue=0)
            for f in out_frames
        ]
        for p in out_poses:
            if p is not None:
                p.coords = apply_affine(p.coords, mat)

    if flip:
        out_frames = [np.ascontiguousarray(f[:, ::-1]) for f in out_frames]
        # Mirror about the pixel grid (width - 1) so joint labels stay
        # aligned with the flipped pixels.
        out_poses = [flip_pose(p, skeleton, w - 1) if p is not None else None for p in out_poses]
    return out_frames, out_poses


def augment_sample(
    triplet: FrameTriplet, gt: Pose, config: AugmentConfig, seed: int, skeleton=None
) -> tuple[FrameTriplet, Pose]:
    """Augment a triplet and its key-frame pose with one seeded draw."""
    from .core import default_skeleton

    skeleton = skeleton or default_skeleton()
    rng = np.random.default_rng(seed)
    frames = [
        np.ascontiguousarray(img.transpose(1, 2, 0))
        for img in (triplet.left_image, triplet.key_image, triplet.right_image)
    ]
    poses = [gt, triplet.left_annotation, triplet.right_annotation]
    frames, poses = _augment_frames(frames, poses, skeleton, config, rng)
    out = FrameTriplet(
        key_image=np.ascontiguousarray(frames[1].transpose(2, 0, 1)),
        left_image=np.ascontiguousarray(frames[0].transpose(2, 0, 1)),
        right_image=np.ascontiguousarray(frames[2].transpose(2, 0, 1)),
        key_index=triplet.key_index,
        left_index=triplet.left_index,
        right_index=triplet.right_index,
        left_annotation=poses[1],
        right_annotation=poses[2],
        crop_affine=triplet.crop_affine,
    )
    return out, poses[0]


# ---------------------------------------------------------------------------
# sampling


class TripletSampler:
    """Enumerates (video, key frame) training samples and serves augmented
    batches. Crops are computed once and cached as uint8."""

    def __init__(self, dataset: SyntheticDataset, config: ExperimentConfig, mode: Optional[str] = None):
        self.dataset = dataset
        self.skeleton = dataset.skeleton
        self.mode = mode or config.train.mode
        data = config.data
        self.crop_size = data.crop_size
        self.expand_factor = data.expand_factor
        self.render_params = RenderParams(data.heatmap_size, data.heatmap_sigma, 4.0)
        self.samples: list[tuple[int, int]] = []
        self.schedules = []
        for ei, entry in enumerate(dataset):
            n = entry.video.num_frames
            sched = entry.schedule
            if self.mode == "propagation":
                sched = sched or build_label_schedule(n, config.interval_T)
                keys = [t for t in range(n) if t not in sched._labeled_set]
            else:
                keys = list(range(n))
            self.schedules.append(sched)
            self.samples += [(ei, t) for t in keys]
        self._cache: dict[tuple[int, int], tuple] = {}

    def __len__(self):
        return len(self.samples)

    def _aux_indices(self, ei: int, key: int) -> tuple[int, int]:
        n = self.dataset[ei].video.num_frames
        if self.mode == "propagation":
            return self.schedules[ei].nearest_labeled(key)
        return max(0, key - 1), min(n - 1, key + 1)

    def raw(self, i: int):
        """Cached un-augmented sample: frames (3 HWC uint8 crops), key pose
        in crop coordinates."""
        ei, key = self.samples[i]
        hit = self._cache.get((ei, key))
        if hit is not None:
            return hit
        entry = self.dataset[ei]
        li, ri = self._aux_indices(ei, key)
        affine = _crop_affine(
            expand_bbox(entry.video.gt_boxes[key], self.expand_factor), self.crop_size
        )
        ch, cw = self.crop_size
        frames = [
            cv2.warpAffine(
                entry.video.frames[t].transpose(1, 2, 0), affine, (cw, ch),
                flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0,
            )
            for t in (li, key, ri)
        ]
        gt = entry.video.gt_poses[key]
        pose = Pose(apply_affine(gt.coords, affine), gt.visibility.copy())
        item = (frames, pose)
        self._cache[(ei, key)] = item
        return item

    def batch(self, indices, config: ExperimentConfig, epoch: int, augment: bool = True):
        """Collate a batch of augmented samples into training tensors."""
        lefts, keys, rights, targets = [], [], [], []
        for i in indices:
            frames, pose = self.raw(i)
            if augment:
                rng = np.random.default_rng(
                    np.random.SeedSequence([config.seed, epoch, int(i)])
                )
                frames, poses = _augment_frames(
                    frames, [pose], self.skeleton, config.train.augmentation, rng
                )
                pose = poses[0]
            target = render_heatmaps(pose, self.render_params).values
            lefts.append(frames[0])
            keys.append(frames[1])
            rights.append(frames[2])
            targets.append(target)

        def stack(imgs):
            arr = np.stack([im.astype(np.float32) / 255.0 for im in imgs])
            return torch.from_numpy(arr.transpose(0, 3, 1, 2).copy())

        return stack(lefts), stack(keys), stack(rights), torch.from_numpy(np.stack(targets))


# ---------------------------------------------------------------------------
# training loop


def train_model(
    dataset: SyntheticDataset,
    config: ExperimentConfig,
    val_dataset: Optional[SyntheticDataset] = None,
    out_dir: Optional[str | Path] = None,
    max_steps: Optional[int] = None,
    limit_samples: Optional[int] = None,
    quiet: bool = True,
) -> tuple[STDPoseModel, list[dict]]:
    """Run the forward pipeline and optimize the total loss with AdamW.

    Returns the trained model and the metrics log (per-step records plus one
    per-epoch record carrying the validation PCK). Fully reproducible from
    config.seed.
    """
    if len(dataset) == 0:
        raise RuntimeError("cannot train on an empty dataset")
    torch.manual_seed(config.seed)
    sampler = TripletSampler(dataset, config)
    if len(sampler) == 0:
        raise RuntimeError("dataset yields no training samples for this mode/schedule")
    if limit_samples is not None:
        sampler.samples = sampler.samples[:limit_samples]

    tcfg = config.train
    model = build_model(dataset.skeleton.joint_count, config)
    model.train()
    opt = torch.optim.AdamW(model.parameters(), lr=tcfg.base_lr, weight_decay=tcfg.weight_decay)

    use_mi = config.model.components.mi and (tcfg.weights.alpha > 0 or tcfg.weights.beta > 0)
    mi_obj = mi_opt = None
    if use_mi:
        feat_dim = config.model.backbone.embed_dim
        mi_obj = MIObjective(feat_dim, dataset.skeleton.joint_count, tcfg.weights)
        mi_opt = torch.optim.AdamW(
            mi_obj.parameters(), lr=tcfg.base_lr * tcfg.estimator_lr_multiplier, weight_decay=0.0
        )

    rng = np.random.default_rng(config.seed)
    metrics: list[dict] = []
    step = 0
    done = False
    for epoch in range(tcfg.epochs):
        lr = lr_at_epoch(epoch, tcfg)
        for group in opt.param_groups:
            group["lr"] = lr
        if mi_opt is not None:
            for group in mi_opt.param_groups:
                group["lr"] = lr * tcfg.estimator_lr_multiplier

        order = rng.permutation(len(sampler))
        epoch_lh, epoch_lmi, batches = 0.0, 0.0, 0
        for start in range(0, len(order), tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            left, key, right, target = sampler.batch(idx, config, epoch)
            out = model(left, key, right)
            l_h = heatmap_loss(out["pred"], target)
            if out["pred"] is not out["h_key"]:
                # Intermediate supervision keeps the per-frame head emitting
                # real heatmaps, which propagation inference substitutes.
                l_h = l_h + heatmap_loss(out["h_key"], target)

            if use_mi:
                mi_opt.zero_grad()
                update = mi_obj.update_loss(
                    target, out["f_fused"], out["f_key"], out["h_merged"], out["h_key"]
                )
                update.backward()
                mi_opt.step()
                l_mi = mi_obj.loss(
                    target, out["f_fused"], out["f_key"], out["h_merged"], out["h_key"]
                )
            else:
                l_mi = torch.zeros(())

            loss = total_loss(l_h, l_mi)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at epoch {epoch} step {step}: "
                    f"l_h={float(l_h)}, l_mi={float(l_mi)}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()

            record = {
                "phase": "step",
                "epoch": epoch,
                "step": step,
                "l_h": float(l_h),
                "l_mi": float(l_mi),
                "l_total": float(loss),
                "lr": lr,
                "val_pck": None,
            }
            metrics.append(record)
            epoch_lh += float(l_h)
            epoch_lmi += float(l_mi)
            batches += 1
            step += 1
            if max_steps is not None and step >= max_steps:
                done = True
                break

        val_pck = None
        if val_dataset is not None and tcfg.val_videos_per_epoch > 0:
            from .evalx import evaluate

            report = evaluate(
                model, val_dataset, mode=config.train.mode, interval_T=config.interval_T,
                max_videos=tcfg.val_videos_per_epoch,
            )
            val_pck = report.mean_pck
            model.train()
        metrics.append({
            "phase": "epoch",
            "epoch": epoch,
            "step": step - 1,
            "l_h": epoch_lh / max(batches, 1),
            "l_mi": epoch_lmi / max(batches, 1),
            "l_total": (epoch_lh + epoch_lmi) / max(batches, 1),
            "lr": lr,
            "val_pck": val_pck,
        })
        if not quiet:
            print(f"epoch {epoch}: l_h={epoch_lh / max(batches, 1):.5f} "
                  f"l_mi={epoch_lmi / max(batches, 1):.5f} val_pck={val_pck}")
        if done:
            break

    model.eval()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out_dir / "model.ckpt", model, config)
        write_metrics(out_dir / "metrics.jsonl", metrics)
    return model, metrics


def write_metrics(path: str | Path, metrics: list[dict]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as f:
        for record in metrics:
            f.write(json.dumps(record) + "\n")
    tmp.replace(path)


def read_metrics(path: str | Path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
