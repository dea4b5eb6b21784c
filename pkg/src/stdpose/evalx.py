"""PCK metrics, model evaluation over datasets, and the trend harnesses:
component ablation, label-interval sweep and sigmoid-parameter sweep on the
desk-scale synthetic benchmark."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ComponentFlags, ExperimentConfig
from .core import ABSENT, BBox, Pose, build_label_schedule
from .model import STDPoseModel
from .synthgen import SceneConfig, SyntheticDataset, generate_dataset

DEFAULT_TAU = 0.1

# Component sets mirroring the ablation rows: baseline, each temporal
# module alone, both with aggregation, plus the mask and the MI objective.
PAPER_VARIANTS: tuple[tuple[str, frozenset], ...] = (
    ("a_baseline", frozenset()),
    ("b_tff", frozenset({"TFF"})),
    ("c_tks", frozenset({"TKS"})),
    ("d_tff_tks_stda", frozenset({"TFF", "TKS", "STDA"})),
    ("e_plus_dam", frozenset({"TFF", "TKS", "STDA", "DAM"})),
    ("f_full", frozenset({"TFF", "TKS", "STDA", "DAM", "MI"})),
)


@dataclass
class EvalReport:
    per_joint_pck: dict[str, float]
    mean_pck: float
    num_frames: int
    threshold_tau: float

    def to_json(self) -> dict:
        return {
            "per_joint_pck": self.per_joint_pck,
            "mean_pck": self.mean_pck,
            "num_frames": self.num_frames,
            "threshold_tau": self.threshold_tau,
        }


def pck(pred: Pose, gt: Pose, box: BBox, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Per-joint correctness flags: 1.0 if the predicted joint lies within
    tau * max(box side) of ground truth (inclusive), NaN for joints absent
    in the ground truth."""
    if pred.joint_count != gt.joint_count:
        raise ValueError("poses must share one joint count")
    dist = np.linalg.norm(pred.coords - gt.coords, axis=1)
    flags = (dist <= tau * max(box.w, box.h)).astype(np.float64)
    flags[gt.visibility == ABSENT] = np.nan
    return flags


class _Accumulator:
    def __init__(self, joint_names):
        self.joint_names = joint_names
        self.correct = np.zeros(len(joint_names))
        self.valid = np.zeros(len(joint_names))
        self.num_frames = 0

    def add(self, flags: np.ndarray):
        ok = ~np.isnan(flags)
        self.correct[ok] += flags[ok]
        self.valid += ok
        self.num_frames += 1

    def report(self, tau: float) -> EvalReport:
        with np.errstate(invalid="ignore"):
            per_joint = self.correct / np.where(self.valid > 0, self.valid, np.nan)
        values = {name: float(v) for name, v in zip(self.joint_names, per_joint) if not np.isnan(v)}
        mean = float(np.mean(list(values.values()))) if values else 0.0
        return EvalReport(values, mean, self.num_frames, tau)


def evaluate(
    model: STDPoseModel,
    dataset: SyntheticDataset,
    mode: str = "propagation",
    interval_T: Optional[int] = None,
    tau: float = DEFAULT_TAU,
    use_gt_aux: bool = True,
    include_labeled: bool = True,
    max_videos: Optional[int] = None,
    batch_size: int = 64,
) -> EvalReport:
    """Run inference over a dataset and aggregate PCK.

    propagation mode builds schedule triplets; with ``use_gt_aux`` the
    auxiliary predicted heatmaps are replaced by rendered annotations and
    labeled frames pass straight through (counted as correct). estimation
    mode uses the immediate neighbor frames with predicted heatmaps only.
    """
    from .propagate import predict_frames

    if len(dataset) == 0:
        raise RuntimeError("cannot evaluate on an empty dataset")
    if mode not in ("propagation", "estimation"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    interval_T = interval_T or model.config.interval_T
    acc = _Accumulator(dataset.skeleton.joint_names)
    entries = dataset.entries[:max_videos] if max_videos else dataset.entries
    for entry in entries:
        video = entry.video
        n = video.num_frames
        keys, pairs, aux_poses = [], [], []
        if mode == "propagation":
            schedule = entry.schedule or build_label_schedule(n, interval_T)
            for t in range(n):
                if schedule.is_labeled(t):
                    if include_labeled:
                        acc.add(pck(video.gt_poses[t], video.gt_poses[t], video.gt_boxes[t], tau))
                    continue
                li, ri = schedule.nearest_labeled(t)
                keys.append(t)
                pairs.append((li, ri))
                aux_poses.append((video.gt_poses[li], video.gt_poses[ri]))
        else:
            for t in range(n):
                keys.append(t)
                pairs.append((max(0, t - 1), min(n - 1, t + 1)))
        preds = predict_frames(
            model, video, keys, pairs,
            aux_poses if (mode == "propagation" and use_gt_aux) else None,
            batch_size=batch_size,
        ) if keys else {}
        for t in keys:
            acc.add(pck(preds[t], video.gt_poses[t], video.gt_boxes[t], tau))
    return acc.report(tau)


# ---------------------------------------------------------------------------
# desk-scale benchmark


def benchmark_config(seed: int = 0, **overrides) -> ExperimentConfig:
    """The desk-scale trend benchmark configuration: small crops and a small
    model so the seeded multi-run harnesses finish on a CPU budget."""
    from .backbone import BackboneConfig
    from .config import DataConfig, ModelConfig, TrainConfig
    from .decoder import PADecoderConfig
    from .stre import TFFConfig, TKSConfig

    base = ExperimentConfig(
        seed=seed,
        interval_T=7,
        data=DataConfig(
            crop_size=(64, 48),
            heatmap_sigma=1.5,
            image_size=(96, 96),
            num_frames=16,
            num_occluders=2,
            blur_probability=0.25,
            motion_smoothness=4.0,
            num_videos_train=200,
            num_videos_val=50,
        ),
        model=ModelConfig(
            backbone=BackboneConfig(patch_size=8, embed_dim=48, depth=2, num_heads=4, mlp_ratio=2.0),
            tff=TFFConfig(num_blocks=1, num_heads=4, mlp_ratio=2.0),
            decoder=PADecoderConfig(num_pa_blocks=1, embed_dim=48, num_heads=4, mlp_ratio=2.0),
        ),
        train=TrainConfig(epochs=10, batch_size=16, val_videos_per_epoch=2),
    )
    if overrides:
        doc = base.to_dict()
        for key, value in overrides.items():
            doc[key] = value
        from .config import experiment_config_from_dict

        return experiment_config_from_dict(doc)
    return base


def benchmark_datasets(config: ExperimentConfig) -> tuple[SyntheticDataset, SyntheticDataset]:
    """Train/val splits generated from disjoint seed ranges."""
    data = config.data
    scene = SceneConfig(
        num_frames=data.num_frames,
        image_size=data.image_size,
        num_occluders=data.num_occluders,
        blur_probability=data.blur_probability,
        motion_smoothness=data.motion_smoothness,
        seed=0,
    )
    train = generate_dataset(data.num_videos_train, scene, interval_T=None, seed_offset=1000)
    val = generate_dataset(data.num_videos_val, scene, interval_T=None, seed_offset=900000)
    return train, val


def _with(config: ExperimentConfig, *, seed=None, components=None, interval_T=None,
          mode=None, dam=None) -> ExperimentConfig:
    out = config
    if seed is not None:
        out = replace(out, seed=seed, train=replace(out.train, seed=seed))
    if interval_T is not None:
        out = replace(out, interval_T=interval_T)
    if components is not None:
        out = replace(out, model=replace(out.model, components=components))
    if dam is not None:
        out = replace(out, model=replace(out.model, dam=dam))
    if mode is not None:
        out = replace(out, train=replace(out.train, mode=mode))
    return out


def _train_and_score(config, train_ds, val_ds, mode="propagation") -> float:
    from .trainer import train_model

    model, _ = train_model(train_ds, config, val_dataset=None)
    report = evaluate(model, val_ds, mode=mode, interval_T=config.interval_T)
    return report.mean_pck


def run_ablation(
    variants,
    train_ds: SyntheticDataset,
    val_ds: SyntheticDataset,
    seeds,
    base_config: Optional[ExperimentConfig] = None,
    progress=None,
) -> dict:
    """Train every component variant for every seed and report propagation
    PCK per cell; row composition mirrors the component study."""
    base_config = base_config or benchmark_config()
    rows = []
    for label, flag_names in variants:
        flags = ComponentFlags.from_names(flag_names)  # invalid combos raise here
        for seed in seeds:
            cfg = _with(base_config, seed=seed, components=flags, mode="propagation")
            score = _train_and_score(cfg, train_ds, val_ds)
            rows.append({
                "variant": label,
                "flags": sorted(n.upper() for n in flag_names),
                "seed": int(seed),
                "mean_pck": score,
            })
            if progress:
                progress(rows[-1])
    return {"kind": "ablation", "interval_T": base_config.interval_T, "rows": rows}


def run_t_sweep(
    t_values,
    train_ds: SyntheticDataset,
    val_ds: SyntheticDataset,
    seeds,
    base_config: Optional[ExperimentConfig] = None,
    progress=None,
) -> dict:
    """Train and evaluate propagation at each label interval T. T=1 is pure
    pass-through (every frame labeled), so no training run is needed."""
    from .model import build_model

    base_config = base_config or benchmark_config()
    rows = []
    for t in t_values:
        if t < 1:
            raise ValueError(f"interval T must be positive, got {t}")
        for seed in seeds:
            cfg = _with(base_config, seed=seed, interval_T=int(t), mode="propagation")
            if t == 1:
                model = build_model(train_ds.skeleton.joint_count, cfg)
                score = evaluate(model, val_ds, mode="propagation", interval_T=1).mean_pck
            else:
                score = _train_and_score(cfg, train_ds, val_ds)
            rows.append({"T": int(t), "seed": int(seed), "mean_pck": score})
            if progress:
                progress(rows[-1])
    return {"kind": "t_sweep", "rows": rows}


def run_sigmoid_sweep(
    k_values,
    theta_values,
    train_ds: SyntheticDataset,
    val_ds: SyntheticDataset,
    seed: int = 0,
    base_config: Optional[ExperimentConfig] = None,
    progress=None,
) -> dict:
    """Train the full model for every (k, theta) cell of the modified
    sigmoid grid."""
    from .decoder import DAMParams

    base_config = base_config or benchmark_config()
    cells = []
    for theta in theta_values:
        for k in k_values:
            if k <= 0:
                raise ValueError(f"slope k must be positive, got {k}")
            cfg = _with(base_config, seed=seed, dam=DAMParams(k=float(k), theta=float(theta)),
                        mode="propagation")
            score = _train_and_score(cfg, train_ds, val_ds)
            cells.append({"k": float(k), "theta": float(theta), "seed": int(seed),
                          "mean_pck": score})
            if progress:
                progress(cells[-1])
    return {
        "kind": "sigmoid_sweep",
        "k_values": [float(k) for k in k_values],
        "theta_values": [float(t) for t in theta_values],
        "rows": cells,
    }


def write_results(payload: dict, out_dir: str | Path, name: str) -> tuple[Path, Path]:
    """Persist a harness result as JSON plus CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{name}.json"
    json_path.write_text(json.dumps(payload, indent=2))
    csv_path = out_dir / f"{name}.csv"
    rows = payload.get("rows", [])
    if rows:
        with open(csv_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (json.dumps(v) if isinstance(v, list) else v) for k, v in row.items()})
    else:
        csv_path.write_text("")
    return json_path, csv_path
