"""Full network assembly: per-frame encoding, temporal fusion/synthesis,
mask generation and aggregation, wired according to the active component
flags; plus single-file checkpoints with an embedded JSON header."""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn

from .backbone import FrameEncoder, HeatmapHead
from .config import ComponentFlags, ExperimentConfig
from .decoder import DynamicMaskGenerator, PoseDecoder
from .stre import TemporalFeatureFusion, TemporalKeypointSynthesis

_CHECKPOINT_MAGIC = b"SPCKPT01"


class STDPoseModel(nn.Module):
    """Pose network over frame triplets.

    Output paths by component set: full pipeline decodes aggregated tokens;
    feature-fusion alone feeds the shared keypoint head; keypoint synthesis
    alone emits the merged heatmaps; the baseline is the key frame's head
    output. ``aux_heatmaps`` substitutes rendered ground-truth stacks for
    the auxiliary frames' predicted heatmaps (propagation inference).
    """

    def __init__(self, num_joints: int, config: ExperimentConfig):
        super().__init__()
        flags = config.model.components
        crop = config.data.crop_size
        self.config = config
        self.flags = flags
        self.num_joints = num_joints
        self.heatmap_size = config.data.heatmap_size
        self.encoder = FrameEncoder(config.model.backbone, crop)
        dim = config.model.backbone.embed_dim
        self.head = HeatmapHead(dim, num_joints, upscale=config.model.backbone.patch_size // 4)
        self.tff = TemporalFeatureFusion(dim, config.model.tff) if flags.tff else None
        self.tks = TemporalKeypointSynthesis(num_joints, config.model.tks) if flags.tks else None
        self.dam = DynamicMaskGenerator(num_joints, config.model.dam) if flags.dam else None
        self.decoder = (
            PoseDecoder(num_joints, dim, self.heatmap_size, config.model.decoder)
            if flags.stda
            else None
        )

    def forward(
        self,
        left: torch.Tensor,
        key: torch.Tensor,
        right: torch.Tensor,
        aux_heatmaps: Optional[tuple[torch.Tensor, torch.Tensor]] = None,
    ) -> dict:
        flags = self.flags
        need_aux_feats = flags.tff
        need_aux_heats = flags.tks or flags.dam
        encode_aux = need_aux_feats or (need_aux_heats and aux_heatmaps is None)

        if encode_aux:
            stacked = torch.cat([left, key, right], dim=0)
            f_l, f_t, f_r = self.encoder(stacked).chunk(3, dim=0)
        else:
            f_t = self.encoder(key)
            f_l = f_r = None
        h_t = self.head(f_t)

        h_l = h_r = None
        if need_aux_heats:
            if aux_heatmaps is not None:
                h_l, h_r = aux_heatmaps
            else:
                h_l, h_r = self.head(f_l), self.head(f_r)

        f_fused = self.tff(f_l, f_t, f_r) if flags.tff else f_t
        h_merged = self.tks(h_l, h_t, h_r) if flags.tks else h_t

        mask = None
        if flags.stda:
            if flags.dam:
                mask = self.dam(h_l, h_t, h_r)
            else:
                b = h_merged.shape[0]
                hh, ww = self.heatmap_size
                mask = torch.full((b, 1, hh, ww), 1.0 / (hh * ww), device=h_merged.device)
            pred = self.decoder(f_fused, h_merged, mask)
        elif flags.tff:
            pred = self.head(f_fused)
        elif flags.tks:
            pred = h_merged
        else:
            pred = h_t

        return {
            "pred": pred,
            "f_key": f_t,
            "f_fused": f_fused,
            "h_key": h_t,
            "h_left": h_l,
            "h_right": h_r,
            "h_merged": h_merged,
            "mask": mask,
        }


def build_model(num_joints: int, config: ExperimentConfig) -> STDPoseModel:
    torch.manual_seed(config.seed)
    return STDPoseModel(num_joints, config)


def save_checkpoint(path: str | Path, model: STDPoseModel, config: ExperimentConfig) -> None:
    """Single binary file: magic, length-prefixed JSON header (format
    version, joint count, experiment config), then the state dict. Written
    atomically via a temp file."""
    header = json.dumps(
        {"format_version": 1, "num_joints": model.num_joints, "config": config.to_dict()}
    ).encode()
    buf = io.BytesIO()
    torch.save(model.state_dict(), buf)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack(">Q", len(header)))
        f.write(header)
        f.write(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[STDPoseModel, ExperimentConfig]:
    from .config import experiment_config_from_dict

    with open(path, "rb") as f:
        magic = f.read(len(_CHECKPOINT_MAGIC))
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a model checkpoint")
        (header_len,) = struct.unpack(">Q", f.read(8))
        header = json.loads(f.read(header_len).decode())
        if header.get("format_version") != 1:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        state = torch.load(io.BytesIO(f.read()), weights_only=True)
    config = experiment_config_from_dict(header["config"])
    model = STDPoseModel(header["num_joints"], config)
    model.load_state_dict(state)
    model.eval()
    return model, config
