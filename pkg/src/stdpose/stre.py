"""Spatiotemporal representation encoding: attention-based fusion of the
three frames' visual tokens, and staged convolutional merging of the three
frames' keypoint heatmaps."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import TransformerBlock


@dataclass(frozen=True)
class TFFConfig:
    num_blocks: int = 2
    num_heads: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")


@dataclass(frozen=True)
class TKSConfig:
    temporal_merge_channels: int = 8
    spatial_merge_channels: int = 15
    kernel_size: int = 3

    def __post_init__(self):
        if self.kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")


class TemporalFeatureFusion(nn.Module):
    """Fuse <F_left, F_key, F_right> into one feature map of the key frame's
    shape.

    Each frame's tokens receive a learnable per-slot temporal embedding, the
    three token sets are concatenated and run through self-attention blocks,
    and a per-location MLP folds the three temporal slots back into one map.
    """

    def __init__(self, embed_dim: int, config: TFFConfig = TFFConfig()):
        super().__init__()
        self.temporal_embed = nn.Parameter(torch.zeros(3, embed_dim))
        nn.init.trunc_normal_(self.temporal_embed, std=0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(embed_dim, config.num_heads, config.mlp_ratio)
            for _ in range(config.num_blocks)
        )
        self.aggregate = nn.Sequential(
            nn.Linear(3 * embed_dim, 2 * embed_dim), nn.GELU(), nn.Linear(2 * embed_dim, embed_dim)
        )

    def forward(self, f_left, f_key, f_right):
        if not (f_left.shape == f_key.shape == f_right.shape):
            raise ValueError(
                f"feature maps must share one shape, got {f_left.shape}, {f_key.shape}, {f_right.shape}"
            )
        b, d, h, w = f_key.shape
        n = h * w
        frames = [f_left, f_key, f_right]
        tokens = [f.flatten(2).transpose(1, 2) + self.temporal_embed[i] for i, f in enumerate(frames)]
        x = torch.cat(tokens, dim=1)  # (B, 3N, D)
        for block in self.blocks:
            x = block(x)
        x = x.reshape(b, 3, n, d).permute(0, 2, 1, 3).reshape(b, n, 3 * d)
        x = self.aggregate(x)  # (B, N, D)
        return x.transpose(1, 2).reshape(b, d, h, w)


def _conv_block(c_in: int, c_mid: int, c_out: int, k: int) -> nn.Sequential:
    pad = k // 2
    return nn.Sequential(
        nn.Conv2d(c_in, c_mid, k, padding=pad),
        nn.GroupNorm(1, c_mid),
        nn.ReLU(inplace=True),
        nn.Conv2d(c_mid, c_out, k, padding=pad),
        nn.GroupNorm(1, c_out),
        nn.ReLU(inplace=True),
    )


class TemporalKeypointSynthesis(nn.Module):
    """Merge <H_left, H_key, H_right> into one J-channel heatmap stack.

    Stage 1 merges each joint's three temporal channels independently (one
    shared convolution block applied per joint); stage 2 mixes joints
    spatially; stage 3 concatenates the result with all 3J input channels
    and projects back to J channels.
    """

    def __init__(self, num_joints: int, config: TKSConfig = TKSConfig()):
        super().__init__()
        j = num_joints
        k = config.kernel_size
        self.num_joints = j
        self.temporal_merge = _conv_block(3, config.temporal_merge_channels, 1, k)
        self.spatial_merge = _conv_block(j, config.spatial_merge_channels, j, k)
        self.final_merge = _conv_block(4 * j, 2 * j, j, k)

    def forward(self, h_left, h_key, h_right):
        if not (h_left.shape == h_key.shape == h_right.shape):
            raise ValueError(
                f"heatmap stacks must share one shape, got {h_left.shape}, {h_key.shape}, {h_right.shape}"
            )
        b, j, hh, ww = h_key.shape
        if j != self.num_joints:
            raise ValueError(f"expected {self.num_joints} joints, got {j}")
        per_joint = torch.stack([h_left, h_key, h_right], dim=2).reshape(b * j, 3, hh, ww)
        merged = self.temporal_merge(per_joint).reshape(b, j, hh, ww)  # joint-independent
        mixed = self.spatial_merge(merged)
        return self.final_merge(torch.cat([mixed, h_left, h_key, h_right], dim=1))

    def temporal_stage(self, h_left, h_key, h_right):
        """Stage-1 output alone; exposed for the joint-independence contract."""
        b, j, hh, ww = h_key.shape
        per_joint = torch.stack([h_left, h_key, h_right], dim=2).reshape(b * j, 3, hh, ww)
        return self.temporal_merge(per_joint).reshape(b, j, hh, ww)
