"""Per-frame spatial encoder (a small ViT trained from scratch) and the
keypoint head that turns token maps into per-joint heatmaps."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class BackboneConfig:
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} must be divisible by num_heads {self.num_heads}"
            )


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]  # (B, heads, N, head_dim)
        attn = (q @ k.transpose(-2, -1)) * self.head_dim**-0.5
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, mlp_ratio: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        return self.net(x)


class TransformerBlock(nn.Module):
    """Pre-norm self-attention block with residual connections."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, mlp_ratio)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        x = x + self.ffn(self.norm2(x))
        return x


class FrameEncoder(nn.Module):
    """Maps a (B, 3, H, W) crop to a token feature map (B, D, H/p, W/p)."""

    def __init__(self, config: BackboneConfig, input_size: tuple[int, int]):
        super().__init__()
        h, w = input_size
        p = config.patch_size
        if h % p != 0 or w % p != 0:
            raise ValueError(f"input size {input_size} not divisible by patch size {p}")
        self.config = config
        self.grid = (h // p, w // p)
        self.patch_embed = nn.Conv2d(3, config.embed_dim, kernel_size=p, stride=p)
        self.pos_embed = nn.Parameter(torch.zeros(1, config.embed_dim, *self.grid))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(config.embed_dim, config.num_heads, config.mlp_ratio)
            for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(config.embed_dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        b, c, h, w = images.shape
        if (h // self.config.patch_size, w // self.config.patch_size) != self.grid:
            raise ValueError(f"input {images.shape[-2:]} does not match encoder grid {self.grid}")
        x = self.patch_embed(images) + self.pos_embed  # (B, D, gh, gw)
        gh, gw = self.grid
        x = x.flatten(2).transpose(1, 2)  # (B, N, D)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return x.transpose(1, 2).reshape(b, -1, gh, gw)


class HeatmapHead(nn.Module):
    """Token map -> per-joint heatmaps at ``upscale`` times the token grid.

    Two convolution stages; nearest-neighbor doublings are distributed over
    them to reach the target resolution, followed by a 1x1 projection to one
    channel per joint.
    """

    def __init__(self, in_dim: int, num_joints: int, upscale: int = 2, width: int | None = None):
        super().__init__()
        if upscale < 1 or upscale & (upscale - 1):
            raise ValueError(f"upscale must be a power of two, got {upscale}")
        width = width or in_dim
        doublings = upscale.bit_length() - 1
        factors = [2 if i < doublings else 1 for i in range(max(2, doublings))]
        self.norm = nn.GroupNorm(1, in_dim)
        stages = []
        ch = in_dim
        for f in factors:
            stage = []
            if f > 1:
                stage.append(nn.Upsample(scale_factor=f, mode="nearest"))
            stage += [nn.Conv2d(ch, width, 3, padding=1), nn.GELU()]
            stages.append(nn.Sequential(*stage))
            ch = width
        self.stages = nn.ModuleList(stages)
        self.out = nn.Conv2d(width, num_joints, 1)

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        x = self.norm(feature)
        for stage in self.stages:
            x = stage(x)
        return self.out(x)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
