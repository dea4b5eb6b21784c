"""Pose decoding: motion-mask generation from pose residuals and the
cross-attention aggregation that fuses features, merged heatmaps and the
mask into the final prediction."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import FeedForward, HeatmapHead, MultiHeadSelfAttention

# Exponent clamp: the sigmoid saturates instead of overflowing.
_EXP_CLAMP = 50.0


@dataclass(frozen=True)
class DAMParams:
    k: float = 1.5
    theta: float = 0.5
    fwd_weight: float = 0.5
    bwd_weight: float = 0.5

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError(f"slope k must be positive, got {self.k}")


@dataclass(frozen=True)
class PADecoderConfig:
    num_pa_blocks: int = 2
    embed_dim: int = 64
    num_heads: int = 4
    mlp_ratio: float = 4.0
    heatmap_patch_size: int = 2

    def __post_init__(self):
        if self.num_pa_blocks < 1:
            raise ValueError("num_pa_blocks must be >= 1")


def modified_sigmoid(x: torch.Tensor, k: float = 1.5, theta: float = 0.5) -> torch.Tensor:
    """1 / (1 + exp(-k * (|x| - theta))), elementwise.

    Even in x and strictly increasing in |x|: negative residuals activate
    exactly like positive ones. Value at x=0 is 1 / (1 + exp(k * theta)),
    supremum 1. The exponent is clamped so large inputs saturate instead of
    overflowing.
    """
    if k <= 0:
        raise ValueError(f"slope k must be positive, got {k}")
    x = torch.as_tensor(x)
    z = torch.clamp(-k * (torch.abs(x) - theta), -_EXP_CLAMP, _EXP_CLAMP)
    return 1.0 / (1.0 + torch.exp(z))


class DynamicMaskGenerator(nn.Module):
    """Softmax-normalized single-channel motion mask from heatmap triplets.

    Forward residual H_key - H_left and backward residual H_right - H_key
    are activated by the modified sigmoid, compressed to one channel by a
    shared 1x1 convolution (initialized to the channel mean), combined with
    learnable forward/backward weights, and softmax-normalized over all
    spatial positions.
    """

    def __init__(self, num_joints: int, params: DAMParams = DAMParams()):
        super().__init__()
        self.k = params.k
        self.theta = params.theta
        self.fwd_weight = nn.Parameter(torch.tensor(params.fwd_weight))
        self.bwd_weight = nn.Parameter(torch.tensor(params.bwd_weight))
        self.compress = nn.Conv2d(num_joints, 1, 1)
        nn.init.constant_(self.compress.weight, 1.0 / num_joints)
        nn.init.zeros_(self.compress.bias)

    def forward(self, h_left, h_key, h_right):
        if not (h_left.shape == h_key.shape == h_right.shape):
            raise ValueError(
                f"heatmap stacks must share one shape, got {h_left.shape}, {h_key.shape}, {h_right.shape}"
            )
        fwd = modified_sigmoid(h_key - h_left, self.k, self.theta)
        bwd = modified_sigmoid(h_right - h_key, self.k, self.theta)
        combined = self.fwd_weight * self.compress(fwd) + self.bwd_weight * self.compress(bwd)
        b, _, h, w = combined.shape
        mask = torch.softmax(combined.reshape(b, -1), dim=-1)
        return mask.reshape(b, 1, h, w)


def cross_attention(z, feat_tokens, w_q, w_k, w_v):
    """Single-head cross attention: Q from the token stream, K and V from
    the feature tokens; softmax(Q K^T / sqrt(D)) V."""
    if z.shape[-1] != w_q.shape[0]:
        raise ValueError(f"query dim {z.shape[-1]} does not match W_Q rows {w_q.shape[0]}")
    if feat_tokens.shape[-1] != w_k.shape[0] or feat_tokens.shape[-1] != w_v.shape[0]:
        raise ValueError(
            f"feature dim {feat_tokens.shape[-1]} does not match W_K/W_V rows "
            f"{w_k.shape[0]}/{w_v.shape[0]}"
        )
    if not (w_q.shape[1] == w_k.shape[1] == w_v.shape[1]):
        raise ValueError("W_Q, W_K, W_V must map to one embedding dimension")
    d = w_q.shape[1]
    q = z @ w_q
    k = feat_tokens @ w_k
    v = feat_tokens @ w_v
    attn = torch.softmax(q @ k.transpose(-2, -1) / d**0.5, dim=-1)
    return attn @ v


class CrossAttentionLayer(nn.Module):
    def __init__(self, query_dim: int, feat_dim: int, embed_dim: int):
        super().__init__()
        self.w_q = nn.Parameter(torch.empty(query_dim, embed_dim))
        self.w_k = nn.Parameter(torch.empty(feat_dim, embed_dim))
        self.w_v = nn.Parameter(torch.empty(feat_dim, embed_dim))
        for w in (self.w_q, self.w_k, self.w_v):
            nn.init.trunc_normal_(w, std=0.02)

    def forward(self, z, feat_tokens):
        return cross_attention(z, feat_tokens, self.w_q, self.w_k, self.w_v)


class PoseAggregationBlock(nn.Module):
    """Self-attention, cross-attention to the fused features, and a
    feed-forward network; pre-norm with residual connections."""

    def __init__(self, embed_dim: int, feat_dim: int, num_heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(embed_dim)
        self.self_attn = MultiHeadSelfAttention(embed_dim, num_heads)
        self.norm2 = nn.LayerNorm(embed_dim)
        self.cross_attn = CrossAttentionLayer(embed_dim, feat_dim, embed_dim)
        self.norm3 = nn.LayerNorm(embed_dim)
        self.ffn = FeedForward(embed_dim, mlp_ratio)

    def forward(self, z, feat_tokens):
        z = z + self.self_attn(self.norm1(z))
        z = z + self.cross_attn(self.norm2(z), feat_tokens)
        z = z + self.ffn(self.norm3(z))
        return z


class PoseDecoder(nn.Module):
    """Aggregate fused features, merged heatmaps and the motion mask into
    final heatmaps of shape (B, J, H', W')."""

    def __init__(
        self,
        num_joints: int,
        feat_dim: int,
        heatmap_size: tuple[int, int],
        config: PADecoderConfig = PADecoderConfig(),
    ):
        super().__init__()
        p = config.heatmap_patch_size
        hh, ww = heatmap_size
        if hh % p != 0 or ww % p != 0:
            raise ValueError(f"heatmap size {heatmap_size} not divisible by patch size {p}")
        self.heatmap_size = heatmap_size
        self.grid = (hh // p, ww // p)
        d = config.embed_dim
        self.patch_embed = nn.Conv2d(2 * num_joints, d, kernel_size=p, stride=p)
        self.pos_embed = nn.Parameter(torch.zeros(1, self.grid[0] * self.grid[1], d))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.feat_norm = nn.LayerNorm(feat_dim)
        self.blocks = nn.ModuleList(
            PoseAggregationBlock(d, feat_dim, config.num_heads, config.mlp_ratio)
            for _ in range(config.num_pa_blocks)
        )
        self.norm = nn.LayerNorm(d)
        self.head = HeatmapHead(d, num_joints, upscale=p)

    def forward(self, f_fused, h_merged, mask):
        b, j2, hh, ww = h_merged.shape
        if (hh, ww) != self.heatmap_size:
            raise ValueError(f"heatmap size {(hh, ww)} does not match decoder {self.heatmap_size}")
        if mask.shape[-2:] != (hh, ww) or mask.shape[1] != 1:
            raise ValueError(f"mask shape {tuple(mask.shape)} incompatible with heatmaps {(hh, ww)}")
        masked = h_merged * mask
        z = self.patch_embed(torch.cat([masked, h_merged], dim=1))  # (B, D, gh, gw)
        z = z.flatten(2).transpose(1, 2) + self.pos_embed  # (B, N, D)
        feat_tokens = self.feat_norm(f_fused.flatten(2).transpose(1, 2))
        for block in self.blocks:
            z = block(z, feat_tokens)
        z = self.norm(z)
        z = z.transpose(1, 2).reshape(b, -1, *self.grid)
        return self.head(z)
