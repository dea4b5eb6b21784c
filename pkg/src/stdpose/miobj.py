"""Variational mutual-information estimation and the composite MI training
objective.

The estimator is a batch-contrastive lower bound: a small statistics
network scores paired samples against in-batch shuffled (rolled) pairs, and
the estimate is ``mean(paired scores) - log mean exp(shuffled scores)``.
Estimator training uses the standard exponential-moving-average correction
for the log-partition gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

# Statistics-network scores are clamped here; bounds the exp term without
# limiting achievable estimates at desk scale.
_SCORE_CLAMP = 30.0


@dataclass(frozen=True)
class MILossWeights:
    alpha: float = 0.1
    beta: float = 0.01

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"loss weights must be non-negative, got {self.alpha}, {self.beta}")


class MIEstimator(nn.Module):
    """Statistics network for one pair of variables.

    Inputs are projected to ``proj_dim`` and scored by a 2-layer MLP over
    the concatenated pair. ``ema_decay`` controls the moving-average
    normalization baseline used during estimator updates.
    """

    def __init__(
        self,
        x_dim: int,
        y_dim: int,
        proj_dim: int = 64,
        hidden_dim: int = 128,
        ema_decay: float = 0.99,
    ):
        super().__init__()
        self.proj_x = nn.Linear(x_dim, proj_dim)
        self.proj_y = nn.Linear(y_dim, proj_dim)
        self.net = nn.Sequential(
            nn.Linear(2 * proj_dim, hidden_dim), nn.ReLU(), nn.Linear(hidden_dim, 1)
        )
        self.ema_decay = ema_decay
        self.register_buffer("ema", torch.tensor(0.0))
        self.register_buffer("ema_ready", torch.tensor(False))

    def score(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        s = self.net(torch.cat([self.proj_x(x), self.proj_y(y)], dim=-1)).squeeze(-1)
        return torch.clamp(s, -_SCORE_CLAMP, _SCORE_CLAMP)


def _paired_and_shuffled(x, y, estimator, num_shuffles):
    b = x.shape[0]
    if b < 2:
        raise ValueError(f"mutual-information estimation needs a batch of >= 2, got {b}")
    if y.shape[0] != b:
        raise ValueError(f"batches must be aligned, got {b} and {y.shape[0]}")
    pos = estimator.score(x, y)
    k = min(b - 1, num_shuffles)
    rolled = torch.cat([torch.roll(y, r, dims=0) for r in range(1, k + 1)], dim=0)
    neg = estimator.score(x.repeat(k, 1), rolled)
    return pos, neg


def estimate_mi(
    samples_x: torch.Tensor,
    samples_y: torch.Tensor,
    estimator: MIEstimator,
    num_shuffles: int = 8,
) -> torch.Tensor:
    """Lower-bound MI estimate in nats; differentiable w.r.t. both sample
    batches and the estimator parameters."""
    pos, neg = _paired_and_shuffled(samples_x, samples_y, estimator, num_shuffles)
    return pos.mean() - (torch.logsumexp(neg, dim=0) - math.log(neg.shape[0]))


def estimator_update_loss(
    samples_x: torch.Tensor,
    samples_y: torch.Tensor,
    estimator: MIEstimator,
    num_shuffles: int = 8,
) -> torch.Tensor:
    """Loss whose minimization tightens the bound, with the EMA-normalized
    gradient for the log-partition term. Updates the estimator's EMA buffer."""
    pos, neg = _paired_and_shuffled(samples_x, samples_y, estimator, num_shuffles)
    exp_mean = torch.exp(neg).mean()
    with torch.no_grad():
        if not bool(estimator.ema_ready):
            estimator.ema.fill_(exp_mean)
            estimator.ema_ready.fill_(True)
        else:
            estimator.ema.mul_(estimator.ema_decay).add_((1 - estimator.ema_decay) * exp_mean)
    return -(pos.mean() - exp_mean / estimator.ema.clamp_min(1e-8))


def fit_estimator(
    estimator: MIEstimator,
    sample_fn,
    steps: int,
    batch_size: int,
    lr: float = 1e-3,
    num_shuffles: int = 8,
) -> None:
    """Train an estimator to tightness on samples drawn from ``sample_fn``."""
    opt = torch.optim.AdamW(estimator.parameters(), lr=lr)
    for _ in range(steps):
        x, y = sample_fn(batch_size)
        opt.zero_grad()
        loss = estimator_update_loss(x, y, estimator, num_shuffles)
        loss.backward()
        opt.step()


def pool_spatial(t: torch.Tensor) -> torch.Tensor:
    """Mean-pool a (B, C, H, W) map (or pass a (B, C) batch through) to a
    per-sample vector."""
    if t.dim() == 4:
        return t.mean(dim=(2, 3))
    if t.dim() == 2:
        return t
    raise ValueError(f"expected (B, C, H, W) or (B, C), got shape {tuple(t.shape)}")


class MIObjective(nn.Module):
    """The four estimators of the composite objective.

    Terms: relevance of the fused features / merged heatmaps to the label,
    minus their redundancy with the key frame's own feature / heatmaps. The
    conditional redundancy terms dropped by the simplification are never
    computed.
    """

    def __init__(self, feat_dim: int, heatmap_dim: int, weights: MILossWeights = MILossWeights()):
        super().__init__()
        self.weights = weights
        self.est_label_feat = MIEstimator(heatmap_dim, feat_dim)
        self.est_feat_feat = MIEstimator(feat_dim, feat_dim)
        self.est_label_heat = MIEstimator(heatmap_dim, heatmap_dim)
        self.est_heat_heat = MIEstimator(heatmap_dim, heatmap_dim)

    def estimators(self):
        return (self.est_label_feat, self.est_feat_feat, self.est_label_heat, self.est_heat_heat)

    def loss(self, gt_heatmaps, f_fused, f_key, h_merged, h_key) -> torch.Tensor:
        return mi_loss(
            gt_heatmaps, f_fused, f_key, h_merged, h_key, self.weights, self.estimators()
        )

    def update_loss(self, gt_heatmaps, f_fused, f_key, h_merged, h_key) -> torch.Tensor:
        """Sum of bound-tightening losses over all four estimators, on
        detached representations."""
        y = pool_spatial(gt_heatmaps).detach()
        ff, fk = pool_spatial(f_fused).detach(), pool_spatial(f_key).detach()
        hm, hk = pool_spatial(h_merged).detach(), pool_spatial(h_key).detach()
        return (
            estimator_update_loss(y, ff, self.est_label_feat)
            + estimator_update_loss(ff, fk, self.est_feat_feat)
            + estimator_update_loss(y, hm, self.est_label_heat)
            + estimator_update_loss(hm, hk, self.est_heat_heat)
        )


def mi_loss(gt_heatmaps, f_fused, f_key, h_merged, h_key, weights, estimators) -> torch.Tensor:
    """Composite MI loss: -alpha * [I(y; F_fused) - I(F_fused; F_key)]
    - beta * [I(y; H_merged) - I(H_merged; H_key)]."""
    if weights.alpha == 0 and weights.beta == 0:
        return torch.zeros(())
    est_label_feat, est_feat_feat, est_label_heat, est_heat_heat = estimators
    y = pool_spatial(gt_heatmaps)
    total = torch.zeros(())
    if weights.alpha > 0:
        ff, fk = pool_spatial(f_fused), pool_spatial(f_key)
        total = total - weights.alpha * (
            estimate_mi(y, ff, est_label_feat) - estimate_mi(ff, fk, est_feat_feat)
        )
    if weights.beta > 0:
        hm, hk = pool_spatial(h_merged), pool_spatial(h_key)
        total = total - weights.beta * (
            estimate_mi(y, hm, est_label_heat) - estimate_mi(hm, hk, est_heat_heat)
        )
    return total
