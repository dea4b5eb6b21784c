"""Ground-truth heatmap rendering, sub-pixel decoding and heatmap-stack
arithmetic.

Rendering follows the common convention for heatmap supervision: each joint
produces an unnormalized Gaussian with value exactly 1.0 at the joint's
(quantized) heatmap pixel. Absent joints produce all-zero channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ABSENT, VISIBLE, HeatmapStack, Pose

# Responses below this are treated as "no joint present" when decoding.
ABSENCE_THRESHOLD = 0.05


@dataclass(frozen=True)
class RenderParams:
    """Geometry of the heatmap grid relative to the input crop."""

    resolution: tuple[int, int]  # (H', W')
    sigma: float = 2.0  # std-dev in heatmap pixels
    stride: float = 4.0  # input pixels per heatmap pixel

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.resolution[0] <= 0 or self.resolution[1] <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")


def render_heatmaps(pose: Pose, params: RenderParams) -> HeatmapStack:
    """Render one unnormalized Gaussian per joint, peak value 1.0.

    Joint coordinates are in input-pixel units; the Gaussian is centered at
    the nearest heatmap pixel so the peak is exactly 1.0 whenever that pixel
    lies inside the grid. Out-of-bounds joints contribute their in-bounds
    tail. Absent joints yield all-zero channels.
    """
    h, w = params.resolution
    j = pose.joint_count
    mu = np.floor(pose.coords / params.stride + 0.5)  # (J, 2) integer grid centers
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    dx2 = (xs[None, None, :] - mu[:, 0][:, None, None]) ** 2  # (J, 1, W)
    dy2 = (ys[None, :, None] - mu[:, 1][:, None, None]) ** 2  # (J, H, 1)
    values = np.exp(-(dx2 + dy2) / (2.0 * params.sigma**2))
    values[pose.visibility == ABSENT] = 0.0
    return HeatmapStack(values.astype(np.float32), origin="rendered")


def decode_heatmaps(stack: HeatmapStack, params: RenderParams) -> Pose:
    """Recover joint coordinates from a heatmap stack.

    Per joint: take the (row-major first) argmax, shift a quarter pixel
    toward the larger of the two neighbors along each axis, and map back to
    input pixels via the stride. Joints whose peak response is below
    ``ABSENCE_THRESHOLD`` are marked absent.
    """
    values = stack.values
    j, h, w = values.shape
    coords = np.zeros((j, 2), dtype=np.float64)
    vis = np.full(j, VISIBLE, dtype=np.int8)
    for idx in range(j):
        channel = values[idx]
        flat = int(np.argmax(channel))
        y, x = divmod(flat, w)
        peak = channel[y, x]
        if peak < ABSENCE_THRESHOLD:
            vis[idx] = ABSENT
        fx, fy = float(x), float(y)
        if 0 < x < w - 1:
            fx += 0.25 * np.sign(channel[y, x + 1] - channel[y, x - 1])
        if 0 < y < h - 1:
            fy += 0.25 * np.sign(channel[y + 1, x] - channel[y - 1, x])
        coords[idx] = (fx * params.stride, fy * params.stride)
    return Pose(coords, vis)


def pose_residual(a: HeatmapStack, b: HeatmapStack) -> HeatmapStack:
    """Elementwise a - b; antisymmetric by construction."""
    if a.values.shape != b.values.shape:
        raise ValueError(f"shape mismatch: {a.values.shape} vs {b.values.shape}")
    return HeatmapStack(a.values - b.values, origin="residual")
