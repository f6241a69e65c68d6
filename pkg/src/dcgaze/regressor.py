"""Double-head gaze regressor: an MLP head plus a parameter-free masked
max-pool head used only during training as a regularizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


class MlpHead(nn.Module):
    """Project a C-dimensional appearance feature to a (pitch, yaw) pair."""

    def __init__(self, feature_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(feature_dim, feature_dim),
            nn.ReLU(inplace=True),
            nn.Linear(feature_dim, 2),
        )

    def forward(self, feature: torch.Tensor) -> torch.Tensor:
        return self.net(feature)


def gaze_loss(preds: torch.Tensor, truths: torch.Tensor) -> torch.Tensor:
    """Mean L1 norm between predicted and true (pitch, yaw) pairs."""
    if preds.numel() == 0:
        raise ValueError("empty prediction batch")
    if preds.shape != truths.shape:
        raise ValueError(f"shape mismatch: {tuple(preds.shape)} vs {tuple(truths.shape)}")
    return (preds - truths).abs().sum(dim=-1).mean()


# Same contract as gaze_loss; kept as a distinct name so the two loss terms
# stay separately identifiable in metrics.
mask_loss = gaze_loss


@dataclass(frozen=True)
class FeatureMask:
    """A {0,1} vector with an exact number of zeros set by the drop ratio."""

    bits: np.ndarray
    drop_ratio: float

    def as_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.from_numpy(self.bits).to(dtype)


def make_mask(c: int, drop_ratio: float, rng: np.random.Generator | int) -> FeatureMask:
    """Draw a length-C mask with exactly round(drop_ratio * C) zeros.

    Zero positions are uniformly random under the provided generator/seed.
    """
    if not 0.0 <= drop_ratio <= 1.0:
        raise ValueError(f"drop_ratio must be in [0, 1], got {drop_ratio}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    n_zero = round(drop_ratio * c)
    bits = np.ones(c, dtype=np.float64)
    bits[rng.permutation(c)[:n_zero]] = 0.0
    return FeatureMask(bits=bits, drop_ratio=drop_ratio)


def masked_head(feature: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Parameter-free head: mask the feature, then max-pool each half to one
    coordinate, giving a (pitch, yaw) pair.
    """
    c = feature.shape[-1]
    if c % 2 != 0:
        raise ValueError(f"masked head requires an even feature dim, got {c}")
    if mask.shape[-1] != c:
        raise ValueError(f"mask length {mask.shape[-1]} != feature dim {c}")
    masked = feature * mask
    half = c // 2
    return torch.stack([masked[..., :half].max(dim=-1).values,
                        masked[..., half:].max(dim=-1).values], dim=-1)
