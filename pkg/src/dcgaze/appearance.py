"""Visual appearance branch: CNN feature grids, transformer token aggregation,
attention-based feature refinement, and the alternative fusion baselines.

The pipeline is: a small convolutional extractor produces an H x W x C token
grid; the refinement unit mixes those tokens with an attention mask built
from both the grid itself and a prior grid supplied by the vision-language
backend; a transformer with a learnable aggregation token then collapses the
grid into a single C-dimensional appearance feature.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class FeatureGridExtractor(nn.Module):
    """Convolutional backbone producing an (H*W, C) token grid per image.

    Input is a (B, 3, H0, W0) float tensor; the spatial output is adaptively
    pooled to the configured (grid_h, grid_w), 7x7 by default.
    """

    def __init__(self, feature_dim: int = 32, grid_h: int = 7, grid_w: int = 7):
        super().__init__()
        self.feature_dim = feature_dim
        self.grid_h = grid_h
        self.grid_w = grid_w
        widths = [16, 32, 32, feature_dim]
        layers: list[nn.Module] = []
        in_ch = 3
        for w in widths:
            layers += [nn.Conv2d(in_ch, w, 3, stride=2, padding=1),
                       nn.BatchNorm2d(w), nn.ReLU(inplace=True)]
            in_ch = w
        self.conv = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d((grid_h, grid_w))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        x = self.pool(self.conv(images))
        b, c = x.shape[0], x.shape[1]
        return x.reshape(b, c, self.grid_h * self.grid_w).transpose(1, 2)


class TokenAggregator(nn.Module):
    """Collapse a token grid into one feature vector.

    Within-domain mode: a transformer encoder over [agg_token; patches] plus a
    learnable position embedding, reading out row 0. Cross-domain mode swaps
    the transformer for a 3-layer MLP over the flattened tokens.
    """

    def __init__(self, feature_dim: int = 32, num_tokens: int = 49,
                 layers: int = 6, heads: int = 8, mode: str = "within_domain"):
        super().__init__()
        if mode not in ("within_domain", "cross_domain"):
            raise ValueError(f"unknown mode {mode!r}")
        self.feature_dim = feature_dim
        self.num_tokens = num_tokens
        self.mode = mode
        if mode == "within_domain":
            self.agg_token = nn.Parameter(torch.zeros(1, 1, feature_dim))
            self.pos = nn.Parameter(torch.zeros(1, 1 + num_tokens, feature_dim))
            nn.init.normal_(self.agg_token, std=0.02)
            nn.init.normal_(self.pos, std=0.02)
            layer = nn.TransformerEncoderLayer(
                d_model=feature_dim, nhead=heads, dim_feedforward=4 * feature_dim,
                dropout=0.0, batch_first=True, norm_first=True)
            self.encoder = nn.TransformerEncoder(layer, num_layers=layers,
                                                 enable_nested_tensor=False)
        else:
            hidden = max(feature_dim * 2, 64)
            self.mlp = nn.Sequential(
                nn.Linear(num_tokens * feature_dim, hidden), nn.ReLU(inplace=True),
                nn.Linear(hidden, hidden), nn.ReLU(inplace=True),
                nn.Linear(hidden, feature_dim))

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        if grid.dim() == 2:
            grid = grid.unsqueeze(0)
        b, n, c = grid.shape
        if n != self.num_tokens or c != self.feature_dim:
            raise ValueError(
                f"grid shape {(n, c)} does not match ({self.num_tokens}, {self.feature_dim})")
        if self.mode == "cross_domain":
            return self.mlp(grid.reshape(b, -1))
        x = torch.cat([self.agg_token.expand(b, -1, -1), grid], dim=1) + self.pos
        return self.encoder(x)[:, 0, :]


class SelfAttentionMap(nn.Module):
    """Row-stochastic (H*W)^2 attention map from learned Q/K projections."""

    def __init__(self, in_dim: int, proj_dim: int, temperature: float | None = None):
        super().__init__()
        if temperature is None:
            temperature = math.sqrt(proj_dim)
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.temperature = temperature
        self.w_q = nn.Linear(in_dim, proj_dim, bias=False)
        self.w_k = nn.Linear(in_dim, proj_dim, bias=False)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        q, k = self.w_q(tokens), self.w_k(tokens)
        return torch.softmax(q @ k.transpose(-2, -1) / self.temperature, dim=-1)


def resize_token_grid(tokens: torch.Tensor, src_hw: tuple[int, int],
                      dst_hw: tuple[int, int]) -> torch.Tensor:
    """Bilinearly resize an (..., H*W, C) token grid between spatial shapes."""
    if src_hw == dst_hw:
        return tokens
    squeeze = tokens.dim() == 2
    if squeeze:
        tokens = tokens.unsqueeze(0)
    b, n, c = tokens.shape
    if n != src_hw[0] * src_hw[1]:
        raise ValueError(f"{n} tokens cannot form a {src_hw} grid")
    x = tokens.transpose(1, 2).reshape(b, c, *src_hw)
    x = F.interpolate(x, size=dst_hw, mode="bilinear", align_corners=False)
    out = x.reshape(b, c, dst_hw[0] * dst_hw[1]).transpose(1, 2)
    return out.squeeze(0) if squeeze else out


class AdaptiveFeatureRefinement(nn.Module):
    """Refine primary tokens with the sum of two self-attention masks.

    One mask comes from the backend's prior token grid, one from the primary
    grid itself; their sum mixes the primary tokens:
    enhanced = (M_prior + M_primary) @ primary.
    """

    def __init__(self, primary_dim: int, prior_dim: int, proj_dim: int | None = None,
                 temperature: float | None = None):
        super().__init__()
        proj_dim = proj_dim or primary_dim
        self.prior_attention = SelfAttentionMap(prior_dim, proj_dim, temperature)
        self.primary_attention = SelfAttentionMap(primary_dim, proj_dim, temperature)

    def forward(self, primary_grid: torch.Tensor, prior_grid: torch.Tensor) -> torch.Tensor:
        if primary_grid.shape[-2] != prior_grid.shape[-2]:
            raise ValueError(
                f"token counts differ after resize: {primary_grid.shape[-2]} vs "
                f"{prior_grid.shape[-2]}")
        mask = self.prior_attention(prior_grid) + self.primary_attention(primary_grid)
        return mask @ primary_grid


class ConcatFusion(nn.Module):
    """Concatenate primary feature and prior embedding, project back to C."""

    def __init__(self, primary_dim: int, prior_dim: int):
        super().__init__()
        self.proj = nn.Linear(primary_dim + prior_dim, primary_dim)

    def forward(self, primary: torch.Tensor, prior: torch.Tensor) -> torch.Tensor:
        if prior.dim() == 1:
            prior = prior.unsqueeze(0).expand(primary.shape[0], -1) \
                if primary.dim() == 2 else prior
        return self.proj(torch.cat([primary, prior], dim=-1))


class CrossAttentionFusion(nn.Module):
    """Primary feature as query, prior embedding tokens as key/value."""

    def __init__(self, primary_dim: int, prior_dim: int, proj_dim: int | None = None,
                 temperature: float | None = None):
        super().__init__()
        proj_dim = proj_dim or primary_dim
        if temperature is None:
            temperature = math.sqrt(proj_dim)
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.temperature = temperature
        self.w_q = nn.Linear(primary_dim, proj_dim, bias=False)
        self.w_k = nn.Linear(prior_dim, proj_dim, bias=False)
        self.w_v = nn.Linear(prior_dim, primary_dim, bias=False)

    def forward(self, primary: torch.Tensor, prior: torch.Tensor) -> torch.Tensor:
        # prior may be a single embedding (one token) or a token grid
        if prior.dim() == primary.dim():
            prior = prior.unsqueeze(-2)
        q = self.w_q(primary).unsqueeze(-2)
        k, v = self.w_k(prior), self.w_v(prior)
        attn = torch.softmax(q @ k.transpose(-2, -1) / self.temperature, dim=-1)
        return (attn @ v).squeeze(-2)


class GatedFusion(nn.Module):
    """Gate the primary feature elementwise by sigmoid of the prior embedding."""

    def forward(self, primary: torch.Tensor, prior: torch.Tensor) -> torch.Tensor:
        if primary.shape[-1] != prior.shape[-1]:
            raise ValueError(
                f"gated fusion needs equal dims, got {primary.shape[-1]} and "
                f"{prior.shape[-1]}")
        return primary * torch.sigmoid(prior)
