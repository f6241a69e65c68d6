"""The full gaze-estimation network: appearance branch, optional prior-feature
fusion, double regression heads, and the semantic pair-alignment branch.

Only the extractor -> (fusion) -> aggregator -> MLP-head path runs at
inference; the masked head and the semantic branch exist for training only.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn

from .appearance import (
    AdaptiveFeatureRefinement,
    ConcatFusion,
    CrossAttentionFusion,
    FeatureGridExtractor,
    GatedFusion,
    TokenAggregator,
    resize_token_grid,
)
from .backend import VisionLanguageBackend
from .config import ConfigError, RunConfig
from .regressor import MlpHead
from .semantic import GradeScheme, PairEmbedder, builtin_scheme, load_grade_scheme, normalize_rows


class DCGazeModel(nn.Module):
    """Assembles the configured sub-modules and owns the inference path."""

    def __init__(self, config: RunConfig, backend: VisionLanguageBackend | None = None):
        super().__init__()
        self.config = config
        self.backend = backend
        torch.manual_seed(config.seed)

        c = config.feature_dim
        if c % 2 != 0:
            raise ConfigError(f"feature_dim must be even for the masked head, got {c}")
        num_tokens = config.grid_h * config.grid_w
        temp = config.attention_temperature or None

        self.extractor = FeatureGridExtractor(c, config.grid_h, config.grid_w)
        self.aggregator = TokenAggregator(
            c, num_tokens, layers=config.transformer_layers,
            heads=config.attention_heads, mode=config.mode)
        self.mlp_head = MlpHead(c)

        self.fusion_kind = config.fusion if config.use_afu else "none"
        if self.fusion_kind != "none":
            if backend is None:
                raise ConfigError(
                    f"fusion = {self.fusion_kind} requires a configured backend")
            d_prior = backend.embed_dim
            if self.fusion_kind == "afu":
                self.afu = AdaptiveFeatureRefinement(c, d_prior, temperature=temp)
            elif self.fusion_kind == "concat":
                self.fuser = ConcatFusion(c, d_prior)
            elif self.fusion_kind == "cross_attention":
                self.fuser = CrossAttentionFusion(c, d_prior, temperature=temp)
            elif self.fusion_kind == "gated":
                if d_prior != c:
                    raise ConfigError(
                        f"gated fusion needs backend embed_dim == feature_dim "
                        f"({d_prior} != {c})")
                self.fuser = GatedFusion()

        if config.use_dctrain:
            if backend is None:
                raise ConfigError("use_dctrain requires a configured backend")
            self.pair_embedder = PairEmbedder(c, backend.embed_dim)
            self.grade_scheme: GradeScheme = (
                load_grade_scheme(config.grade_scheme_file)
                if config.grade_scheme_file else builtin_scheme(config.grade_k))
            self._prompt_cache: torch.Tensor | None = None

    # -- backend feature helpers -------------------------------------------

    def _prior_grids(self, raw_images: Sequence[np.ndarray]) -> torch.Tensor:
        grids = torch.stack([self.backend.encode_image_spatial(img) for img in raw_images])
        return resize_token_grid(grids, self.backend.spatial_grid_shape,
                                 (self.config.grid_h, self.config.grid_w))

    def _prior_globals(self, raw_images: Sequence[np.ndarray]) -> torch.Tensor:
        return torch.stack([self.backend.encode_image_global(img) for img in raw_images])

    def prompt_embeddings(self) -> torch.Tensor:
        """Frozen text embeddings of the K grade prompts, row-normalized.
        Built once per scheme and reused for every pair."""
        if self._prompt_cache is None:
            with torch.no_grad():
                embs = torch.stack([self.backend.encode_text(p)
                                    for p in self.grade_scheme.prompts()])
            self._prompt_cache = normalize_rows(embs)
        return self._prompt_cache

    # -- forward paths ------------------------------------------------------

    def forward_features(self, images: torch.Tensor,
                         raw_images: Sequence[np.ndarray] | None = None) -> torch.Tensor:
        """Images -> final per-image appearance features (B, C)."""
        grid = self.extractor(images)
        kind = self.fusion_kind
        if kind == "none":
            return self.aggregator(grid)
        if raw_images is None:
            raw_images = [img.detach().cpu().numpy() for img in images]
        if kind == "afu":
            enhanced = self.afu(grid, self._prior_grids(raw_images))
            return self.aggregator(enhanced)
        primary = self.aggregator(grid)
        return self.fuser(primary, self._prior_globals(raw_images))

    def forward(self, images: torch.Tensor,
                raw_images: Sequence[np.ndarray] | None = None) -> torch.Tensor:
        return self.mlp_head(self.forward_features(images, raw_images))

    @torch.no_grad()
    def infer(self, images: torch.Tensor,
              raw_images: Sequence[np.ndarray] | None = None) -> torch.Tensor:
        """Deterministic inference path; semantic branch and masked head are
        never touched."""
        was_training = self.training
        self.eval()
        try:
            return self.forward(images, raw_images)
        finally:
            self.train(was_training)

    # -- parameter groups ---------------------------------------------------

    def primary_parameters(self):
        """Trainable parameters excluding the backend encoders."""
        backend_ids = set()
        if self.backend is not None:
            backend_ids = {id(p) for p in self.backend.parameters()}
        return [p for p in self.parameters() if id(p) not in backend_ids]

    def encoder_parameters(self):
        if self.backend is None:
            return []
        return [p for p in self.backend.image_parameters() if p.requires_grad]
