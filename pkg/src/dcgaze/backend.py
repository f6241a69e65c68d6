"""Pluggable vision-language encoder pair (image encoder + text encoder).

The rest of the system only sees this interface. Two implementations ship:

* ``StubBackend`` -- deterministic, weight-free feature hashing followed by
  small seeded linear encoders. It needs no downloaded weights, is
  bit-reproducible across processes given (seed, input bytes), and still
  carries real parameters so freezing / fine-tuning policies are testable.
* ``PretrainedBackend`` -- loads an actual CLIP-style checkpoint from disk
  (``DCGAZE_BACKEND_DIR`` or an explicit path).
"""

from __future__ import annotations

import hashlib
import os

import numpy as np
import torch
from torch import nn

BACKEND_DIR_ENV = "DCGAZE_BACKEND_DIR"


class BackendLoadError(RuntimeError):
    """Raised when a backend cannot be constructed."""


def _unit(v: torch.Tensor, dim: int = -1) -> torch.Tensor:
    norm = v.norm(dim=dim, keepdim=True).clamp_min(1e-12)
    return v / norm


class VisionLanguageBackend(nn.Module):
    """Interface over an (image encoder, text encoder) pair.

    Attributes:
        embed_dim: dimension of text and global image embeddings.
        spatial_grid_shape: (H', W') of the spatial token grid.
        supports_spatial: whether encode_image_spatial is available.
        trainable_image_encoder: whether image-encoder params may be updated.
    """

    embed_dim: int
    spatial_grid_shape: tuple[int, int]
    supports_spatial: bool = True
    trainable_image_encoder: bool = False

    def encode_text(self, prompt: str) -> torch.Tensor:
        raise NotImplementedError

    def encode_image_spatial(self, image) -> torch.Tensor:
        raise NotImplementedError

    def encode_image_global(self, image) -> torch.Tensor:
        raise NotImplementedError

    def text_parameters(self):
        return []

    def image_parameters(self):
        return []


def _digest_seed(seed: int, payload: bytes) -> int:
    h = hashlib.sha256(str(seed).encode() + b"\x00" + payload)
    return int.from_bytes(h.digest()[:8], "little")


def _image_bytes(image) -> bytes:
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
    arr = np.ascontiguousarray(image)
    return str(arr.shape).encode() + str(arr.dtype).encode() + arr.tobytes()


class StubBackend(VisionLanguageBackend):
    """Deterministic desk-scale backend.

    Inputs are hashed (sha256 of the raw bytes plus the seed) into fixed
    pseudo-random base features, which then pass through small seeded linear
    encoders. The text encoder is frozen; the per-token image projection is
    trainable when ``finetune_image_encoder`` is set.
    """

    def __init__(self, seed: int = 0, embed_dim: int = 64,
                 grid_shape: tuple[int, int] = (7, 7),
                 finetune_image_encoder: bool = False):
        super().__init__()
        self.seed = seed
        self.embed_dim = embed_dim
        self.spatial_grid_shape = tuple(grid_shape)
        self.supports_spatial = True
        self.trainable_image_encoder = finetune_image_encoder

        rng = np.random.default_rng(_digest_seed(seed, b"stub-params"))
        self.text_encoder = nn.Linear(embed_dim, embed_dim)
        self.image_proj = nn.Linear(embed_dim, embed_dim)
        for lin in (self.text_encoder, self.image_proj):
            w = rng.standard_normal(lin.weight.shape) / np.sqrt(embed_dim)
            b = rng.standard_normal(lin.bias.shape) * 0.01
            with torch.no_grad():
                lin.weight.copy_(torch.from_numpy(w).float())
                lin.bias.copy_(torch.from_numpy(b).float())
        for p in self.text_encoder.parameters():
            p.requires_grad_(False)
        for p in self.image_proj.parameters():
            p.requires_grad_(finetune_image_encoder)

    def _base_vector(self, payload: bytes, n: int) -> torch.Tensor:
        rng = np.random.default_rng(_digest_seed(self.seed, payload))
        return torch.from_numpy(rng.standard_normal(n))

    def encode_text(self, prompt: str) -> torch.Tensor:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        base = self._base_vector(b"text\x00" + prompt.encode("utf-8"), self.embed_dim)
        base = base.to(self.text_encoder.weight.dtype)
        return _unit(self.text_encoder(base))

    def encode_image_spatial(self, image) -> torch.Tensor:
        h, w = self.spatial_grid_shape
        base = self._base_vector(b"img\x00" + _image_bytes(image),
                                 h * w * self.embed_dim).reshape(h * w, self.embed_dim)
        base = base.to(self.image_proj.weight.dtype)
        return self.image_proj(base)

    def encode_image_global(self, image) -> torch.Tensor:
        # Advertised pooling relation: unit-normalized mean of the spatial rows.
        return _unit(self.encode_image_spatial(image).mean(dim=0))

    def text_parameters(self):
        return list(self.text_encoder.parameters())

    def image_parameters(self):
        return list(self.image_proj.parameters())


class PretrainedBackend(VisionLanguageBackend):
    """CLIP-style checkpoint loaded from disk via the ``transformers`` package."""

    def __init__(self, weights_dir: str, finetune_image_encoder: bool = True):
        super().__init__()
        try:
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise BackendLoadError(
                "the pretrained backend requires the 'transformers' package; "
                "install it or use backend = stub") from exc
        if not os.path.isdir(weights_dir):
            raise BackendLoadError(
                f"backend weights directory not found: {weights_dir!r}; set "
                f"{BACKEND_DIR_ENV} or the backend_dir config key to a local "
                "CLIP checkpoint, or use backend = stub")
        try:
            self.model = CLIPModel.from_pretrained(weights_dir)
            self.processor = CLIPProcessor.from_pretrained(weights_dir)
        except Exception as exc:
            raise BackendLoadError(f"failed to load backend from {weights_dir!r}: {exc}") from exc

        self.embed_dim = self.model.config.projection_dim
        vision_cfg = self.model.config.vision_config
        n_side = vision_cfg.image_size // vision_cfg.patch_size
        self.spatial_grid_shape = (n_side, n_side)
        self.trainable_image_encoder = finetune_image_encoder
        for p in self.model.text_model.parameters():
            p.requires_grad_(False)
        for p in self.model.vision_model.parameters():
            p.requires_grad_(finetune_image_encoder)

    def _pixel_values(self, image) -> torch.Tensor:
        if isinstance(image, torch.Tensor):
            image = image.detach().cpu().numpy()
        arr = np.asarray(image)
        if arr.dtype != np.uint8:
            arr = np.clip(arr * 255.0, 0, 255).astype(np.uint8)
        return self.processor(images=arr, return_tensors="pt")["pixel_values"]

    def encode_text(self, prompt: str) -> torch.Tensor:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        tokens = self.processor(text=[prompt], return_tensors="pt", padding=True)
        with torch.no_grad():
            emb = self.model.get_text_features(**tokens)[0]
        return _unit(emb)

    def encode_image_spatial(self, image) -> torch.Tensor:
        out = self.model.vision_model(pixel_values=self._pixel_values(image))
        return out.last_hidden_state[0, 1:, :]  # drop the class token

    def encode_image_global(self, image) -> torch.Tensor:
        emb = self.model.get_image_features(pixel_values=self._pixel_values(image))[0]
        return _unit(emb)

    def text_parameters(self):
        return list(self.model.text_model.parameters())

    def image_parameters(self):
        return list(self.model.vision_model.parameters())


def load_backend(kind: str = "stub", *, seed: int = 0, embed_dim: int = 64,
                 grid_shape: tuple[int, int] = (7, 7), backend_dir: str = "",
                 finetune_image_encoder: bool = False) -> VisionLanguageBackend:
    """Construct the backend selected by config key ``backend``."""
    if kind == "stub":
        return StubBackend(seed=seed, embed_dim=embed_dim, grid_shape=grid_shape,
                           finetune_image_encoder=finetune_image_encoder)
    if kind == "pretrained":
        weights_dir = backend_dir or os.environ.get(BACKEND_DIR_ENV, "")
        if not weights_dir:
            raise BackendLoadError(
                f"backend = pretrained requires {BACKEND_DIR_ENV} or the "
                "backend_dir config key to point at a local checkpoint")
        return PretrainedBackend(weights_dir, finetune_image_encoder=finetune_image_encoder)
    raise BackendLoadError(f"unknown backend kind {kind!r} (expected stub | pretrained)")
