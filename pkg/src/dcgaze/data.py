"""Dataset loading and a synthetic desk-scale dataset generator.

Label file format (``labels.txt``): UTF-8 text, one sample per line,
``relative_image_path pitch yaw subject_id`` with ``#`` comments. Angles are
radians written with 6 decimal places.

Synthetic images place a bright elliptical blob displaced from the image
center proportionally to (yaw, -pitch), so the label is recoverable from the
blob centroid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import GazeDirection

log = logging.getLogger(__name__)

# fraction of the half-image the blob center moves at |angle| = ANGLE_RANGE
ANGLE_RANGE = 0.5
DISPLACEMENT_FRACTION = 0.55


@dataclass
class LabeledSample:
    image: np.ndarray  # (H, W, 3) uint8
    label: GazeDirection
    subject_id: str


@dataclass(frozen=True)
class SyntheticSpec:
    count: int
    image_size: int = 224
    seed: int = 0
    noise_level: float = 0.0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")


class DatasetError(RuntimeError):
    pass


def load_dataset(root_dir: str | Path) -> list[LabeledSample]:
    """Read every sample listed in ``root_dir/labels.txt``, order preserved."""
    root = Path(root_dir)
    labels = root / "labels.txt"
    if not labels.is_file():
        raise DatasetError(f"missing labels file: {labels}")
    samples = []
    for lineno, raw in enumerate(labels.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise DatasetError(f"{labels}:{lineno}: expected "
                               f"'path pitch yaw subject', got {raw!r}")
        rel, pitch_s, yaw_s, subject = parts
        try:
            label = GazeDirection(float(pitch_s), float(yaw_s))
        except ValueError as exc:
            raise DatasetError(f"{labels}:{lineno}: bad angles: {exc}") from exc
        img_path = root / rel
        if not img_path.is_file():
            raise DatasetError(f"{labels}:{lineno}: missing image file {img_path}")
        image = np.asarray(Image.open(img_path).convert("RGB"))
        samples.append(LabeledSample(image=image, label=label, subject_id=subject))
    if not samples:
        log.warning("labels file %s lists no samples", labels)
    return samples


def render_gaze_image(label: GazeDirection, image_size: int,
                      rng: np.random.Generator | None = None,
                      noise_level: float = 0.0) -> np.ndarray:
    """Render one synthetic face-proxy image for a gaze label."""
    s = image_size
    half = s / 2.0
    scale = DISPLACEMENT_FRACTION * half / ANGLE_RANGE
    cx = half + label.yaw * scale
    cy = half - label.pitch * scale
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    sig_x, sig_y = 0.045 * s, 0.035 * s
    blob = np.exp(-0.5 * (((xx + 0.5 - cx) / sig_x) ** 2
                          + ((yy + 0.5 - cy) / sig_y) ** 2))
    img = 230.0 * blob
    if noise_level > 0:
        if rng is None:
            raise ValueError("noise_level > 0 requires a generator")
        img = img + rng.normal(0.0, noise_level * 255.0, size=img.shape)
    img = np.clip(img, 0, 255).astype(np.uint8)
    return np.repeat(img[:, :, None], 3, axis=2)


def decode_gaze_from_image(image: np.ndarray) -> GazeDirection:
    """Recover the gaze label of a noise-free synthetic image from the
    intensity centroid of its blob."""
    gray = image[:, :, 0].astype(np.float64)
    total = gray.sum()
    if total <= 0:
        raise ValueError("image carries no blob to decode")
    s = gray.shape[0]
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    cx = ((xx + 0.5) * gray).sum() / total
    cy = ((yy + 0.5) * gray).sum() / total
    half = s / 2.0
    scale = DISPLACEMENT_FRACTION * half / ANGLE_RANGE
    return GazeDirection(pitch=(half - cy) / scale, yaw=(cx - half) / scale)


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> Path:
    """Write a synthetic dataset (images + labels.txt) under out_dir."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create output directory {out}: {exc}") from exc
    rng = np.random.default_rng(spec.seed)
    lines = ["# relative_image_path pitch yaw subject_id"]
    for idx in range(spec.count):
        pitch, yaw = rng.uniform(-ANGLE_RANGE, ANGLE_RANGE, size=2)
        label = GazeDirection(round(pitch, 6), round(yaw, 6))
        image = render_gaze_image(label, spec.image_size, rng, spec.noise_level)
        name = f"face_{idx:04d}.png"
        Image.fromarray(image).save(out / name)
        lines.append(f"{name} {label.pitch:.6f} {label.yaw:.6f} synth{idx % 8:02d}")
    (out / "labels.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def to_image_tensor(image: np.ndarray):
    """uint8 (H, W, 3) -> float32 (3, H, W) in [0, 1]."""
    import torch

    return torch.from_numpy(np.array(image, copy=True)).permute(2, 0, 1).float() / 255.0
