"""Training-free gaze probe: score an image against four prototype gaze bins
by image-prompt cosine similarity and linearly combine the bins.
"""

from __future__ import annotations

import math
import shlex
from dataclasses import dataclass
from pathlib import Path

import torch

from .backend import VisionLanguageBackend
from .geometry import GazeDirection


@dataclass(frozen=True)
class GazePrototype:
    name: str
    bin: GazeDirection
    prompt: str


def default_prototypes() -> list[GazePrototype]:
    """The four canonical up/down/left/right prototypes."""
    half_pi = math.pi / 2
    return [
        GazePrototype("up", GazeDirection(0.0, half_pi), "A photo of a face gazing up."),
        GazePrototype("down", GazeDirection(0.0, -half_pi), "A photo of a face gazing down."),
        GazePrototype("left", GazeDirection(half_pi, 0.0), "A photo of a face gazing left."),
        GazePrototype("right", GazeDirection(-half_pi, 0.0), "A photo of a face gazing right."),
    ]


def load_prototypes(path: str | Path) -> list[GazePrototype]:
    """Parse a prototype file: one `name pitch yaw "prompt text"` per line."""
    protos = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = shlex.split(line)
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 'name pitch yaw \"prompt\"', "
                             f"got {raw!r}")
        protos.append(GazePrototype(parts[0],
                                    GazeDirection(float(parts[1]), float(parts[2])),
                                    parts[3]))
    return protos


def probe_gaze(image, prototypes: list[GazePrototype],
               backend: VisionLanguageBackend) -> GazeDirection:
    """Cosine-similarity-weighted combination of the prototype gaze bins.

    Similarities are used raw (no softmax, no clamping).
    """
    if not prototypes:
        raise ValueError("need at least one prototype")
    img = backend.encode_image_global(image)
    img = img / img.norm().clamp_min(1e-12)
    pitch = yaw = 0.0
    with torch.no_grad():
        for proto in prototypes:
            text = backend.encode_text(proto.prompt)
            sim = float(img @ (text / text.norm().clamp_min(1e-12)))
            pitch += sim * proto.bin.pitch
            yaw += sim * proto.bin.yaw
    return GazeDirection(pitch, yaw)
