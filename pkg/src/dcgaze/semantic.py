"""Semantic difference branch: graded similarity prompts for image pairs and
the symmetric contrastive loss aligning pair embeddings with prompt
embeddings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import torch
from torch import nn

from .geometry import GazeDirection, gaze_l1_difference

log = logging.getLogger(__name__)

PROMPT_TEMPLATE = "The directions of gaze in the two photos are {}."


@dataclass(frozen=True)
class GradeScheme:
    """K-way partition of gaze L1 differences into named similarity grades.

    Intervals are half-open [lo, hi) in radians, contiguous from 0, with the
    last hi = inf.
    """

    intervals: tuple[tuple[float, float], ...]
    grade_names: tuple[str, ...]
    template: str = PROMPT_TEMPLATE

    def __post_init__(self):
        if len(self.intervals) != len(self.grade_names):
            raise ValueError("intervals and grade_names must have equal length")
        if not self.intervals:
            raise ValueError("scheme must have at least one grade")
        if self.intervals[0][0] != 0.0:
            raise ValueError("first interval must start at 0")
        if self.intervals[-1][1] != float("inf"):
            raise ValueError("last interval must end at inf")
        for (lo, hi), (lo2, _) in zip(self.intervals, self.intervals[1:]):
            if hi != lo2:
                raise ValueError(f"intervals not contiguous at {hi} vs {lo2}")
            if hi <= lo:
                raise ValueError(f"empty interval [{lo}, {hi})")

    @property
    def k(self) -> int:
        return len(self.grade_names)

    def prompts(self) -> list[str]:
        return [render_prompt(i, self) for i in range(self.k)]


def load_grade_scheme(path: str | Path) -> GradeScheme:
    """Read a scheme from a text file: one `lo hi name` line per grade,
    `inf` allowed for the last hi, `#` comments."""
    intervals, names = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 2)
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'lo hi name', got {raw!r}")
        intervals.append((float(parts[0]), float(parts[1])))
        names.append(parts[2].strip())
    return GradeScheme(intervals=tuple(intervals), grade_names=tuple(names))


def builtin_scheme(k: int) -> GradeScheme:
    """Load one of the shipped K in {2, 3, 5} schemes."""
    if k not in (2, 3, 5):
        raise ValueError(f"no built-in scheme for K={k} (have 2, 3, 5)")
    with resources.as_file(resources.files("dcgaze.schemes") / f"k{k}.txt") as p:
        return load_grade_scheme(p)


def assign_grade(diff: float, scheme: GradeScheme) -> int:
    """Index of the half-open interval containing a gaze difference."""
    if diff < 0:
        raise ValueError(f"gaze difference must be non-negative, got {diff}")
    for idx, (lo, hi) in enumerate(scheme.intervals):
        if lo <= diff < hi:
            return idx
    raise AssertionError("intervals do not cover [0, inf)")  # unreachable


def render_prompt(grade_index: int, scheme: GradeScheme) -> str:
    if not 0 <= grade_index < scheme.k:
        raise ValueError(f"grade index {grade_index} out of range for K={scheme.k}")
    return scheme.template.format(scheme.grade_names[grade_index])


@dataclass
class SamplePair:
    """An ordered (i, j) batch-index pair with its gaze difference and grade."""

    i: int
    j: int
    diff: float
    grade_index: int = -1
    prompt: str = ""
    pair_embedding: torch.Tensor | None = field(default=None, repr=False)


def build_pairs(batch_labels: list[GazeDirection],
                scheme: GradeScheme | None = None) -> list[SamplePair]:
    """All N_b * (N_b - 1) ordered pairs of a batch, with diffs (and grades
    plus prompts, when a scheme is given) filled in."""
    n = len(batch_labels)
    if n < 2:
        raise ValueError(f"need a batch of at least 2 samples, got {n}")
    pairs = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            pair = SamplePair(i=i, j=j, diff=gaze_l1_difference(batch_labels[i],
                                                                batch_labels[j]))
            if scheme is not None:
                pair.grade_index = assign_grade(pair.diff, scheme)
                pair.prompt = render_prompt(pair.grade_index, scheme)
            pairs.append(pair)
    return pairs


class PairEmbedder(nn.Module):
    """MLP projecting the concatenation of two appearance features to the
    backend text-embedding dimension."""

    def __init__(self, feature_dim: int, embed_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(2 * feature_dim, embed_dim),
            nn.ReLU(inplace=True),
            nn.Linear(embed_dim, embed_dim),
        )

    def forward(self, f1: torch.Tensor, f2: torch.Tensor) -> torch.Tensor:
        if f1.shape != f2.shape:
            raise ValueError(f"feature shapes differ: {tuple(f1.shape)} vs {tuple(f2.shape)}")
        return self.net(torch.cat([f1, f2], dim=-1))


def normalize_rows(x: torch.Tensor) -> torch.Tensor:
    """L2-normalize rows; near-zero rows become a fixed unit basis vector."""
    norms = x.norm(dim=-1, keepdim=True)
    degenerate = norms < 1e-12
    if degenerate.any():
        log.warning("replacing %d near-zero embeddings with a unit basis vector",
                    int(degenerate.sum()))
        fallback = torch.zeros_like(x)
        fallback[..., 0] = 1.0
        x = torch.where(degenerate, fallback, x)
        norms = torch.where(degenerate, torch.ones_like(norms), norms)
    return x / norms


def alignment_loss(pair_embs: torch.Tensor, text_embs: torch.Tensor,
                   tau: float) -> torch.Tensor:
    """Symmetric contrastive loss between matched pair/text embedding rows.

    Both direction sums are averaged over the number of rows. Inputs are
    expected row-normalized so the dot products are cosine similarities.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if pair_embs.shape != text_embs.shape:
        raise ValueError(f"row shapes differ: {tuple(pair_embs.shape)} vs "
                         f"{tuple(text_embs.shape)}")
    if pair_embs.shape[0] < 1:
        raise ValueError("need at least one embedding row")
    logits = text_embs @ pair_embs.T / tau
    targets = torch.arange(pair_embs.shape[0], device=pair_embs.device)
    t2p = torch.nn.functional.cross_entropy(logits, targets)
    p2t = torch.nn.functional.cross_entropy(logits.T, targets)
    return t2p + p2t
