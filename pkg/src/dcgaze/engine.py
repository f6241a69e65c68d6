"""Training loop, loss combination, evaluation, and checkpointing."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import RunConfig
from .data import LabeledSample, to_image_tensor
from .geometry import GazeDirection, angular_error
from .model import DCGazeModel
from .regressor import gaze_loss, make_mask, mask_loss, masked_head
from .semantic import alignment_loss, build_pairs, normalize_rows

CHECKPOINT_VERSION = 1


class TrainAbortError(RuntimeError):
    """Raised when a loss turns non-finite; carries the component values."""

    def __init__(self, components: dict):
        self.components = components
        super().__init__(f"non-finite loss; components: {components}")


class CheckpointError(RuntimeError):
    pass


def total_loss(l_gaze, l_mask, l_align, alpha: float, beta: float):
    """Weighted sum of the three training losses."""
    for name, value in (("l_gaze", l_gaze), ("l_mask", l_mask), ("l_align", l_align)):
        scalar = float(value.detach()) if torch.is_tensor(value) else float(value)
        if scalar < 0:
            raise ValueError(f"{name} must be non-negative, got {scalar}")
    return l_gaze + alpha * l_mask + beta * l_align


def save_checkpoint(model: DCGazeModel, config: RunConfig, epoch: int,
                    metrics: dict, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "version": CHECKPOINT_VERSION,
        "state_dict": model.state_dict(),
        "config": config.as_dict(),
        "epoch": epoch,
        "metrics": metrics,
    }, path)
    meta = {"epoch": epoch, "config_hash": config.digest(), "metrics": metrics}
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_checkpoint(path: str | Path, backend_factory=None):
    """Rebuild (model, config, epoch) from a checkpoint file."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {blob.get('version')} != {CHECKPOINT_VERSION}")
    config = RunConfig(blob["config"])
    backend = backend_factory(config) if backend_factory else default_backend(config)
    model = DCGazeModel(config, backend)
    model.load_state_dict(blob["state_dict"])
    return model, config, blob["epoch"]


def default_backend(config: RunConfig):
    from .backend import load_backend

    needs_backend = config.use_dctrain or (config.use_afu and config.fusion != "none")
    if not needs_backend:
        return None
    return load_backend(
        config.backend, seed=config.backend_seed, embed_dim=config.backend_embed_dim,
        backend_dir=config.backend_dir,
        finetune_image_encoder=config.finetune_image_encoder)


class Trainer:
    """Single-thread optimizer loop around a DCGazeModel."""

    def __init__(self, model: DCGazeModel, config: RunConfig):
        self.model = model
        self.config = config
        self.mask_rng = np.random.default_rng(config.mask_seed)
        groups = [{"params": model.primary_parameters(), "lr": config.learning_rate}]
        enc = model.encoder_parameters()
        if enc:
            groups.append({"params": enc, "lr": config.encoder_learning_rate})
        self.optimizer = torch.optim.Adam(groups)

    def _batch_tensors(self, batch: Sequence[LabeledSample]):
        images = torch.stack([to_image_tensor(s.image) for s in batch])
        labels = torch.tensor([[s.label.pitch, s.label.yaw] for s in batch],
                              dtype=torch.float32)
        return images, labels

    def train_step(self, batch: Sequence[LabeledSample]) -> dict:
        """One optimizer update; returns the component losses."""
        cfg = self.config
        self.model.train()
        images, labels = self._batch_tensors(batch)
        raw = [s.image for s in batch]
        f_img = self.model.forward_features(images, raw)

        l_gaze = gaze_loss(self.model.mlp_head(f_img), labels)
        zero = torch.zeros((), dtype=f_img.dtype)

        l_mask = zero
        if cfg.use_dgr:
            masks = torch.stack([
                make_mask(cfg.feature_dim, cfg.drop_ratio, self.mask_rng)
                .as_tensor(f_img.dtype) for _ in batch])
            l_mask = mask_loss(masked_head(f_img, masks), labels)

        l_align = zero
        if cfg.use_dctrain:
            pairs = build_pairs([s.label for s in batch], self.model.grade_scheme)
            i_idx = torch.tensor([p.i for p in pairs])
            j_idx = torch.tensor([p.j for p in pairs])
            pair_embs = normalize_rows(
                self.model.pair_embedder(f_img[i_idx], f_img[j_idx]))
            prompts = self.model.prompt_embeddings()
            text_embs = prompts[torch.tensor([p.grade_index for p in pairs])]
            l_align = alignment_loss(pair_embs, text_embs, cfg.tau)

        total = total_loss(l_gaze, l_mask, l_align, cfg.alpha, cfg.beta)
        components = {"l_gaze": float(l_gaze.detach()), "l_mask": float(l_mask.detach()),
                      "l_align": float(l_align.detach()), "total": float(total.detach())}
        if not all(math.isfinite(v) for v in components.values()):
            raise TrainAbortError(components)

        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        return components

    def fit(self, dataset: Sequence[LabeledSample], out_dir: str | Path,
            eval_dataset: Sequence[LabeledSample] | None = None) -> list[dict]:
        """Run the configured number of epochs; write metrics.csv and
        checkpoints under out_dir; returns the per-epoch metric rows."""
        cfg = self.config
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        eval_dataset = eval_dataset if eval_dataset is not None else dataset
        order_rng = np.random.default_rng(cfg.seed)
        scheduler = None
        if cfg.lr_schedule == "cosine":
            scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
                self.optimizer, T_max=cfg.epochs)
        history = []
        with open(out / "metrics.csv", "w", encoding="utf-8") as fh:
            fh.write("epoch,l_gaze,l_mask,l_align,total,val_deg\n")
            for epoch in range(1, cfg.epochs + 1):
                indices = np.arange(len(dataset))
                if cfg.shuffle:
                    order_rng.shuffle(indices)
                sums = {"l_gaze": 0.0, "l_mask": 0.0, "l_align": 0.0, "total": 0.0}
                n_steps = 0
                for start in range(0, len(indices), cfg.batch_size):
                    batch = [dataset[i] for i in indices[start:start + cfg.batch_size]]
                    if cfg.use_dctrain and len(batch) < 2:
                        continue  # a pairless tail batch cannot train the semantic branch
                    step = self.train_step(batch)
                    for k in sums:
                        sums[k] += step[k]
                    n_steps += 1
                if scheduler is not None:
                    scheduler.step()
                row = {k: v / max(n_steps, 1) for k, v in sums.items()}
                row["epoch"] = epoch
                row["val_deg"] = evaluate(eval_dataset, self.model)["mean_deg"]
                history.append(row)
                fh.write(f"{epoch},{row['l_gaze']:.6f},{row['l_mask']:.6f},"
                         f"{row['l_align']:.6f},{row['total']:.6f},{row['val_deg']:.4f}\n")
                fh.flush()
                if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                    save_checkpoint(self.model, cfg, epoch, row,
                                    out / f"epoch_{epoch:04d}.ckpt")
            save_checkpoint(self.model, cfg, cfg.epochs,
                            history[-1] if history else {},
                            out / f"epoch_{cfg.epochs:04d}.ckpt")
        return history


def evaluate(dataset: Sequence[LabeledSample], model: DCGazeModel,
             batch_size: int = 32) -> dict:
    """Mean angular error in degrees plus the per-sample error list."""
    if not dataset:
        raise ValueError("cannot evaluate on an empty dataset")
    errors = []
    for start in range(0, len(dataset), batch_size):
        batch = dataset[start:start + batch_size]
        images = torch.stack([to_image_tensor(s.image) for s in batch])
        preds = model.infer(images, [s.image for s in batch])
        for pred, sample in zip(preds, batch):
            errors.append(angular_error(
                GazeDirection(float(pred[0]), float(pred[1])), sample.label))
    return {"mean_deg": float(np.mean(errors)), "per_sample_deg": errors}
