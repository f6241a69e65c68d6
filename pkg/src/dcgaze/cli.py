"""Command-line entry point: train / eval / probe / synth / export-features.

Exit codes: 0 success, 2 configuration error, 3 aborted on non-finite loss,
4 checkpoint error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backend import BackendLoadError, load_backend
from .config import SCHEMA, ConfigError, RunConfig
from .data import DatasetError, generate_synthetic, load_dataset, SyntheticSpec, to_image_tensor
from .engine import (
    CheckpointError,
    TrainAbortError,
    Trainer,
    default_backend,
    evaluate,
    load_checkpoint,
)
from .model import DCGazeModel
from .probe import default_prototypes, load_prototypes, probe_gaze

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NAN = 3
EXIT_CHECKPOINT = 4


def _schema_epilog() -> str:
    lines = ["config keys:"]
    for key in SCHEMA.values():
        lines.append(f"  {key.name} (default {key.default!r}): {key.help}")
    return "\n".join(lines)


def _load_config(args) -> RunConfig:
    if args.config:
        return RunConfig.from_file(args.config, args.set or [])
    cfg = RunConfig()
    cfg.apply_overrides(args.set or [])
    return cfg


def cmd_train(args) -> int:
    try:
        cfg = _load_config(args)
        dataset = load_dataset(cfg.data_dir)
        if not dataset:
            raise ConfigError(f"dataset at {cfg.data_dir!r} is empty")
        backend = default_backend(cfg)
        model = DCGazeModel(cfg, backend)
        trainer = Trainer(model, cfg)
    except (ConfigError, BackendLoadError, DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.echo(out / "config.txt")
    try:
        history = trainer.fit(dataset, out)
    except TrainAbortError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_NAN
    if history:
        print(f"final epoch {history[-1]['epoch']}: "
              f"total {history[-1]['total']:.4f}, val {history[-1]['val_deg']:.2f} deg")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model, cfg, _ = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    try:
        dataset = load_dataset(args.data)
        result = evaluate(dataset, model)
    except (DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{result['mean_deg']:.2f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("index,subject,error_deg\n")
            for idx, (err, sample) in enumerate(zip(result["per_sample_deg"], dataset)):
                fh.write(f"{idx},{sample.subject_id},{err:.4f}\n")
    return EXIT_OK


def cmd_export_features(args) -> int:
    import torch

    try:
        model, cfg, _ = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    try:
        dataset = load_dataset(args.data)
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    model.eval()
    with open(args.out, "w", encoding="utf-8") as fh:
        cols = [f"f{i}" for i in range(cfg.feature_dim)] + ["pitch", "yaw", "subject"]
        fh.write(",".join(cols) + "\n")
        with torch.no_grad():
            for sample in dataset:
                feat = model.forward_features(
                    to_image_tensor(sample.image).unsqueeze(0), [sample.image])[0]
                values = [f"{v:.6f}" for v in feat.tolist()]
                fh.write(",".join(values + [f"{sample.label.pitch:.6f}",
                                            f"{sample.label.yaw:.6f}",
                                            sample.subject_id]) + "\n")
    return EXIT_OK


def cmd_probe(args) -> int:
    try:
        backend = load_backend(args.backend, seed=args.backend_seed,
                               backend_dir=args.backend_dir or "")
        protos = load_prototypes(args.prototypes) if args.prototypes else default_prototypes()
    except (BackendLoadError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    import numpy as np
    from PIL import Image

    image_dir = Path(args.images)
    paths = sorted(p for p in image_dir.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    if not paths:
        print(f"error: no images found in {image_dir}", file=sys.stderr)
        return EXIT_CONFIG
    for path in paths:
        image = np.asarray(Image.open(path).convert("RGB"))
        gaze = probe_gaze(image, protos, backend)
        print(f"{path.name} {gaze.pitch:.4f} {gaze.yaw:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = SyntheticSpec(count=args.count, image_size=args.size,
                             seed=args.seed, noise_level=args.noise)
        generate_synthetic(spec, args.out)
    except (ValueError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {args.count} samples to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcgaze", description="Differential-contrastive gaze estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model",
                           epilog=_schema_epilog(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    train.add_argument("--config", help="flat key = value config file")
    train.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True, help="dataset directory")
    ev.add_argument("--out", help="per-sample error CSV path")
    ev.set_defaults(func=cmd_eval)

    exp = sub.add_parser("export-features", help="export per-sample features as CSV")
    exp.add_argument("--checkpoint", required=True)
    exp.add_argument("--data", required=True)
    exp.add_argument("--out", required=True)
    exp.set_defaults(func=cmd_export_features)

    probe = sub.add_parser("probe", help="training-free gaze probe")
    probe.add_argument("--images", required=True, help="directory of face images")
    probe.add_argument("--prototypes", help="prototype file (name pitch yaw \"prompt\")")
    probe.add_argument("--backend", default="stub", choices=("stub", "pretrained"))
    probe.add_argument("--backend-seed", type=int, default=0)
    probe.add_argument("--backend-dir", default="")
    probe.set_defaults(func=cmd_probe)

    synth = sub.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--count", type=int, required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.add_argument("--size", type=int, default=224)
    synth.add_argument("--noise", type=float, default=0.0)
    synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
