"""Flat key = value run configuration with a fixed schema.

Config files are plain text, one ``key = value`` per line, ``#`` comments,
no nesting. Unknown keys are rejected. Command-line ``--set key=value``
overrides are applied after the file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ConfigKey:
    name: str
    type: type
    default: object
    help: str
    choices: tuple | None = None


SCHEMA: dict[str, ConfigKey] = {k.name: k for k in [
    ConfigKey("backend", str, "stub", "vision-language backend", ("stub", "pretrained")),
    ConfigKey("backend_seed", int, 0, "seed for the stub backend"),
    ConfigKey("backend_embed_dim", int, 64, "stub backend embedding dimension"),
    ConfigKey("backend_dir", str, "", "pretrained backend weights directory"),
    ConfigKey("finetune_image_encoder", bool, True, "fine-tune the backend image encoder"),
    ConfigKey("feature_dim", int, 32, "appearance feature dimension C"),
    ConfigKey("grid_h", int, 7, "feature grid height"),
    ConfigKey("grid_w", int, 7, "feature grid width"),
    ConfigKey("transformer_layers", int, 6, "token aggregator transformer depth"),
    ConfigKey("attention_heads", int, 8, "token aggregator attention heads"),
    ConfigKey("attention_temperature", float, 0.0,
              "refinement/fusion attention temperature; 0 means sqrt(dim)"),
    ConfigKey("mode", str, "within_domain", "aggregator architecture mode",
              ("within_domain", "cross_domain")),
    ConfigKey("fusion", str, "afu", "prior-feature fusion strategy",
              ("afu", "concat", "cross_attention", "gated", "none")),
    ConfigKey("use_dctrain", bool, True, "enable the differential contrastive branch"),
    ConfigKey("use_afu", bool, True, "enable prior-feature fusion"),
    ConfigKey("use_dgr", bool, True, "enable the masked max-pool regression head"),
    ConfigKey("drop_ratio", float, 5 / 32, "masked-head feature drop ratio"),
    ConfigKey("mask_seed", int, 0, "seed for the masked-head mask stream"),
    ConfigKey("tau", float, 0.07, "contrastive loss temperature"),
    ConfigKey("grade_k", int, 5, "built-in grade scheme size", (2, 3, 5)),
    ConfigKey("grade_scheme_file", str, "", "custom grade scheme file (overrides grade_k)"),
    ConfigKey("alpha", float, 0.1, "weight of the masked-head loss"),
    ConfigKey("beta", float, 0.1, "weight of the alignment loss"),
    ConfigKey("epochs", int, 10, "training epochs"),
    ConfigKey("batch_size", int, 16, "training batch size"),
    ConfigKey("learning_rate", float, 1e-4, "primary network learning rate"),
    ConfigKey("encoder_learning_rate", float, 1e-6, "backend image encoder learning rate"),
    ConfigKey("lr_schedule", str, "none", "learning-rate schedule over epochs",
              ("none", "cosine")),
    ConfigKey("seed", int, 0, "global training seed"),
    ConfigKey("shuffle", bool, True, "shuffle training batches each epoch (seeded)"),
    ConfigKey("checkpoint_every", int, 0, "checkpoint every N epochs (0: final only)"),
    ConfigKey("data_dir", str, "", "dataset directory containing labels.txt"),
    ConfigKey("out_dir", str, "run", "run output directory"),
    ConfigKey("image_size", int, 224, "input image side length"),
]}


def _parse_value(key: ConfigKey, raw: str):
    raw = raw.strip()
    if key.type is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            val = True
        elif low in ("false", "0", "no", "off"):
            val = False
        else:
            raise ConfigError(f"{key.name}: expected a boolean, got {raw!r}")
    else:
        try:
            val = key.type(raw)
        except ValueError as exc:
            raise ConfigError(f"{key.name}: {exc}") from exc
    if key.choices is not None and val not in key.choices:
        raise ConfigError(f"{key.name}: {val!r} not one of {key.choices}")
    return val


class RunConfig:
    """Schema-validated flat configuration."""

    def __init__(self, values: dict | None = None):
        self._values = {k: spec.default for k, spec in SCHEMA.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def __getattr__(self, name):
        try:
            return self._values[name]
        except KeyError:
            raise AttributeError(name) from None

    def set(self, name: str, value):
        if name not in SCHEMA:
            raise ConfigError(f"unknown config key {name!r}")
        if isinstance(value, str) and SCHEMA[name].type is not str:
            value = _parse_value(SCHEMA[name], value)
        elif SCHEMA[name].choices is not None and value not in SCHEMA[name].choices:
            raise ConfigError(f"{name}: {value!r} not one of {SCHEMA[name].choices}")
        self._values[name] = value

    def as_dict(self) -> dict:
        return dict(self._values)

    @classmethod
    def from_file(cls, path: str | Path, overrides: list[str] | None = None) -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            cfg.set(key.strip(), value.strip())
        cfg.apply_overrides(overrides or [])
        return cfg

    def apply_overrides(self, overrides: list[str]):
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override must be key=value, got {item!r}")
            key, _, value = item.partition("=")
            self.set(key.strip(), value.strip())

    def echo(self, path: str | Path):
        """Write the merged configuration back out as key = value lines."""
        lines = [f"{k} = {v}" for k, v in sorted(self._values.items())]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def digest(self) -> str:
        import hashlib

        blob = "\n".join(f"{k}={v}" for k, v in sorted(self._values.items()))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
