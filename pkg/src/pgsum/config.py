"""Flat `key = value` run configuration shared by all CLI subcommands."""

from __future__ import annotations

from dataclasses import fields

from .model import ModelConfig
from .training import TrainConfig

# Desk-scale defaults. Model dims and limits here train in minutes on one
# CPU core; full-scale values (128/256 dims, 50k vocab, 400/100 limits)
# are reached purely through this config.
DEFAULTS: dict[str, int | float | str] = {
    "vocab_size": 2000,
    "emb_dim": 64,
    "hidden_dim": 128,
    "max_encoder_len": 400,
    "max_decoder_len": 20,
    "beam_size": 4,
    "sample_size": 1000,
}
DEFAULTS.update(TrainConfig().to_dict())

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def coerce(text: str) -> int | float | str:
    """Best-effort scalar parse: int, then float, then raw string."""
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def load_config(path: str) -> dict[str, int | float | str]:
    """Parse `key = value` lines; blank lines and #-comments are skipped."""
    out: dict[str, int | float | str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            out[key] = coerce(value.strip())
    return out


def save_config(path: str, cfg: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in cfg.items():
            fh.write(f"{key} = {value}\n")


def resolve(file_cfg: dict | None = None, overrides: dict | None = None) -> dict:
    """DEFAULTS layered under the config file, layered under flag overrides."""
    cfg = dict(DEFAULTS)
    for layer in (file_cfg or {}, overrides or {}):
        for key, value in layer.items():
            if value is None:
                continue
            if key not in cfg:
                raise ValueError(f"unknown config key {key!r}")
            cfg[key] = value
    return cfg


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(vocab_size=int(cfg["vocab_size"]),
                       emb_dim=int(cfg["emb_dim"]),
                       hidden_dim=int(cfg["hidden_dim"]))


def train_config(cfg: dict) -> TrainConfig:
    picked = {k: cfg[k] for k in _TRAIN_KEYS}
    picked["optimizer"] = str(picked["optimizer"])
    for int_key in ("batch_size", "seed", "phase1_steps", "phase2_steps",
                    "phase3_steps", "checkpoint_every"):
        picked[int_key] = int(picked[int_key])
    for float_key in ("learning_rate", "adagrad_init_acc", "clip_norm",
                      "lambda_cov", "lambda_oov"):
        picked[float_key] = float(picked[float_key])
    return TrainConfig(**picked)
