"""Run configuration: flat dotted keys in JSON, overridable from the command line."""

from __future__ import annotations

import json
from dataclasses import fields

from covgen.beam import DecodeConfig
from covgen.model import ModelConfig
from covgen.trainer import TrainConfig

MODES = ("baseline", "pointer", "coverage")

DEFAULTS = {
    "mode": "pointer",
    "seed": 0,
    "model.hidden_dim": 256,
    "model.emb_dim": 128,
    "model.vocab_size": 50_000,
    "model.max_enc": 400,
    "model.max_dec": 100,
    "train.learning_rate": 0.15,
    "train.init_accumulator": 0.1,
    "train.max_grad_norm": 2.0,
    "train.lam": 1.0,
    "train.batch_size": 16,
    "train.eval_every": 100,
    "train.patience": 5,
    "train.max_steps": 100_000,
    "train.stop_loss": None,
    "train.curriculum": [],
    "train.coverage_steps": 3000,
    "train.coverage_from_scratch": False,
    "decode.beam_size": 4,
    "decode.max_steps": 120,
    "decode.min_steps": 0,
    "decode.length_norm": True,
    "paths.train": None,
    "paths.valid": None,
    "paths.test": None,
    "paths.vocab": None,
    "paths.checkpoint_dir": "checkpoints",
    "paths.report_dir": "reports",
    "paths.source_checkpoint": None,
}


class ConfigError(ValueError):
    pass


def parse_value(text: str):
    """Interpret a command-line value as JSON when possible, else as a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()) -> dict:
    cfg = dict(DEFAULTS)
    if path:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        _merge(cfg, data, source=str(path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        _merge(cfg, {key.strip(): parse_value(value)}, source="command line")
    validate(cfg)
    return cfg


def _merge(cfg: dict, data: dict, source: str) -> None:
    for key, value in data.items():
        if key not in DEFAULTS:
            raise ConfigError(f"{source}: unknown config key {key!r}")
        cfg[key] = value


def validate(cfg: dict) -> None:
    if cfg["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    try:
        model_config(cfg)
        train_config(cfg)
        decode_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _section(cfg: dict, prefix: str, cls) -> dict:
    names = {f.name for f in fields(cls)}
    return {k[len(prefix) + 1 :]: v for k, v in cfg.items() if k.startswith(prefix + ".") and k[len(prefix) + 1 :] in names}


def model_config(cfg: dict, vocab_size: int | None = None) -> ModelConfig:
    kw = _section(cfg, "model", ModelConfig)
    if vocab_size is not None:
        kw["vocab_size"] = vocab_size
    return ModelConfig.for_mode(cfg["mode"], **kw)


def train_config(cfg: dict) -> TrainConfig:
    kw = _section(cfg, "train", TrainConfig)
    return TrainConfig(seed=cfg["seed"], **kw)


def decode_config(cfg: dict) -> DecodeConfig:
    return DecodeConfig(**_section(cfg, "decode", DecodeConfig))
