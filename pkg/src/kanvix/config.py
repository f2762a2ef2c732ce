"""Experiment configuration: YAML file, defaults and command-line overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .exceptions import ConfigError, MissingInputFile
from .interpret import IDENTITY, NEGATION, ZERO
from .train import TrainConfig

__all__ = ["DEFAULTS", "load_config", "resolve", "config_hash", "train_config", "candidates", "require_file"]

CANDIDATES = {c.name: c for c in (ZERO, IDENTITY, NEGATION)}

DEFAULTS = {
    "data": {
        "vix": None,
        "sp500": None,
        "rf": None,
        "date_column": "date",
        "value_column": "close",
        "rf_column": "annualized_percent",
    },
    "datasets": ["d1", "d2", "d3"],
    "periods": [1, 2, 3],
    # integer (train, valid, test) ratios; when set, replaces the date periods
    "split": None,
    "network": {"hidden": [2], "shape": None, "grid_size": 3, "order": 3, "init": "random"},
    "train": {
        "learning_rate": 0.04,
        "decay_factor": 0.1,
        "patience_decay": 5,
        "patience_stop": 10,
        "lbfgs_history": 10,
        "max_epochs": 500,
        "iters_per_epoch": 20,
        "lam": 0.0,
        "mu1": 1.0,
        "mu2": 1.0,
    },
    "pruning": {"threshold": 0.01, "importance": "l1"},
    "symbolic": {"candidates": ["0", "x"], "finetune_epochs": 30, "finetune_lr": 0.0004},
    "benchmarks": {"max_p": 5, "max_q": 5},
    "leverage": {"grid_size": 3, "order": 3, "threshold": None, "importance": "l1",
                 "finetune_epochs": 30, "finetune_lr": 0.0004},
    "simulate": {"kappa": 0.15, "theta": 20.0, "noise_scale": 1.0, "n": 4000, "v0": None,
                 "start": "2000-01-03", "path": "synthetic_vix.csv"},
    "activation_samples": 101,
    "out": "out",
    "seed": 0,
    "threads": 1,
}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be a mapping")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path) -> dict:
    """Parse a YAML file into a dict of overrides (not yet merged)."""
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _as_list(value, kind, name):
    items = value if isinstance(value, (list, tuple)) else [value]
    try:
        return [kind(v) for v in items]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {name}: {value!r}") from exc


def resolve(overrides: dict, cli: dict | None = None) -> dict:
    """Merge defaults, file overrides and CLI flags, then validate.

    Relative data paths stay as written; they are resolved against the
    working directory when read.
    """
    cfg = _merge(DEFAULTS, overrides)
    for key, value in (cli or {}).items():
        if value is not None:
            cfg[key] = value
    cfg["datasets"] = [d.lower() for d in _as_list(cfg["datasets"], str, "datasets")]
    for d in cfg["datasets"]:
        if d not in ("d1", "d2", "d3"):
            raise ConfigError(f"unknown dataset {d!r}; expected d1, d2 or d3")
    cfg["periods"] = _as_list(cfg["periods"], int, "periods")
    for p in cfg["periods"]:
        if p not in (1, 2, 3):
            raise ConfigError(f"unknown period {p!r}; expected 1, 2 or 3")
    if cfg["split"] is not None:
        r = _as_list(cfg["split"], int, "split")
        if len(r) != 3 or min(r) < 0 or sum(r) == 0:
            raise ConfigError("split must be three nonnegative integer ratios")
        cfg["split"] = r
    for key in ("seed", "threads", "activation_samples"):
        if not isinstance(cfg[key], int) or isinstance(cfg[key], bool) or cfg[key] < 0:
            raise ConfigError(f"{key} must be a nonnegative integer")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    net = cfg["network"]
    net["hidden"] = _as_list(net["hidden"], int, "network.hidden")
    if any(h < 1 for h in net["hidden"]):
        raise ConfigError("hidden widths must be positive")
    if net["init"] not in ("random", "identity"):
        raise ConfigError(f"unknown network.init {net['init']!r}")
    for name in cfg["symbolic"]["candidates"]:
        if name not in CANDIDATES:
            raise ConfigError(f"unknown symbolic candidate {name!r}; known: {sorted(CANDIDATES)}")
    if cfg["pruning"]["importance"] not in ("l1", "std"):
        raise ConfigError("pruning.importance must be 'l1' or 'std'")
    train_config(cfg)
    cfg["out"] = str(cfg["out"])
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(**cfg["train"], seed=cfg["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train settings: {exc}") from exc


def candidates(cfg: dict) -> tuple:
    return tuple(CANDIDATES[n] for n in cfg["symbolic"]["candidates"])


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON form of the resolved config.

    The output directory is excluded so relocated runs hash alike.
    """
    body = {k: v for k, v in cfg.items() if k not in ("out", "threads")}
    text = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def require_file(cfg: dict, key: str) -> Path:
    value = cfg["data"][key]
    if value is None:
        raise ConfigError(f"data.{key} is not set")
    path = Path(value)
    if not path.is_file():
        raise MissingInputFile(path)
    return path
