"""Experiment configuration: flat ``section.key=value`` text files layered over a profile.

Sections map onto the module dataclasses::

    data.*   dataset source (synthetic generator parameters or a directory on disk)
    ppr.*    importance-score settings
    aug.*    AugmenterConfig
    train.*  TrainConfig (``train.lambda`` is the fairness weight)
    run.*    repeats, master seed, output directory, split ratios

Unknown keys raise :class:`ConfigError`.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .augment import AugmenterConfig
from .errors import ConfigError
from .fair import TrainConfig

PROFILES = {
    "paper": {
        "train.lambda": "0.6", "train.C": "2", "train.lambda_s": "0.4", "aug.beta": "10", "aug.C": "2",
        "train.mu": "1e-5", "train.k": "20", "aug.bins": "4", "train.lr": "0.001", "train.epochs": "1000",
        "train.repr_dim": "1024", "train.batch_size": "100", "run.repeats": "10",
    },
    "desk": {"train.repr_dim": "64", "train.epochs": "300", "run.repeats": "5"},
}


@dataclass(frozen=True)
class DataConfig:
    """Either a directory holding edges.tsv/features.csv, or synthetic generator settings."""

    dir: Optional[str] = None
    sensitive_col: str = "sensitive"
    label_col: str = "label"
    n: int = 2000
    p: float = 0.4
    d_z: int = 50
    d: int = 25
    a: float = 0.01
    w_s: float = 0.5
    target_avg_degree: Optional[float] = 5.12
    seed: int = 0


@dataclass(frozen=True)
class PPRConfig:
    alpha: float = 0.15
    tol: float = 1e-6
    max_hops: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"ppr.alpha must lie in (0, 1), got {self.alpha}")
        if self.tol <= 0:
            raise ConfigError("ppr.tol must be positive")


@dataclass(frozen=True)
class RunConfig:
    repeats: int = 5
    seed: int = 0
    out: str = "runs"
    split: tuple = (0.6, 0.2, 0.2)
    cf_mode: str = "label"
    cache: bool = True

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("run.repeats must be >= 1")
        if self.cf_mode not in ("label", "prob"):
            raise ConfigError("run.cf_mode must be label or prob")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    ppr: PPRConfig = field(default_factory=PPRConfig)
    aug: AugmenterConfig = field(default_factory=AugmenterConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunConfig = field(default_factory=RunConfig)
    profile: Optional[str] = None

    def to_lines(self) -> list:
        """Every setting as ``section.key=value`` (round-trips through :func:`parse_text`)."""
        out = []
        for section in ("data", "ppr", "aug", "train", "run"):
            obj = getattr(self, section)
            for f in fields(obj):
                if section in ("aug", "train") and f.name == "seed":
                    continue  # per-repeat, derived from run.seed
                key = _ALIASES_REV.get((section, f.name), f.name)
                out.append(f"{section}.{key}={_format(getattr(obj, f.name))}")
        return out


_ALIASES = {("train", "lambda"): "lam"}
_ALIASES_REV = {(s, v): k for (s, k), v in _ALIASES.items()}
_SECTIONS = ("data", "ppr", "aug", "train", "run")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def _convert(raw: str, current, ftype, key: str):
    text = raw.strip()
    tname = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", str(ftype))
    if text.lower() in ("none", "null", "") and ("Optional" in tname or current is None):
        return None
    try:
        if "bool" in tname:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "tuple" in tname:
            return tuple(float(v) for v in text.split(","))
        if "int" in tname and "float" not in tname:
            return int(text)
        if "float" in tname:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {tname}") from None


def parse_text(text: str, source: str = "<config>") -> dict:
    """``key -> raw value`` from config text; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(f"{source} line {lineno}: key {key!r} must look like section.name")
        out[key] = value
    return out


def apply_overrides(cfg: ExperimentConfig, raw: dict) -> ExperimentConfig:
    updates = {s: {} for s in _SECTIONS}
    for key, value in raw.items():
        section, name = key.split(".", 1) if "." in key else ("", key)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section in {key!r}")
        attr = _ALIASES.get((section, name), name)
        obj = getattr(cfg, section)
        ftypes = {f.name: f.type for f in fields(obj)}
        if attr not in ftypes:
            raise ConfigError(f"unknown config key {key!r}")
        updates[section][attr] = _convert(value, getattr(obj, attr), ftypes[attr], key)
    kw = {}
    for section, upd in updates.items():
        if upd:
            try:
                kw[section] = replace(getattr(cfg, section), **upd)
            except (ValueError, TypeError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"{section}: {exc}") from None
    return replace(cfg, **kw)


def load_config(path: Optional[str] = None, profile: Optional[str] = None,
                overrides: Optional[dict] = None) -> ExperimentConfig:
    """Defaults, then the profile, then the file, then explicit overrides."""
    cfg = ExperimentConfig()
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        cfg = replace(apply_overrides(cfg, PROFILES[profile]), profile=profile)
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            cfg = apply_overrides(cfg, parse_text(fh.read(), path))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    if cfg.data.dir is not None and not os.path.isdir(cfg.data.dir):
        raise ConfigError(f"data.dir does not exist: {cfg.data.dir}")
    return cfg


def as_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)
