"""Run configuration: JSON file + ``--set section.key=value`` overrides.

Every key is validated against the schema below; unknown keys are rejected
so a typo cannot silently fall back to a default. The fully resolved config
is dumped next to the run outputs, and a run is reproducible from that dump
alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .augment import AugmentConfig
from .cluster import ClusterConfig
from .data import SplitSpec
from .engine import PhaseSchedule
from .errors import ConfigError, InvalidParameterError
from .fixmatch import FixMatchConfig
from .proto import MarginConfig


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    embed: int = 32
    feature_norm: bool = True

    def __post_init__(self):
        if self.hidden < 1 or self.embed < 1:
            raise InvalidParameterError("layer sizes must be positive")


@dataclass(frozen=True)
class OptimizerConfig:
    base_lr: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 0.0005

    def __post_init__(self):
        if self.base_lr <= 0:
            raise InvalidParameterError("base_lr must be positive")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    mode: str = "aplt"
    dataset: dict | None = None          # {"csv": path} or {"synthetic": {...}}
    split: SplitSpec = SplitSpec(labeled_ratio=0.1, seed=0)
    model: ModelConfig = ModelConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    augment: AugmentConfig = AugmentConfig()
    fixmatch: FixMatchConfig = FixMatchConfig()
    cluster: ClusterConfig = ClusterConfig()
    cluster_method: str = "sskm"
    margin: MarginConfig = MarginConfig()
    margin_view: str = "strong"
    schedule: PhaseSchedule = PhaseSchedule()
    test_fraction: float = 0.2


# JSON section -> (dataclass, {json key: field name}) for renamed keys
_SECTIONS = {
    "split": (SplitSpec, {}),
    "model": (ModelConfig, {}),
    "optimizer": (OptimizerConfig, {}),
    "augment": (AugmentConfig, {}),
    "fixmatch": (FixMatchConfig, {}),
    "cluster": (ClusterConfig, {"method": None}),     # handled separately
    "margin": (MarginConfig, {"lambda": "lam", "view": None}),
    "schedule": (PhaseSchedule, {}),
}

_SYNTH_KEYS = {"classes", "dim", "per_class", "overlap", "seed"}

DEFAULT_CONFIG = {
    "seed": 0,
    "mode": "aplt",
    "dataset": None,
    "eval": {"test_fraction": 0.2},
    "split": {"labeled_ratio": 0.1, "seed": 0, "stratified": True},
    "model": {"hidden": 64, "embed": 32, "feature_norm": True},
    "optimizer": {"base_lr": 0.002, "momentum": 0.9, "weight_decay": 0.0005},
    "augment": {"weak_sigma": 0.05, "strong_sigma": 0.2, "strong_mask_prob": 0.1},
    "fixmatch": {"tau": 0.95, "batch_size": 64},
    "cluster": {"max_iters": 100, "tol": 1e-6, "aug_copies": 3,
                "use_labeled_aug": True, "use_adaptive_threshold": True,
                "prototype_members": "filtered", "method": "sskm"},
    "margin": {"temperature": 0.1, "lambda": 1.0, "view": "strong"},
    "schedule": {"warmup_epochs": 15, "main_epochs": 40,
                 "offline_every": 10, "sync_mode": False},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _parse_override(expr: str):
    if "=" not in expr:
        raise ConfigError(f"override must look like section.key=value: {expr!r}")
    dotted, raw = expr.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings are fine: --set margin.view=weak
    node: dict = {}
    leaf = node
    parts = dotted.split(".")
    for part in parts[:-1]:
        leaf[part] = {}
        leaf = leaf[part]
    leaf[parts[-1]] = value
    return node


def _check_dataset(section) -> dict | None:
    if section is None:
        return None
    if not isinstance(section, dict):
        raise ConfigError("dataset section must be an object")
    keys = set(section)
    if keys == {"csv"}:
        if not isinstance(section["csv"], str):
            raise ConfigError("dataset.csv must be a path string")
        return {"csv": section["csv"]}
    if keys == {"synthetic"}:
        synth = section["synthetic"]
        unknown = set(synth) - _SYNTH_KEYS
        if unknown:
            raise ConfigError(f"unknown dataset.synthetic keys: {sorted(unknown)}")
        missing = _SYNTH_KEYS - set(synth)
        if missing:
            raise ConfigError(f"dataset.synthetic missing keys: {sorted(missing)}")
        return {"synthetic": dict(synth)}
    raise ConfigError("dataset must contain exactly one of: csv, synthetic")


def resolve(file_config: dict | None = None, overrides: list[str] | None = None) -> tuple[RunConfig, dict]:
    """Defaults <- file <- CLI overrides; returns (typed config, resolved dict)."""
    resolved = DEFAULT_CONFIG
    if file_config is not None:
        if not isinstance(file_config, dict):
            raise ConfigError("config file must hold a JSON object")
        resolved = _merge(resolved, file_config)
    for expr in overrides or []:
        resolved = _merge(resolved, _parse_override(expr))

    if resolved["mode"] not in ("aplt", "fixmatch"):
        raise ConfigError(f"mode must be aplt or fixmatch, got {resolved['mode']!r}")
    if resolved["cluster"]["method"] not in ("sskm", "km"):
        raise ConfigError("cluster.method must be sskm or km")
    if resolved["margin"]["view"] not in ("strong", "weak"):
        raise ConfigError("margin.view must be strong or weak")
    tf = resolved["eval"]["test_fraction"]
    if not (0.0 <= tf < 1.0):
        raise ConfigError("eval.test_fraction must lie in [0, 1)")

    kwargs = {}
    try:
        for section, (cls, renames) in _SECTIONS.items():
            payload = {}
            for key, value in resolved[section].items():
                if key in renames:
                    if renames[key] is None:
                        continue
                    payload[renames[key]] = value
                else:
                    payload[key] = value
            kwargs[section] = cls(**payload)
    except (TypeError, InvalidParameterError) as exc:
        raise ConfigError(f"bad {section} section: {exc}") from None
    if not isinstance(resolved["seed"], int):
        raise ConfigError("seed must be an integer")

    cfg = RunConfig(seed=resolved["seed"], mode=resolved["mode"],
                    dataset=_check_dataset(resolved["dataset"]),
                    cluster_method=resolved["cluster"]["method"],
                    margin_view=resolved["margin"]["view"],
                    test_fraction=float(tf), **kwargs)
    return cfg, resolved


def load_file(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
