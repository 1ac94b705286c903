"""Run configuration: one YAML/JSON document validated before any work starts."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .data import DatasetConfig
from .nn.unet import UNetConfig
from .search.engine import FinetuneConfig, TrainConfig

OUT_ENV = "DENOISE_NAS_OUT"
DEFAULT_OUT_ROOT = "runs"


class ConfigError(ValueError):
    """Schema or value problem in a run config."""


@dataclass
class SearchSpaceConfig:
    max_count: int | None = None
    searchable: list[str] | None = None  # None: every stage except Mid
    overrides: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if self.max_count is not None and self.max_count < 1:
            raise ValueError("max_count must be positive")


@dataclass
class CostsConfig:
    resolution: tuple[int, int] = (256, 256)  # penalty table
    eta: float = 1.0
    latency_table: str | None = None
    report_width: int = 64  # derived-vs-base report runs at this width
    report_resolution: tuple[int, int] = (256, 256)

    def __post_init__(self):
        self.resolution = _hw(self.resolution, "costs.resolution")
        self.report_resolution = _hw(self.report_resolution, "costs.report_resolution")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.report_width < 2 or self.report_width % 2:
            raise ValueError("report_width must be an even positive int")


@dataclass
class EvalConfig:
    sigmas: list[float] = field(default_factory=lambda: [15.0, 25.0, 50.0])
    model: str = "finetuned"  # finetuned | identity | base
    num_images: int | None = None  # None: the whole held-out split

    def __post_init__(self):
        if self.model not in ("finetuned", "identity", "base"):
            raise ValueError(f"eval.model must be finetuned, identity or base, got {self.model!r}")
        if not self.sigmas or any(s < 0 for s in self.sigmas):
            raise ValueError("eval.sigmas must be a nonempty list of nonnegative values")


@dataclass
class RunConfig:
    network: UNetConfig = field(default_factory=UNetConfig)
    search_space: SearchSpaceConfig = field(default_factory=SearchSpaceConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    data: DatasetConfig = field(default_factory=DatasetConfig)
    costs: CostsConfig = field(default_factory=CostsConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str | None = None
    name: str = "run"

    def __post_init__(self):
        f = 2 ** self.network.depth
        if self.data.patch_size % f:
            raise ValueError(f"data.patch_size {self.data.patch_size} must be divisible by {f} "
                             f"for a {self.network.depth}-level network")
        if self.network.in_channels != self.data.channels:
            raise ValueError("network.in_channels must equal data.channels")

    def out_dir(self, override: str | None = None) -> Path:
        """Explicit override, then output_dir, then $DENOISE_NAS_OUT/<name>, then runs/<name>."""
        if override:
            return Path(override)
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUT_ENV) or DEFAULT_OUT_ROOT) / self.name

    def to_dict(self) -> dict:
        doc = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, UNetConfig):
                d = value.to_dict()
                d["stages"] = {k: v.id for k, v in value.stages.items()}
                doc[f.name] = d
            elif dataclasses.is_dataclass(value):
                doc[f.name] = _plain(dataclasses.asdict(value))
            else:
                doc[f.name] = value
        return doc


def _hw(value, where: str) -> tuple[int, int]:
    if isinstance(value, str):
        value = parse_resolution(value)
    try:
        h, w = (int(v) for v in value)
    except (TypeError, ValueError):
        raise ValueError(f"{where} must be [H, W] or 'HxW', got {value!r}") from None
    if h < 1 or w < 1:
        raise ValueError(f"{where} must be positive")
    return h, w


def parse_resolution(text: str) -> tuple[int, int]:
    parts = str(text).lower().split("x")
    if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
        raise ValueError(f"resolution must look like 256x256, got {text!r}")
    return int(parts[0]), int(parts[1])


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _section(cls, doc: Any, where: str):
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(doc).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}; allowed: {sorted(names)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


SECTIONS = {
    "network": UNetConfig,
    "search_space": SearchSpaceConfig,
    "train": TrainConfig,
    "finetune": FinetuneConfig,
    "data": DatasetConfig,
    "costs": CostsConfig,
    "eval": EvalConfig,
}
SEEDED = ("train", "finetune", "data")


def config_from_dict(doc: dict | None) -> RunConfig:
    """Validate a parsed document. A top-level ``seed`` fills in every
    section seed that is not given explicitly."""
    doc = dict(doc or {})
    allowed = set(SECTIONS) | {"output_dir", "name", "seed"}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}; allowed: {sorted(allowed)}")
    seed = doc.pop("seed", None)
    if seed is not None and not isinstance(seed, int):
        raise ConfigError(f"seed must be an int, got {seed!r}")
    kwargs = {}
    for key, cls in SECTIONS.items():
        sub = doc.get(key)
        if seed is not None and key in SEEDED:
            sub = dict(sub or {})
            sub.setdefault("seed", seed)
        kwargs[key] = _section(cls, sub, key)
    for key in ("output_dir", "name"):
        if doc.get(key) is not None:
            if not isinstance(doc[key], str) or not doc[key]:
                raise ConfigError(f"{key} must be a nonempty string")
            kwargs[key] = doc[key]
    try:
        return RunConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path | None) -> RunConfig:
    """Read a YAML or JSON run config (JSON is valid YAML). None gives defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from None
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg = config_from_dict(doc)
    if "name" not in (doc or {}):
        cfg.name = path.stem
    return cfg
