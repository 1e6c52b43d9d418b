"""Run configuration: a YAML document with fixed sections and strict keys.

Every key has a default, so an empty file (or no file) is a valid config.
Unknown sections or keys are rejected to catch typos in sweeps. Layout and
defaults::

    schedule:  {kind: linear, T: 1000, beta_start: 1.0e-4, beta_end: 0.02, sigma_variant: beta}
    ladder:    [8, 16, 32]
    model:     {backend: analytic, depth: 2, width: 32, pe_degree: 6, checkpoint: null}
    sampler:   {T_f: 1000, T_s: 100, delta_ts: 0.3, lambda: 1.0, seed: 0,
                strict_paper_init: false, exact_guidance: true}
    data:      {toy: unit_gaussian, params: {}, image_dir: null}
    train:     {steps: 5000, batch_size: 8, lr: 1.0e-4, clip: 1.0, mode: resize,
                patch_size: null, ema_decay: 0.99, log_every: 100}
    bench:     {reference_T: null, sweep: []}
    eval:      {n_samples: 1000, n_projections: 64}
    output:    {dir: out, format: raw, n_samples: 1, emit_levels: false}

``model.pe_degree: 0`` trains without positional encoding. ``bench.reference_T``
defaults to ``schedule.T``. Toy datasets are built at the finest ladder
resolution unless ``data.params`` sets ``H``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Any

import yaml

from .errors import ConfigError


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-3`` as a float, as YAML 1.2 does."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def _load(text: str):
    return yaml.load(text, Loader=_Loader)  # noqa: S506 (SafeLoader subclass)

BACKENDS = ("analytic", "net")
FORMATS = ("raw", "pgm", "ppm")


@dataclass(frozen=True)
class ScheduleSection:
    kind: str = "linear"
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sigma_variant: str = "beta"


@dataclass(frozen=True)
class ModelSection:
    backend: str = "analytic"
    depth: int = 2
    width: int = 32
    pe_degree: int = 6
    checkpoint: str | None = None


@dataclass(frozen=True)
class SamplerSection:
    T_f: int = 1000
    T_s: int = 100
    delta_ts: float = 0.3
    lam: float = 1.0
    seed: int = 0
    strict_paper_init: bool = False
    exact_guidance: bool = True


@dataclass(frozen=True)
class DataSection:
    toy: str | None = "unit_gaussian"
    params: dict = field(default_factory=dict)
    image_dir: str | None = None


@dataclass(frozen=True)
class TrainSection:
    steps: int = 5000
    batch_size: int = 8
    lr: float = 1e-4
    clip: float | None = 1.0
    mode: str = "resize"
    patch_size: int | None = None
    ema_decay: float = 0.99
    log_every: int = 100


@dataclass(frozen=True)
class BenchSection:
    reference_T: int | None = None
    sweep: tuple = ()


@dataclass(frozen=True)
class EvalSection:
    n_samples: int = 1000
    n_projections: int = 64


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    format: str = "raw"
    n_samples: int = 1
    emit_levels: bool = False


# YAML spelling -> attribute name, where they differ
_ALIASES = {"sampler": {"lambda": "lam"}}

_SECTIONS = {
    "schedule": ScheduleSection,
    "model": ModelSection,
    "sampler": SamplerSection,
    "data": DataSection,
    "train": TrainSection,
    "bench": BenchSection,
    "eval": EvalSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class RunConfig:
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    ladder: tuple = (8, 16, 32)
    model: ModelSection = field(default_factory=ModelSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    bench: BenchSection = field(default_factory=BenchSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        for name in ("schedule", "ladder", "model", "sampler", "data", "train", "bench", "eval", "output"):
            value = getattr(self, name)
            if name == "ladder":
                out[name] = list(value)
                continue
            rev = {v: k for k, v in _ALIASES.get(name, {}).items()}
            sec = {}
            for f in dataclasses.fields(value):
                v = getattr(value, f.name)
                sec[rev.get(f.name, f.name)] = list(v) if isinstance(v, tuple) else v
            out[name] = sec
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def hash(self) -> str:
        """Short digest of the canonical config, written into every CSV row.

        The output directory is left out so reruns into another directory
        carry the same hash.
        """
        d = self.to_dict()
        del d["output"]["dir"]
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def replace(self, **sections) -> RunConfig:
        return dataclasses.replace(self, **sections)


def _coerce(section: str, key: str, value, default):
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {value!r}")
        return value
    if isinstance(default, int) and value is not None:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if isinstance(default, float) and value is not None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        return tuple(value)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where} must be a mapping, got {value!r}")
        return dict(value)
    return value


def _build_section(name: str, raw) -> Any:
    cls = _SECTIONS[name]
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    aliases = _ALIASES.get(name, {})
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        attr = aliases.get(key, key)
        if attr not in known or (key == attr and key in aliases.values()):
            allowed = sorted({v: k for k, v in aliases.items()}.get(k, k) for k in known)
            raise ConfigError(f"unknown key {name}.{key}; allowed: {', '.join(allowed)}")
        kwargs[attr] = _coerce(name, key, value, getattr(defaults, attr))
    return cls(**kwargs)


def config_from_dict(d: dict | None) -> RunConfig:
    d = {} if d is None else d
    if not isinstance(d, dict):
        raise ConfigError("config document must be a mapping")
    unknown = set(d) - set(_SECTIONS) - {"ladder"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    kwargs = {name: _build_section(name, d.get(name)) for name in _SECTIONS}
    ladder = d.get("ladder", RunConfig.ladder)
    if not isinstance(ladder, (list, tuple)) or not all(isinstance(r, int) and not isinstance(r, bool) for r in ladder):
        raise ConfigError(f"ladder must be a list of integers, got {ladder!r}")
    cfg = RunConfig(ladder=tuple(ladder), **kwargs)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.model.backend not in BACKENDS:
        raise ConfigError(f"model.backend must be one of {BACKENDS}, got {cfg.model.backend!r}")
    if cfg.output.format not in FORMATS:
        raise ConfigError(f"output.format must be one of {FORMATS}, got {cfg.output.format!r}")
    if cfg.data.toy is None and cfg.data.image_dir is None:
        raise ConfigError("data needs a toy dataset name or an image_dir")
    for name in ("n_samples",):
        if getattr(cfg.output, name) < 1:
            raise ConfigError(f"output.{name} must be >= 1")
    if cfg.train.steps < 0 or cfg.train.batch_size < 1 or cfg.train.log_every < 1:
        raise ConfigError("train.steps must be >= 0, batch_size and log_every >= 1")
    if cfg.model.pe_degree < 0:
        raise ConfigError("model.pe_degree must be >= 0")


def parse_config(text: str) -> RunConfig:
    try:
        doc = _load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return config_from_dict(doc)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def apply_overrides(cfg: RunConfig, assignments) -> RunConfig:
    """Apply ``section.key=value`` strings (values parsed as YAML scalars)."""
    d = cfg.to_dict()
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        path, raw = item.split("=", 1)
        try:
            value = _load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: {exc}") from None
        parts = path.strip().split(".")
        if parts == ["ladder"]:
            d["ladder"] = value
            continue
        if len(parts) != 2:
            raise ConfigError(f"override key {path!r} must be section.key")
        sec, key = parts
        if sec not in d or not isinstance(d[sec], dict):
            raise ConfigError(f"unknown config section {sec!r}")
        d[sec][key] = value
    return config_from_dict(d)
