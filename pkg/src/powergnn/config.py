"""Declarative run configuration (YAML) and the bundled presets.

A run file has the sections ``network``, ``model``, ``train``, ``oracle``,
``io`` and a top-level ``seed``::

    network: {M_S: 3, M_P: 5, N_S_tx: 16, N_P_tx: 8, N_S: 10, N_P: 6}
    model:   {kind: pgnn, hidden_layers: 1, hidden_dim: 5}
    train:   {epochs: 1000, seed: 0}
    oracle:  {restarts: 3}
    io:      {datasets: data, checkpoints: ckpt, reports: reports}
    seed: 0

Training keys that are left out fall back to the per-architecture defaults
of :data:`powergnn.training.ARCH_DEFAULTS`, so one file can drive every model.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .models import ModelKind
from .netsim import NetworkConfig
from .oracle import WmmseOptions
from .training import ARCH_DEFAULTS, TrainConfig, default_train_config

PRESETS = ("hetnet", "homonet", "single")
_SECTIONS = {"network", "model", "train", "oracle", "io", "seed"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind = ModelKind.PGNN
    hidden_layers: Optional[int] = None
    hidden_dim: Optional[int] = None

    def dims_for(self, kind) -> tuple[int, int]:
        """Layer sizes for ``kind``; explicit sizes only apply to the configured kind."""
        kind = ModelKind.parse(kind)
        hl, hd = ARCH_DEFAULTS[kind]["hidden_layers"], ARCH_DEFAULTS[kind]["hidden_dim"]
        if kind is self.kind:
            hl = self.hidden_layers or hl
            hd = self.hidden_dim or hd
        return hl, hd


@dataclass(frozen=True)
class IoPaths:
    datasets: Path = Path("data")
    checkpoints: Path = Path("ckpt")
    reports: Path = Path("reports")


@dataclass(frozen=True)
class RunConfig:
    network: NetworkConfig
    model: ModelSpec = field(default_factory=ModelSpec)
    train: dict = field(default_factory=dict)
    oracle: WmmseOptions = field(default_factory=WmmseOptions)
    io: IoPaths = field(default_factory=IoPaths)
    seed: int = 0
    source: Optional[str] = None

    def train_config(self, kind=None, **overrides) -> TrainConfig:
        kind = self.model.kind if kind is None else ModelKind.parse(kind)
        return default_train_config(kind, **{**self.train, **overrides})

    def to_dict(self) -> dict:
        return {
            "network": self.network.to_dict(),
            "model": {"kind": self.model.kind.value, "hidden_layers": self.model.hidden_layers,
                      "hidden_dim": self.model.hidden_dim},
            "train": dict(self.train),
            "oracle": self.oracle.to_dict(),
            "io": {k: str(getattr(self.io, k)) for k in ("datasets", "checkpoints", "reports")},
            "seed": self.seed,
        }


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return sec


def _known(sec: dict, allowed, name: str):
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")


def _coerce_floats(sec: dict, cls) -> dict:
    # YAML 1.1 reads "5e-4" as a string
    out = dict(sec)
    for f in fields(cls):
        if isinstance(f.default, float) and isinstance(out.get(f.name), (str, int)) \
                and not isinstance(out.get(f.name), bool):
            try:
                out[f.name] = float(out[f.name])
            except ValueError:
                raise ConfigError(f"{f.name} must be a number, got {out[f.name]!r}") from None
    return out


def _writable(path: Path) -> bool:
    p = path.resolve()
    while not p.exists():
        if p.parent == p:
            return False
        p = p.parent
    return p.is_dir() and os.access(p, os.W_OK)


def parse_config(doc: dict, source: Optional[str] = None) -> RunConfig:
    """Validate a decoded config document; every error is a :class:`ConfigError`."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping of sections")
    _known(doc, _SECTIONS, "config")
    if "network" not in doc:
        raise ConfigError("config needs a 'network' section")
    try:
        net = NetworkConfig.from_dict(_section(doc, "network"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"network: {exc}") from None

    m = _section(doc, "model")
    _known(m, {"kind", "hidden_layers", "hidden_dim"}, "model")
    try:
        kind = ModelKind.parse(m.get("kind", "pgnn"))
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None
    for key in ("hidden_layers", "hidden_dim"):
        v = m.get(key)
        if v is not None and (not isinstance(v, int) or v < 1):
            raise ConfigError(f"model.{key} must be a positive integer")
    spec = ModelSpec(kind, m.get("hidden_layers"), m.get("hidden_dim"))

    t = _section(doc, "train")
    _known(t, {f.name for f in fields(TrainConfig)}, "train")
    t = _coerce_floats(t, TrainConfig)
    try:
        default_train_config(kind, **t)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None
    for key in ("train_size", "test_size"):
        if key in t and (not isinstance(t[key], int) or t[key] < 1):
            raise ConfigError(f"train.{key} must be a positive integer")

    o = _section(doc, "oracle")
    _known(o, {f.name for f in fields(WmmseOptions)}, "oracle")
    o = _coerce_floats(o, WmmseOptions)
    try:
        oracle = WmmseOptions(**o)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"oracle: {exc}") from None

    io_sec = _section(doc, "io")
    _known(io_sec, {"datasets", "checkpoints", "reports"}, "io")
    io = IoPaths(**{k: Path(v) for k, v in io_sec.items()})
    for key in ("datasets", "checkpoints", "reports"):
        if not _writable(getattr(io, key)):
            raise ConfigError(f"io.{key} path {getattr(io, key)} is not writable")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    return RunConfig(net, spec, t, oracle, io, seed, source)


def load_config(name_or_path) -> RunConfig:
    """Load a preset by name (``hetnet``, ``homonet``, ``single``) or a YAML file by path."""
    name = str(name_or_path)
    if name in PRESETS:
        text = resources.files("powergnn").joinpath("presets").joinpath(f"{name}.yaml").read_text()
    else:
        try:
            text = Path(name).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {name}: {exc.strerror or exc}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{name}: invalid YAML: {exc}") from None
    return parse_config(doc, source=name)


def network_diff(a: NetworkConfig, b: NetworkConfig) -> list[str]:
    """Human-readable field differences between two network configs."""
    da, db = a.to_dict(), b.to_dict()
    return [f"{k}: {da[k]!r} != {db[k]!r}" for k in da if da[k] != db[k]]
