"""Experiment configuration in TOML.

Sections: ``[run]``, ``[data]``, ``[gan]``, ``[history]``, ``[detector]``.
Every key is typed and range-checked at parse time and unknown keys are
rejected. Per-stage seeds derive from ``run.seed``::

    gan = seed, detector = seed + 1, data = seed + 2, eval = seed + 3
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .detector import DetectorConfig
from .errors import ConfigError, ContractError
from .gan import GanConfig

SEED_OFFSETS = {"gan": 0, "detector": 1, "data": 2, "eval": 3}


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synthetic"
    weights: tuple[float, ...] = (1.0,)
    means: tuple[tuple[float, ...], ...] = ((0.0,),)
    stds: tuple[float, ...] = (1.0,)
    n_train: int = 10_000
    n_test: int = 2_000
    anomaly_shift: tuple[float, ...] = (6.0,)
    images: str = ""
    labels: str = ""
    anomalous_labels: tuple[int, ...] = ()
    test_fraction: float = 0.2


@dataclass(frozen=True)
class HistoryConfig:
    alpha: float = 1.0
    beta: float = 3.0
    case2: bool = False
    wide_factor: float = 3.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "out"
    histogram_bins: int = 50
    coverage_radius: float = 0.1
    coverage_samples: int = 10_000


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    data: DataConfig = field(default_factory=DataConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    history: HistoryConfig = field(default_factory=HistoryConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def seed_for(self, stage: str) -> int:
        return self.run.seed + SEED_OFFSETS[stage]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with ``run.seed`` replaced and stage seeds re-derived."""
        return _seeded(dataclasses.replace(self, run=dataclasses.replace(self.run, seed=int(seed))))

    def with_out_dir(self, out_dir) -> "ExperimentConfig":
        return dataclasses.replace(self, run=dataclasses.replace(self.run, out_dir=str(out_dir)))

    def to_dict(self) -> dict:
        out = {}
        for name, cls in SECTIONS.items():
            section = getattr(self, name)
            out[name] = {}
            for f in _fields(cls):
                v = getattr(section, f.name)
                if v is None:
                    continue
                out[name][f.name] = _plain(v)
        return out


SECTIONS = {
    "run": RunConfig,
    "data": DataConfig,
    "gan": GanConfig,
    "history": HistoryConfig,
    "detector": DetectorConfig,
}

# keys set from run.seed rather than read from the file
_DERIVED = {"seed"}


def _fields(cls):
    if cls is RunConfig:
        return dataclasses.fields(cls)
    return [f for f in dataclasses.fields(cls) if f.name not in _DERIVED]


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _seeded(cfg: ExperimentConfig) -> ExperimentConfig:
    return dataclasses.replace(
        cfg,
        gan=dataclasses.replace(cfg.gan, seed=cfg.seed_for("gan")),
        detector=dataclasses.replace(cfg.detector, seed=cfg.seed_for("detector")),
    )


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v):
    return _is_int(v) or isinstance(v, float)


def _coerce(key: str, value, default, annotation: str):
    """Check ``value`` against the field's declared type; return the typed value."""
    if "None" in annotation:
        if not _is_real(value):
            raise ConfigError(key, "must be a number")
        return float(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, "must be true or false")
        return value
    if _is_int(default):
        if not _is_int(value):
            raise ConfigError(key, "must be an integer")
        return value
    if isinstance(default, float):
        if not _is_real(value):
            raise ConfigError(key, "must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, "must be a string")
        return value
    # tuple fields
    if not isinstance(value, list):
        raise ConfigError(key, "must be an array")
    if "tuple[tuple" in annotation:
        if not all(isinstance(row, list) and row and all(_is_real(x) for x in row) for row in value):
            raise ConfigError(key, "must be an array of non-empty numeric arrays")
        return tuple(tuple(float(x) for x in row) for row in value)
    if "int" in annotation:
        if not all(_is_int(x) for x in value):
            raise ConfigError(key, "must be an array of integers")
        return tuple(value)
    if not all(_is_real(x) for x in value):
        raise ConfigError(key, "must be an array of numbers")
    return tuple(float(x) for x in value)


def _build(name: str, cls, raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError(name, "must be a table")
    known = {f.name: f for f in _fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
    defaults = cls()
    kwargs = {}
    for key, value in raw.items():
        f = known[key]
        kwargs[key] = _coerce(f"{name}.{key}", value, getattr(defaults, key), str(f.type))
    try:
        return cls(**kwargs)
    except ContractError as exc:
        word = str(exc).split()[0]
        key = f"{name}.{word}" if word in known else name
        raise ConfigError(key, str(exc)) from exc


def _check(cfg: ExperimentConfig, base_dir: Path | None) -> None:
    d, h, r = cfg.data, cfg.history, cfg.run
    if d.kind not in ("synthetic", "idx"):
        raise ConfigError("data.kind", "must be 'synthetic' or 'idx'")
    if d.kind == "synthetic":
        if not len(d.weights) == len(d.means) == len(d.stds) >= 1:
            raise ConfigError("data.weights", "weights, means and stds need the same non-zero length")
        if len({len(m) for m in d.means}) != 1:
            raise ConfigError("data.means", "all means need the same dimension")
        if any(w < 0 for w in d.weights) or not sum(d.weights) > 0:
            raise ConfigError("data.weights", "must be >= 0 with a positive sum")
        if any(s < 0 for s in d.stds):
            raise ConfigError("data.stds", "must be >= 0")
        if d.anomaly_shift and len(d.anomaly_shift) not in (1, len(d.means[0])):
            raise ConfigError("data.anomaly_shift", "length must be 1 or the data dimension")
    else:
        for key in ("images", "labels"):
            path = getattr(d, key)
            if not path:
                raise ConfigError(f"data.{key}", "required when data.kind = 'idx'")
            full = Path(path) if base_dir is None else base_dir / path
            if not full.is_file():
                raise ConfigError(f"data.{key}", f"file not found: {full}")
    if d.n_train < 1:
        raise ConfigError("data.n_train", "must be >= 1")
    if d.n_test < 1:
        raise ConfigError("data.n_test", "must be >= 1")
    if not 0.0 <= d.test_fraction < 1.0:
        raise ConfigError("data.test_fraction", "must lie in [0, 1)")
    if not 0.0 <= h.alpha < cfg.gan.n_epochs:
        raise ConfigError("history.alpha", f"must satisfy 0 <= alpha < gan.n_epochs ({cfg.gan.n_epochs})")
    if h.beta < 0:
        raise ConfigError("history.beta", "must be >= 0")
    if not h.wide_factor > 1:
        raise ConfigError("history.wide_factor", "must be > 1")
    if r.histogram_bins < 1:
        raise ConfigError("run.histogram_bins", "must be >= 1")
    if not r.coverage_radius > 0:
        raise ConfigError("run.coverage_radius", "must be > 0")
    if r.coverage_samples < 1:
        raise ConfigError("run.coverage_samples", "must be >= 1")


def config_from_dict(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    for name in raw:
        if name not in SECTIONS:
            raise ConfigError(name, "unknown section")
    parts = {name: _build(name, cls, raw.get(name, {})) for name, cls in SECTIONS.items()}
    cfg = _seeded(ExperimentConfig(**parts))
    _check(cfg, base_dir)
    if base_dir is not None and cfg.data.kind == "idx":
        d = dataclasses.replace(
            cfg.data,
            images=os.fspath(base_dir / cfg.data.images),
            labels=os.fspath(base_dir / cfg.data.labels),
        )
        cfg = dataclasses.replace(cfg, data=d)
    return cfg


def parse_config_text(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"invalid TOML: {exc}") from exc
    return config_from_dict(raw, base_dir)


def parse_config(path) -> ExperimentConfig:
    """Read and validate a TOML config; IDX paths resolve relative to the file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    return parse_config_text(text, path.parent.resolve())


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.to_dict())
