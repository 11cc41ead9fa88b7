"""Run configuration: INI-style ``key = value`` files with fixed sections.

Unknown sections or keys are rejected before any work starts.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .nets import NET_KINDS
from .training import TrainConfig

__all__ = ["ConfigError", "DatasetConfig", "ArchConfig", "RunConfig", "load_config", "dump_config"]


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    n_train: int = 60
    n_test: int = 20
    size: int = 64
    coils: int = 4
    acceleration: float = 4.0
    center_fraction: float = 0.08
    sigma_min: float = 0.04
    sigma_max: float = 0.06
    seed: int = 1234

    def validate(self):
        if self.n_train < 0 or self.n_test < 0 or self.size < 2 or self.coils < 1:
            raise ConfigError("dataset sizes must be positive")
        if not 0 <= self.sigma_min <= self.sigma_max:
            raise ConfigError("need 0 <= sigma_min <= sigma_max")
        if self.acceleration < 1 or not 0 < self.center_fraction <= 1 / self.acceleration:
            raise ConfigError("need acceleration >= 1 and 0 < center_fraction <= 1/acceleration")


@dataclass
class ArchConfig:
    net_kind: str = "lpdsnet"
    K: int = 8
    M: int = 16
    p: int = 5
    s: int = 2

    def validate(self):
        if self.net_kind not in NET_KINDS:
            raise ConfigError(f"net_kind must be one of {NET_KINDS}, got {self.net_kind!r}")
        if min(self.K, self.M, self.p, self.s) < 1:
            raise ConfigError("K, M, p and s must be positive")


@dataclass
class TrainingSection:
    total_steps: int = 20000
    lr_start: float = 5e-4
    lr_end: float = 2e-6
    batch_size: int = 1
    loss_mode: str = "ssdu"
    ssdu_keep_fraction: float = 0.8
    ssdu_center_size: int = 4  # desk scale; 10x10 suits full-size k-space
    seed: int = 0
    log_every: int = 100
    val_every: int = 1000
    n_val: int = 5
    checkpoint_every: int = 5000
    precision: str = "double"

    def validate(self):
        if self.precision not in ("double", "single"):
            raise ConfigError("precision must be 'double' or 'single'")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})


@dataclass
class PathsConfig:
    data_dir: str = "data"
    run_dir: str = "run"


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    training: TrainingSection = field(default_factory=TrainingSection)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> RunConfig:
        self.dataset.validate()
        self.arch.validate()
        self.training.validate()
        return self


def _coerce(raw: str, typ, where: str):
    try:
        if typ is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ.__name__}") from None


def load_config(path=None, text: str | None = None) -> RunConfig:
    """Parse a config file (or string) on top of the defaults and validate it."""
    cfg = RunConfig()
    if path is None and text is None:
        return cfg.validate()
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        if text is None:
            text = Path(path).read_text()
        cp.read_string(text)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for sec in cp.sections():
        if sec not in sections:
            raise ConfigError(f"unknown section [{sec}]")
        obj = sections[sec]
        types = {f.name: type(getattr(obj, f.name)) for f in fields(obj)}
        for key, raw in cp.items(sec):
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            setattr(obj, key, _coerce(raw, types[key], f"[{sec}] {key}"))
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    out = []
    for f in fields(cfg):
        out.append(f"[{f.name}]")
        for k, v in asdict(getattr(cfg, f.name)).items():
            out.append(f"{k} = {v}")
        out.append("")
    return "\n".join(out)
