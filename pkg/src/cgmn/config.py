"""Run configuration: nested sections addressed by dotted keys (``model.hidden``)."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    graphs: str = ""
    pairs: str = ""
    split: list[float] = field(default_factory=lambda: [0.6, 0.2, 0.2])
    out: str = "runs/latest"


@dataclass
class AugmentSection:
    p_mask: float = 0.1
    p_drop: float = 0.1
    seed: int = -1  # -1: follow train.seed
    mask_mode: str = "column"


@dataclass
class ModelSection:
    layers: int = 3
    hidden: int = 100
    activation: str = "relu"
    cross_view: bool = True
    cross_graph: bool = True
    cross_graph_mode: str = "vector"
    aggregate: str = "sum"


@dataclass
class LossSection:
    tau: float = 0.5
    negatives: str = "both"


@dataclass
class HeadSection:
    ged_mlp: list[int] = field(default_factory=lambda: [64, 16])
    symmetrize: bool = False
    bsd_threshold: float = 0.0
    ged_score: str = "cosine"


@dataclass
class CalibrateSection:
    label_fraction: float = 0.01
    min_labels: int = 2
    l2: float = 1e-3


@dataclass
class TrainSection:
    task: str = "ged"
    lr: float = 1e-4
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    chunk: int = 2


@dataclass
class Config:
    data: DataSection = field(default_factory=DataSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    head: HeadSection = field(default_factory=HeadSection)
    calibrate: CalibrateSection = field(default_factory=CalibrateSection)
    train: TrainSection = field(default_factory=TrainSection)

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def augment_seed(self) -> int:
        return self.train.seed if self.augment.seed < 0 else self.augment.seed

    def validate(self) -> Config:
        t = self.train
        if not t.lr > 0:
            raise ConfigError(f"train.lr must be > 0, got {t.lr}")
        if t.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {t.epochs}")
        if t.batch_size < 1 or t.chunk < 1:
            raise ConfigError("train.batch_size and train.chunk must be >= 1")
        if t.task not in ("ged", "bsd"):
            raise ConfigError(f"train.task must be 'ged' or 'bsd', got {t.task!r}")
        if t.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"train.optimizer must be 'adam' or 'sgd', got {t.optimizer!r}")
        if self.model.layers < 1 or self.model.hidden < 1:
            raise ConfigError("model.layers and model.hidden must be >= 1")
        choices = {
            ("model", "activation"): ("relu", "linear"),
            ("model", "cross_graph_mode"): ("vector", "scalar"),
            ("model", "aggregate"): ("sum", "mean"),
            ("loss", "negatives"): ("both", "inter_only"),
            ("augment", "mask_mode"): ("column", "entry"),
            ("head", "ged_score"): ("cosine", "distance", "mlp"),
        }
        for (sec, key), allowed in choices.items():
            if getattr(getattr(self, sec), key) not in allowed:
                raise ConfigError(f"{sec}.{key} must be one of {allowed}")
        for key in ("p_mask", "p_drop"):
            if not 0 <= getattr(self.augment, key) <= 1:
                raise ConfigError(f"augment.{key} must lie in [0, 1]")
        if not self.loss.tau > 0:
            raise ConfigError("loss.tau must be > 0")
        if not 0 < self.calibrate.label_fraction <= 1:
            raise ConfigError("calibrate.label_fraction must lie in (0, 1]")
        if self.calibrate.l2 < 0:
            raise ConfigError("calibrate.l2 must be >= 0")
        if len(self.data.split) != 3 or min(self.data.split) < 0 or abs(sum(self.data.split) - 1) > 1e-9:
            raise ConfigError("data.split must be three nonnegative fractions summing to 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def get(self, key: str) -> Any:
        sec, name = _split_key(self, key)
        return getattr(sec, name)

    def set(self, key: str, value: Any) -> None:
        sec, name = _split_key(self, key)
        current = getattr(sec, name)
        setattr(sec, name, _coerce(key, value, current))

    def copy(self) -> Config:
        return from_dict(self.to_dict())


def _split_key(cfg: Config, key: str):
    parts = key.split(".")
    if len(parts) != 2 or not hasattr(cfg, parts[0]) or not dataclasses.is_dataclass(getattr(cfg, parts[0])):
        raise ConfigError(f"unknown config key {key!r}")
    sec = getattr(cfg, parts[0])
    if parts[1] not in {f.name for f in dataclasses.fields(sec)}:
        raise ConfigError(f"unknown config key {key!r}")
    return sec, parts[1]


def _coerce(key: str, value: Any, current: Any) -> Any:
    if isinstance(value, str) and not isinstance(current, str):
        text = value.strip()
        try:
            if isinstance(current, bool):
                if text.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(text)
                return text.lower() in ("true", "1")
            if isinstance(current, int):
                return int(text)
            if isinstance(current, float):
                return float(text)
            if isinstance(current, list):
                return [type(current[0])(x) if current else float(x) for x in text.strip("[]").split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"cannot parse {value!r} for {key}") from exc
    if isinstance(current, bool) and not isinstance(value, bool):
        raise ConfigError(f"{key} expects a boolean, got {value!r}")
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if type(current) is not type(value):
        raise ConfigError(f"{key} expects {type(current).__name__}, got {type(value).__name__}")
    return value


def from_dict(d: dict) -> Config:
    cfg = Config()
    for sec, body in d.items():
        if not isinstance(body, dict):
            raise ConfigError(f"config section {sec!r} must be a table")
        for key, value in body.items():
            cfg.set(f"{sec}.{key}", value)
    return cfg


def load_config(path=None, overrides: list[str] | None = None, env: dict | None = None) -> Config:
    """Defaults <- TOML file <- ``key=value`` overrides <- ``CGMN_SEED``."""
    cfg = Config()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                cfg = from_dict(tomllib.load(fh))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        base = Path(path).parent
        for key in ("graphs", "pairs"):
            val = getattr(cfg.data, key)
            if val and not Path(val).is_absolute():
                setattr(cfg.data, key, str(base / val))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value)
    env = os.environ if env is None else env
    if env.get("CGMN_SEED"):
        cfg.set("train.seed", env["CGMN_SEED"])
    return cfg.validate()
