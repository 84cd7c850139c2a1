"""Experiment configuration: TOML or JSON file, validated with defaults."""

from __future__ import annotations

import dataclasses
import hashlib
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from .clustering import DEFAULT_K
from .dataio import OUTLIER_HIGH, OUTLIER_LOW
from .errors import ConfigError, DomainError
from .features import DEFAULT_WINDOW
from .fed import FederationConfig

MODES = ("federated", "centralized", "both")


@dataclass
class SyntheticSpec:
    households: int = 40
    days: int = 120
    seed: int | None = None  # falls back to the experiment seed
    noise_amp: float = 0.05
    seasonal_amp: float = 0.25


@dataclass
class ExperimentConfig:
    seed: int = 0
    mode: str = "federated"
    output_dir: str = "runs/experiment"
    data_csv: str | None = None
    synthetic: SyntheticSpec | None = None
    outlier_low: float = OUTLIER_LOW
    outlier_high: float = OUTLIER_HIGH
    split_fraction: float = 0.6
    split_boundary: datetime | None = None
    window: int = DEFAULT_WINDOW
    stride: int = 1
    clusters: int = DEFAULT_K
    federation: FederationConfig = field(default_factory=FederationConfig)
    lean: bool = False
    forecast_steps: int = 144

    def resolved(self) -> dict:
        d = dataclasses.asdict(self)
        if self.split_boundary is not None:
            d["split_boundary"] = self.split_boundary.isoformat()
        return d

    def content_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.resolved(), sort_keys=True).encode()
        ).hexdigest()


_KNOWN_TOP = {
    "seed", "mode", "output_dir", "data", "outliers", "split",
    "window", "stride", "clusters", "federation", "lean", "forecast_steps",
}
_KNOWN_FED = {
    "rounds", "clients_per_round", "local_epochs", "batch_size",
    "client_lr", "server_lr", "convergence_epsilon", "convergence_patience",
}
_KNOWN_SYNTH = {"households", "days", "seed", "noise_amp", "seasonal_amp"}


def _take(table: dict, known: set[str], where: str, warnings: list[str]) -> dict:
    for key in table:
        if key not in known:
            warnings.append(f"unknown key {key!r} in {where} (ignored)")
    return {k: v for k, v in table.items() if k in known}


def build_config(raw: dict) -> tuple[ExperimentConfig, list[str]]:
    """Validate a raw config mapping; returns the config plus warnings."""
    warnings: list[str] = []
    top = _take(dict(raw), _KNOWN_TOP, "config", warnings)

    cfg = ExperimentConfig()
    cfg.seed = int(top.get("seed", cfg.seed))
    cfg.mode = top.get("mode", cfg.mode)
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg.mode!r}")
    cfg.output_dir = str(top.get("output_dir", cfg.output_dir))

    data = top.get("data", {})
    if "csv" in data and "synthetic" in data:
        raise ConfigError("data: specify either csv or synthetic, not both")
    if "csv" in data:
        cfg.data_csv = str(data["csv"])
    else:
        synth = _take(dict(data.get("synthetic", {})), _KNOWN_SYNTH, "data.synthetic", warnings)
        cfg.synthetic = SyntheticSpec(**synth)
        if cfg.synthetic.households < 1 or cfg.synthetic.days < 1:
            raise ConfigError("synthetic households and days must be >= 1")

    outliers = top.get("outliers", {})
    cfg.outlier_low = float(outliers.get("low", cfg.outlier_low))
    cfg.outlier_high = float(outliers.get("high", cfg.outlier_high))
    if cfg.outlier_low >= cfg.outlier_high:
        raise ConfigError("outliers.low must be below outliers.high")

    split = top.get("split", {})
    if "boundary" in split:
        b = split["boundary"]
        cfg.split_boundary = b if isinstance(b, datetime) else datetime.fromisoformat(str(b))
    else:
        cfg.split_fraction = float(split.get("fraction", cfg.split_fraction))
        if not 0 < cfg.split_fraction < 1:
            raise ConfigError("split.fraction must be in (0, 1)")

    cfg.window = int(top.get("window", cfg.window))
    cfg.stride = int(top.get("stride", cfg.stride))
    if cfg.window < 1 or cfg.stride < 1:
        raise ConfigError("window and stride must be >= 1")
    cfg.clusters = int(top.get("clusters", cfg.clusters))
    if cfg.clusters < 1:
        raise ConfigError("clusters must be >= 1")
    cfg.lean = bool(top.get("lean", cfg.lean))
    cfg.forecast_steps = int(top.get("forecast_steps", cfg.forecast_steps))

    fed_raw = _take(dict(top.get("federation", {})), _KNOWN_FED, "federation", warnings)
    try:
        cfg.federation = FederationConfig(seed=cfg.seed, **fed_raw)
    except (TypeError, ValueError, DomainError) as exc:
        raise ConfigError(f"federation: {exc}")
    if cfg.federation.rounds < 1 or cfg.federation.local_epochs < 1:
        raise ConfigError("federation rounds and local_epochs must be >= 1")
    if cfg.federation.batch_size < 1:
        raise ConfigError("federation batch_size must be >= 1")
    return cfg, warnings


def load_config(path: str | Path) -> tuple[ExperimentConfig, list[str]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        else:
            with open(path) as fh:
                raw = json.load(fh)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    return build_config(raw)
