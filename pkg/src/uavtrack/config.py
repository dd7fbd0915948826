"""Pipeline configuration: nested dataclasses loaded from / dumped to JSON.

Every section validates on construction; errors name the dotted key at fault.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .lidar import ANGLE_CONVENTIONS, AS_PRINTED, ExclusionZone
from .thermal import ThermalConfig
from .tracker import KalmanConfig


@dataclass(frozen=True)
class LidarConfig:
    zones: tuple[ExclusionZone, ...] = ()
    gap_mm: float = 150.0
    min_points: int = 10
    points_per_degree: int = 4
    angle_convention: str = AS_PRINTED
    rate_hz: float = 40.0
    expected_uav_length: float | None = None
    recalibrate: bool = True

    def __post_init__(self):
        if self.gap_mm <= 0:
            raise ValueError("gap_mm must be positive")
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")
        if self.points_per_degree < 1:
            raise ValueError("points_per_degree must be >= 1")
        if self.angle_convention not in ANGLE_CONVENTIONS:
            raise ValueError(f"angle_convention must be one of {ANGLE_CONVENTIONS}")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")


@dataclass(frozen=True)
class EstimatorConfig:
    # subtracted from thermal-mode positions; the hot motors sit above the box center
    thermal_bias_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    # emit predicted positions on frames where the track coasted without a detection
    emit_coasting: bool = False


@dataclass(frozen=True)
class MountConfig:
    """Camera/LIDAR rig pose in the global frame (copied into calibration records)."""

    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    yaw_deg: float = 0.0


@dataclass(frozen=True)
class OutputConfig:
    trajectory_csv: str | None = None
    report_json: str | None = None
    plot_dir: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    iso_threshold: int = 6400
    min_score: float = 0.8
    bypass_kf: bool = False
    calibration: str | None = None
    tracker: KalmanConfig = field(default_factory=KalmanConfig)
    thermal: ThermalConfig = field(default_factory=ThermalConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    mount: MountConfig = field(default_factory=MountConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if self.iso_threshold < 0:
            raise ValueError("iso_threshold must be non-negative")
        if not 0.0 <= self.min_score <= 1.0:
            raise ValueError("min_score must be in [0, 1]")


_SECTIONS = {"tracker": KalmanConfig, "thermal": ThermalConfig, "lidar": LidarConfig,
             "estimator": EstimatorConfig, "mount": MountConfig, "output": OutputConfig}


def _coerce(cls, name: str, value: Any, prefix: str):
    key = f"{prefix}{name}"
    if cls is LidarConfig and name == "zones":
        if not isinstance(value, list):
            raise ConfigError(key, "must be a list of zones")
        zones = []
        for i, z in enumerate(value):
            try:
                zones.append(ExclusionZone.from_json(z))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"{key}[{i}]", str(exc)) from None
        return tuple(zones)
    if name == "thermal_bias_mm":
        if not (isinstance(value, list) and len(value) == 3):
            raise ConfigError(key, "must be a list of 3 numbers")
        return tuple(float(v) for v in value)
    return value


def _build(cls, obj: dict, prefix: str = ""):
    if not isinstance(obj, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "must be a JSON object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for name, value in obj.items():
        if name not in names:
            raise ConfigError(f"{prefix}{name}", "unknown key")
        if cls is PipelineConfig and name in _SECTIONS:
            kwargs[name] = _build(_SECTIONS[name], value, f"{name}.")
        else:
            kwargs[name] = _coerce(cls, name, value, prefix)
    # validate one key at a time so the error can name it
    defaults = cls()
    for name, value in kwargs.items():
        try:
            dataclasses.replace(defaults, **{name: value})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{prefix}{name}", str(exc)) from None
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix.rstrip(".") or "<root>", str(exc)) from None


def config_from_dict(obj: dict) -> PipelineConfig:
    return _build(PipelineConfig, obj)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("<file>", f"{path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc.msg}") from None
    return config_from_dict(obj)


def config_to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            v = config_to_dict(v)
        elif f.name == "zones":
            v = [z.to_json() for z in v]
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def dump_defaults() -> str:
    return json.dumps(config_to_dict(PipelineConfig()), indent=2, sort_keys=True) + "\n"
