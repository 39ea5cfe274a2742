"""Numeric thresholds of the labeling pipeline, in one overridable record."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

# Absorbs round-off from the geographic round trip so that fixtures placed
# exactly on a threshold land on the inclusive side.
DIST_EPS_M = 1e-6
ANGLE_EPS_DEG = 1e-9


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdConfig:
    offroad_max_m: float = 10.5
    inter_pos_max_m: float = 30.0
    inter_neg_min_m: float = 100.0
    driveable_tol_deg: float = 22.5
    heading_max_offset_deg: float = 60.0
    heading_excl_m: float = 30.0
    bike_crop_offset_deg: float = 45.0
    wrongway_tol_deg: float = 22.5
    crop_fov_deg: float = 100.0
    crop_px: int = 227
    train_fraction: float = 0.8

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not v > 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.inter_neg_min_m <= self.inter_pos_max_m:
            raise ConfigError("inter_neg_min_m must exceed inter_pos_max_m")
        if not self.crop_fov_deg < 180:
            raise ConfigError("crop_fov_deg must be below 180")
        if not self.train_fraction < 1:
            raise ConfigError("train_fraction must be below 1")
        if int(self.crop_px) != self.crop_px:
            raise ConfigError("crop_px must be an integer")

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ThresholdConfig:
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise ConfigError(f"unknown threshold keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            try:
                kw[k] = float(v)
            except (TypeError, ValueError):
                raise ConfigError(f"{k} must be a number, got {v!r}") from None
        if "crop_px" in kw:
            if not kw["crop_px"].is_integer():
                raise ConfigError(f"crop_px must be an integer, got {kw['crop_px']}")
            kw["crop_px"] = int(kw["crop_px"])
        return cls(**kw)

    def override(self, **changes: Any) -> ThresholdConfig:
        changes = {k: v for k, v in changes.items() if v is not None}
        merged = self.as_dict()
        merged.update(changes)
        return ThresholdConfig.from_dict(merged)


def _parse_value(raw: str) -> Any:
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    return raw


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Read flat ``key = value`` lines; ``#`` comments and ``[section]`` headers are ignored."""
    out: dict[str, Any] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = _parse_value(value)
    return out
