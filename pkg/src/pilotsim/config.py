"""Experiment configuration: a flat, JSON-serialisable parameter set."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .geometry import Scenario
from .pilots import PowerSplit, optimal_power_split


class ConfigError(ValueError):
    pass


_CELLS_PER_TIERS = {1: 7, 2: 19}


@dataclass(frozen=True)
class SystemConfig:
    L: int = 7
    K: int = 5
    M: int = 100
    m_sweep: tuple[int, ...] | None = None
    c_u: int = 100
    c_d: int = 100
    tau: int | None = None  # defaults to reuse_r * K
    reuse_r: int = 1
    snr_db: float = 10.0
    omega: float = 1.0
    omega_sp: float = 1.0
    lambda_tp: float = 1.0
    rho_mode: str = "optimal"  # or "fixed"
    rho_d_sq: float | None = None
    xi_ul: float = 0.5
    constellation: str = "qam4"  # or "gaussian"
    scenario: str = "circle"
    circle_radius: float = 0.8
    radius_sweep: tuple[float, ...] | None = None
    k_sweep: tuple[int, ...] | None = None
    min_dist: float = 0.1
    cell_radius: float = 1.0
    tiers: int = 1
    partition_cells: int | None = None  # cells partitioned / reported in hybrid runs
    path_loss_exponent: float = 3.0
    trials: int = 2000
    placements: int = 1
    dl_symbols: int = 100
    seed: int = 42
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("m_sweep", "radius_sweep", "k_sweep"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(value))
        self.validate()

    def validate(self) -> None:
        if self.tiers not in _CELLS_PER_TIERS:
            raise ConfigError("tiers must be 1 or 2")
        if self.L != _CELLS_PER_TIERS[self.tiers]:
            raise ConfigError(f"L={self.L} does not match tiers={self.tiers} ({_CELLS_PER_TIERS[self.tiers]} cells)")
        for name in ("K", "M", "c_u", "c_d", "reuse_r", "trials", "placements", "dl_symbols"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.tau is not None and self.tau != self.reuse_r * self.K:
            raise ConfigError(f"tau={self.tau} must equal reuse_r * K = {self.reuse_r * self.K}")
        if self.training_length > self.c_u:
            raise ConfigError("tau must not exceed c_u")
        if not 0.0 <= self.xi_ul <= 1.0:
            raise ConfigError("xi_ul must lie in [0, 1]")
        if self.rho_mode not in ("optimal", "fixed"):
            raise ConfigError("rho_mode must be 'optimal' or 'fixed'")
        if self.rho_mode == "fixed" and (self.rho_d_sq is None or not 0.0 <= self.rho_d_sq < 1.0):
            raise ConfigError("fixed rho_mode needs rho_d_sq in [0, 1)")
        if self.constellation not in ("qam4", "gaussian"):
            raise ConfigError("constellation must be 'qam4' or 'gaussian'")
        try:
            Scenario(self.scenario)
        except ValueError:
            raise ConfigError(f"unknown scenario {self.scenario!r}") from None
        if self.partition_cells is not None and not 1 <= self.partition_cells <= self.L:
            raise ConfigError("partition_cells must lie in [1, L]")
        if self.omega <= 0 or self.omega_sp <= 0 or self.lambda_tp < 0:
            raise ConfigError("omega, omega_sp must be positive and lambda_tp non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    @property
    def training_length(self) -> int:
        return self.reuse_r * self.K if self.tau is None else self.tau

    @property
    def sigma_sq(self) -> float:
        """Noise variance giving ``omega / sigma^2 = SNR``."""
        return self.omega / 10 ** (self.snr_db / 10)

    @property
    def hybrid_cells(self) -> int:
        return self.L if self.partition_cells is None else self.partition_cells

    def split(self, M: int | None = None, L: int | None = None, c_u: int | None = None) -> PowerSplit:
        if self.rho_mode == "fixed":
            return PowerSplit.fixed(self.rho_d_sq)
        return optimal_power_split(self.M if M is None else M, self.L if L is None else L, self.K, self.c_u if c_u is None else c_u)

    def replace(self, **changes) -> SystemConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d.pop("extra")
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> SystemConfig:
        names = {f.name for f in dataclasses.fields(cls)} - {"extra"}
        unknown = set(values) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values = dict(values)
        # L follows tiers unless given explicitly
        if "tiers" in values and "L" not in values:
            values["L"] = _CELLS_PER_TIERS.get(values["tiers"], -1)
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def parse_value(text: str) -> Any:
    """Interpret a ``--set`` value as JSON when possible, else as a plain string."""
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        return text
    if isinstance(value, float) and math.isfinite(value) and value.is_integer() and "." not in text and "e" not in text.lower():
        return int(value)
    return value


def load_values(path: str | Path | None = None, overrides: list[str] | None = None) -> dict[str, Any]:
    """Raw key/value pairs from a JSON file with ``key=value`` overrides applied on top."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a flat JSON object")
    for item in overrides or []:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = parse_value(text.strip())
    return values


def load_config(path: str | Path | None = None, overrides: list[str] | None = None, **extra) -> SystemConfig:
    values = load_values(path, overrides)
    values.update({k: v for k, v in extra.items() if v is not None})
    return SystemConfig.from_dict(values)
