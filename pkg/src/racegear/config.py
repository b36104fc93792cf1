# Configuration layer for racegear.
# Reads an optional TOML file with [vehicle], [powertrain], [transmission], [solver] and
# [algorithm] sections whose keys are the field names of the matching dataclasses.
#
# Missing keys fall back to the dataclass defaults; unknown keys are errors.

from __future__ import annotations

import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 fallback
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from racegear.conic import SolverSettings
from racegear.errors import ConfigError, ValidationError
from racegear.models import (
    AlgorithmSettings,
    PowertrainSpec,
    TransmissionKind,
    TransmissionSpec,
    VehicleSpec,
)

ENV_CONFIG_DIR = "RACEGEAR_CONFIG_DIR"
CONFIG_FILE_NAME = "racegear.toml"


class TransmissionChoice(str, Enum):
    fgt = "fgt"
    cvt = "cvt"
    mgt = "mgt"
    mgt2 = "mgt2"
    mgt3 = "mgt3"
    mgt4 = "mgt4"


DEFAULT_RATIOS: Dict[TransmissionChoice, Tuple[float, ...]] = {
    TransmissionChoice.fgt: (7.8,),
    TransmissionChoice.mgt2: (10.0, 6.5),
    TransmissionChoice.mgt3: (11.5, 7.8, 5.5),
    TransmissionChoice.mgt4: (12.0, 9.0, 7.0, 5.5),
}
DEFAULT_CVT_RANGE = (4.0, 12.0)
# Default search box around each ratio when the config gives no design_bounds.
DEFAULT_BOUND_SPREAD = (0.6, 1.5)

_SECTIONS = {
    "vehicle": VehicleSpec,
    "powertrain": PowertrainSpec,
    "transmission": TransmissionSpec,
    "solver": SolverSettings,
    "algorithm": AlgorithmSettings,
}


@dataclass(frozen=True)
class Config:
    vehicle: VehicleSpec = field(default_factory=VehicleSpec)
    powertrain: PowertrainSpec = field(default_factory=PowertrainSpec)
    solver: SolverSettings = field(default_factory=SolverSettings)
    algorithm: AlgorithmSettings = field(default_factory=AlgorithmSettings)
    # Raw [transmission] table; resolved per --trans choice by resolve_transmission.
    transmission: Mapping[str, Any] = field(default_factory=dict)
    source: Optional[Path] = None

    def with_battery_limit(self, limit: Optional[float]) -> "Config":
        if limit is None:
            return self
        try:
            powertrain = replace(self.powertrain, battery_consumption_limit=float(limit))
        except ValidationError as exc:
            raise ConfigError(f"--battery-limit: {exc}") from exc
        return replace(self, powertrain=powertrain)

    def snapshot(self) -> Dict[str, Any]:
        """Nested mapping with the config file's sections; feeds config_from_mapping."""
        return {
            "vehicle": asdict(self.vehicle),
            "powertrain": asdict(self.powertrain),
            "transmission": _plain(dict(self.transmission)),
            "solver": asdict(self.solver),
            "algorithm": asdict(self.algorithm),
        }


def _plain(value: Any) -> Any:
    # Tuples become lists so snapshots survive a JSON round trip unchanged.
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    return value


def discover_config_path(explicit: Optional[Path] = None) -> Optional[Path]:
    # --config wins; then $RACEGEAR_CONFIG_DIR/racegear.toml if it exists.
    if explicit is not None:
        return explicit
    directory = os.environ.get(ENV_CONFIG_DIR)
    if directory:
        candidate = Path(directory) / CONFIG_FILE_NAME
        if candidate.is_file():
            return candidate
    return None


def _section(name: str, table: Any, cls: type) -> Dict[str, Any]:
    if not isinstance(table, Mapping):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    for key in table:
        if key not in known:
            raise ConfigError(f"unknown key '{key}' in [{name}]")
    return dict(table)


def config_from_mapping(data: Mapping[str, Any], source: Optional[Path] = None) -> Config:
    for name in data:
        if name not in _SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
    tables = {name: _section(name, data.get(name, {}), cls) for name, cls in _SECTIONS.items()}
    try:
        return Config(
            vehicle=VehicleSpec(**tables["vehicle"]),
            powertrain=PowertrainSpec(**tables["powertrain"]),
            solver=SolverSettings(**tables["solver"]),
            algorithm=AlgorithmSettings(**tables["algorithm"]),
            transmission=tables["transmission"],
            source=source,
        )
    except (ValidationError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Optional[Path] = None) -> Config:
    """Load the config found by discover_config_path, or the built-in defaults."""
    path = discover_config_path(path)
    if path is None:
        return Config()
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_mapping(data, source=path)


def _default_bounds(values: Tuple[float, ...]) -> Tuple[Tuple[float, float], ...]:
    low, high = DEFAULT_BOUND_SPREAD
    return tuple((low * v, high * v) for v in values)


def _default_ratios(count: int) -> Tuple[float, ...]:
    if count == 1:
        return DEFAULT_RATIOS[TransmissionChoice.fgt]
    try:
        return DEFAULT_RATIOS[TransmissionChoice(f"mgt{count}")]
    except ValueError as exc:
        raise ConfigError(f"no built-in ratios for {count} gears; set [transmission] ratios") from exc


def resolve_transmission(choice: TransmissionChoice, table: Mapping[str, Any]) -> TransmissionSpec:
    """TransmissionSpec for a --trans choice, taking ratios from the table when they fit."""
    choice = TransmissionChoice(choice)
    table = dict(table)
    declared = table.pop("kind", None)
    if declared is not None and declared not in {k.value for k in TransmissionKind}:
        raise ConfigError(f"[transmission] unknown kind '{declared}'")
    ratios = tuple(float(r) for r in table.pop("ratios", ()) or ())
    ratio_min = table.pop("ratio_min", None)
    ratio_max = table.pop("ratio_max", None)
    bounds = tuple(tuple(b) for b in table.pop("design_bounds", ()) or ())
    extra = {k: table[k] for k in ("efficiency", "mass_penalty_per_gear", "cvt_mass_penalty")
             if k in table}

    if choice is TransmissionChoice.cvt:
        kind = TransmissionKind.cvt
        use_table = declared in (None, "cvt")
        low = float(ratio_min) if use_table and ratio_min is not None else DEFAULT_CVT_RANGE[0]
        high = float(ratio_max) if use_table and ratio_max is not None else DEFAULT_CVT_RANGE[1]
        design = (high,)
        spec_args: Dict[str, Any] = {"ratio_min": low, "ratio_max": high}
    else:
        if choice is TransmissionChoice.fgt:
            kind, count = TransmissionKind.fgt, 1
        elif choice is TransmissionChoice.mgt:
            kind, count = TransmissionKind.mgt, len(ratios) or 3
        else:
            kind, count = TransmissionKind.mgt, int(choice.value[-1])
        if len(ratios) == count and declared in (None, kind.value):
            design = ratios
        else:
            design = _default_ratios(count)
        spec_args = {"ratios": design}

    if len(bounds) != len(design):
        bounds = _default_bounds(design)
    if kind.value != (declared or kind.value):
        # Efficiency and penalties belong to the declared kind, not this one.
        extra = {}
    try:
        return TransmissionSpec(kind=kind, design_bounds=bounds, **spec_args, **extra)
    except (ValidationError, TypeError) as exc:
        raise ConfigError(f"[transmission] {exc}") from exc
