# Unit tests for racegear.config.
# Discovery, strict key checking and transmission resolution.

from __future__ import annotations

from pathlib import Path

import pytest

from racegear.config import (
    CONFIG_FILE_NAME,
    ENV_CONFIG_DIR,
    Config,
    TransmissionChoice,
    config_from_mapping,
    load_config,
    resolve_transmission,
)
from racegear.errors import ConfigError
from racegear.models import TransmissionKind


def test_defaults_without_a_config_file(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(ENV_CONFIG_DIR, raising=False)
    config = load_config()
    assert config == Config()
    assert config.source is None


def test_config_dir_from_environment(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    (tmp_path / CONFIG_FILE_NAME).write_text(
        "[vehicle]\nbase_mass = 1200.0\n\n[algorithm]\nbeta = 0.25\n", encoding="utf-8"
    )
    monkeypatch.setenv(ENV_CONFIG_DIR, str(tmp_path))
    config = load_config()
    assert config.vehicle.base_mass == 1200.0
    assert config.algorithm.beta == 0.25
    assert config.source == tmp_path / CONFIG_FILE_NAME


def test_explicit_path_wins_and_must_exist(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_malformed_toml(tmp_path: Path) -> None:
    path = tmp_path / "bad.toml"
    path.write_text("[vehicle\nbase_mass = ", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_unknown_keys_and_sections_are_rejected() -> None:
    with pytest.raises(ConfigError, match="unknown key 'mass'"):
        config_from_mapping({"vehicle": {"mass": 1000.0}})
    with pytest.raises(ConfigError, match="unknown config section"):
        config_from_mapping({"tyres": {}})
    with pytest.raises(ConfigError):
        config_from_mapping({"vehicle": 3})


def test_invalid_values_become_config_errors() -> None:
    with pytest.raises(ConfigError):
        config_from_mapping({"algorithm": {"beta": 2.0}})
    with pytest.raises(ConfigError):
        config_from_mapping({"powertrain": {"battery_consumption_limit": 1e9}})


def test_battery_limit_override() -> None:
    config = Config().with_battery_limit(4e6)
    assert config.powertrain.battery_consumption_limit == 4e6
    assert Config().with_battery_limit(None) == Config()
    with pytest.raises(ConfigError):
        Config().with_battery_limit(1e9)


def test_snapshot_rebuilds_the_same_config() -> None:
    config = config_from_mapping({
        "vehicle": {"aux_power": 1500.0},
        "transmission": {"ratios": [12.0, 8.0, 5.0], "design_bounds": [[10, 14], [6, 9], [4, 6]]},
    })
    snapshot = config.snapshot()
    assert snapshot["transmission"]["ratios"] == [12.0, 8.0, 5.0]
    assert config_from_mapping(snapshot) == config


def test_resolve_builtin_transmissions() -> None:
    fgt = resolve_transmission(TransmissionChoice.fgt, {})
    assert fgt.kind is TransmissionKind.fgt and fgt.ratios == (7.8,)
    assert fgt.design_bounds == ((0.6 * 7.8, 1.5 * 7.8),)

    mgt3 = resolve_transmission(TransmissionChoice.mgt3, {})
    assert mgt3.ratios == (11.5, 7.8, 5.5)
    assert len(mgt3.design_bounds) == 3

    cvt = resolve_transmission(TransmissionChoice.cvt, {})
    assert (cvt.ratio_min, cvt.ratio_max) == (4.0, 12.0)
    assert cvt.design_bounds == pytest.approx(((0.6 * 12.0, 1.5 * 12.0),))


def test_resolve_uses_table_ratios_only_when_they_fit() -> None:
    table = {"kind": "mgt", "ratios": [12.0, 8.0, 5.0], "efficiency": 0.97}
    mgt3 = resolve_transmission(TransmissionChoice.mgt3, table)
    assert mgt3.ratios == (12.0, 8.0, 5.0)
    assert mgt3.eta == 0.97

    mgt2 = resolve_transmission(TransmissionChoice.mgt2, table)
    assert mgt2.ratios == (10.0, 6.5)

    free = resolve_transmission(TransmissionChoice.mgt, {"ratios": [9.0, 6.0]})
    assert free.n_gear == 2

    # Efficiency declared for an MGT does not leak into the FGT.
    fgt = resolve_transmission(TransmissionChoice.fgt, table)
    assert fgt.eta == 0.985


def test_resolve_rejects_bad_tables() -> None:
    with pytest.raises(ConfigError):
        resolve_transmission(TransmissionChoice.mgt3, {"kind": "dct"})
    with pytest.raises(ConfigError):
        resolve_transmission(TransmissionChoice.mgt, {"ratios": [1, 2, 3, 4, 5]})
    with pytest.raises(ConfigError):
        resolve_transmission(TransmissionChoice.cvt, {"ratio_min": 12.0, "ratio_max": 4.0})
