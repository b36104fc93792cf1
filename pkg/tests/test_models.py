# Unit tests for racegear.models.
# These tests validate the shared data types: grids, transmissions, masses and gear trajectories.

from __future__ import annotations

import numpy as np
import pytest

from racegear.errors import ValidationError
from racegear.models import (
    AlgorithmSettings,
    GearTrajectory,
    PowertrainSpec,
    TrackProfile,
    TransmissionKind,
    TransmissionSpec,
    VehicleSpec,
    dynamic_mass,
    effective_mass,
)


def test_track_profile_rejects_short_or_invalid_grids() -> None:
    with pytest.raises(ValidationError):
        TrackProfile(step_length=4.0, curvature=np.zeros(1))
    with pytest.raises(ValidationError):
        TrackProfile(step_length=0.0, curvature=np.zeros(5))
    with pytest.raises(ValidationError):
        TrackProfile(step_length=4.0, curvature=np.array([0.0, np.nan, 0.0]))


def test_track_profile_is_read_only_and_reports_lengths() -> None:
    track = TrackProfile(step_length=2.5, curvature=np.zeros(8))
    assert track.n_steps == 8
    assert track.total_length == pytest.approx(20.0)
    assert track.positions[-1] == pytest.approx(17.5)
    with pytest.raises(ValueError):
        track.curvature[0] = 1.0


def test_track_section_slices_curvature_and_checks_range() -> None:
    track = TrackProfile(step_length=1.0, curvature=np.arange(10) / 100.0)
    part = track.section(3, 4)
    assert part.n_steps == 4
    assert part.curvature[0] == pytest.approx(0.03)
    with pytest.raises(ValidationError):
        track.section(8, 4)


def test_transmission_defaults_and_checks() -> None:
    fgt = TransmissionSpec(kind="fgt", ratios=(7.8,))
    assert fgt.kind is TransmissionKind.fgt
    assert fgt.eta == pytest.approx(0.985)
    assert TransmissionSpec(kind="mgt", ratios=(10.0, 6.5)).eta == pytest.approx(0.975)
    assert TransmissionSpec(kind="cvt", ratio_min=4.0, ratio_max=12.0).eta == pytest.approx(0.92)

    with pytest.raises(ValidationError):
        TransmissionSpec(kind="fgt", ratios=(7.8, 5.0))
    with pytest.raises(ValidationError):
        TransmissionSpec(kind="mgt", ratios=(6.5, 10.0))
    with pytest.raises(ValidationError, match="1 to 4 ratios"):
        TransmissionSpec(kind="mgt", ratios=(14.0, 11.5, 9.0, 7.8, 5.5))
    with pytest.raises(ValidationError, match="1 to 4 ratios"):
        TransmissionSpec(kind="mgt")
    assert TransmissionSpec(kind="mgt", ratios=(11.5, 9.0, 7.8, 5.5)).n_gear == 4
    with pytest.raises(ValidationError):
        TransmissionSpec(kind="cvt", ratio_min=12.0, ratio_max=4.0)
    with pytest.raises(ValidationError):
        TransmissionSpec(kind="cvt", ratios=(7.8,), ratio_min=4.0, ratio_max=12.0)


def test_design_vector_and_with_design() -> None:
    mgt = TransmissionSpec(kind="mgt", ratios=(11.5, 7.8, 5.5))
    assert mgt.design_vector() == (11.5, 7.8, 5.5)
    assert mgt.with_design([12.0, 8.0, 5.0]).ratios == (12.0, 8.0, 5.0)

    cvt = TransmissionSpec(kind="cvt", ratio_min=4.0, ratio_max=12.0)
    assert cvt.design_vector() == (12.0,)
    assert cvt.with_design([10.0]).ratio_max == pytest.approx(10.0)


def test_effective_mass_penalties() -> None:
    vehicle = VehicleSpec(base_mass=1000.0, rotational_mass_factor=1.1)
    fgt = TransmissionSpec(kind="fgt", ratios=(7.8,))
    mgt3 = TransmissionSpec(kind="mgt", ratios=(11.5, 7.8, 5.5))
    cvt = TransmissionSpec(kind="cvt", ratio_min=4.0, ratio_max=12.0)

    assert effective_mass(vehicle, fgt) == pytest.approx(1000.0)
    assert effective_mass(vehicle, mgt3) == pytest.approx(1000.0 * (1 + 2 * 0.0037))
    assert effective_mass(vehicle, cvt) == pytest.approx(1026.0)
    assert dynamic_mass(vehicle, fgt) == pytest.approx(1100.0)

    single = TransmissionSpec(kind="mgt", ratios=(7.8,), mass_penalty_per_gear=0.0)
    assert effective_mass(vehicle, single) == pytest.approx(1000.0)


def test_vehicle_and_powertrain_reject_bad_values() -> None:
    with pytest.raises(ValidationError):
        VehicleSpec(base_mass=-1.0)
    with pytest.raises(ValidationError):
        VehicleSpec(rotational_mass_factor=0.9)
    with pytest.raises(ValidationError):
        PowertrainSpec(inverter_efficiency=1.2)
    with pytest.raises(ValidationError):
        PowertrainSpec(battery_capacity=1e6, battery_consumption_limit=2e6)


def test_best_efficiency_speed_minimizes_loss_per_power() -> None:
    pt = PowertrainSpec()
    speed = pt.best_efficiency_speed()
    torque = 0.5 * pt.em_torque_max
    expected = np.sqrt((pt.em_loss_a0 + pt.em_loss_a3 * torque**2) / pt.em_loss_a2)
    assert speed == pytest.approx(min(expected, pt.em_speed_max))
    assert PowertrainSpec(em_loss_a2=0.0).best_efficiency_speed() == pt.em_speed_max


def test_gear_trajectory_one_hot_and_changes() -> None:
    a = GearTrajectory(np.array([1, 2, 2, 3]))
    b = GearTrajectory(np.array([1, 1, 2, 3]))
    hot = a.one_hot(3)
    assert hot.shape == (4, 3)
    assert np.all(hot.sum(axis=1) == 1.0)
    assert hot[1, 1] == 1.0
    assert a.changes_from(b) == 1
    assert a == GearTrajectory([1, 2, 2, 3])
    assert hash(a) == hash(GearTrajectory([1, 2, 2, 3]))
    assert len({a, b, GearTrajectory([1, 1, 2, 3])}) == 2


def test_gear_trajectory_validation() -> None:
    with pytest.raises(ValidationError):
        GearTrajectory(np.array([0, 1]))
    with pytest.raises(ValidationError):
        GearTrajectory(np.array([1.5, 1.0]))
    gears = GearTrajectory.constant(5, 2)
    gears.check(5, 2)
    with pytest.raises(ValidationError):
        gears.check(5, 1)
    with pytest.raises(ValidationError):
        gears.check(4, 2)


def test_gear_trajectory_ratios() -> None:
    trans = TransmissionSpec(kind="mgt", ratios=(10.0, 6.5))
    assert list(GearTrajectory([2, 1]).ratios(trans)) == [6.5, 10.0]


def test_algorithm_settings_bounds() -> None:
    assert AlgorithmSettings().beta == 0.5
    with pytest.raises(ValidationError):
        AlgorithmSettings(beta=0.0)
    with pytest.raises(ValidationError):
        AlgorithmSettings(beta=1.5)
    with pytest.raises(ValidationError):
        AlgorithmSettings(max_outer_iterations=0)
