# Unit tests for racegear.gop.
# Pointwise Hamiltonian minimization: gear choice, brakes, ties and infeasible steps.

from __future__ import annotations

from typing import Sequence

import numpy as np
import pytest

from racegear.driver import DampedCostates
from racegear.errors import StepInfeasibleError, ValidationError
from racegear.gop import (
    HamiltonianModel,
    StepInputs,
    StepState,
    hamiltonian,
    hamiltonian_table,
    hamiltonian_value,
    minimize_step,
    solve_gop,
)
from racegear.models import (
    ContinuousSolution,
    GearTrajectory,
    PowertrainSpec,
    TransmissionSpec,
    VehicleSpec,
)

MGT2 = TransmissionSpec(kind="mgt", ratios=(11.5, 6.5))


def _model() -> HamiltonianModel:
    return HamiltonianModel(VehicleSpec(), PowertrainSpec(), MGT2)


def _state(model: HamiltonianModel, v: float) -> StepState:
    return StepState(kinetic_energy=0.5 * model.mass * v**2, battery_energy=20e6)


def _solution(model: HamiltonianModel, speeds: Sequence[float], gear: int) -> ContinuousSolution:
    v = np.asarray(speeds, dtype=float)
    n = v.size
    zeros = np.zeros(n)
    return ContinuousSolution(
        step_length=10.0,
        kinetic_energy=0.5 * model.mass * v**2,
        battery_energy=np.linspace(25e6, 24.9e6, n + 1),
        velocity=v,
        lethargy=1.0 / v,
        motor_force=np.full(n, 1000.0),
        brake_front=zeros,
        brake_rear=zeros,
        gearbox_force=np.full(n, 975.0),
        gear_ratio=np.full(n, MGT2.ratios[gear - 1]),
        costate_kinetic=zeros,
        costate_battery=zeros,
        lap_time=float(np.sum(10.0 / v)),
        effective_mass=model.mass,
        active_gear=np.full(n, gear),
    )


def test_model_rejects_a_cvt() -> None:
    cvt = TransmissionSpec(kind="cvt", ratio_min=4.0, ratio_max=12.0)
    with pytest.raises(ValidationError):
        HamiltonianModel(VehicleSpec(), PowertrainSpec(), cvt)


def test_hamiltonian_is_infinite_when_the_gear_overspeeds() -> None:
    model = _model()
    # Gear 1 tops out at 2000 * 0.33 / 11.5 = 57.4 m/s.
    state = _state(model, 70.0)
    assert hamiltonian(model, state, (-1e-6, 0.0), 1, StepInputs(0.0)) == float("inf")
    assert np.isfinite(hamiltonian(model, state, (-1e-6, 0.0), 2, StepInputs(0.0)))


def test_hamiltonian_value_is_affine_in_the_costates() -> None:
    assert hamiltonian_value(0.05, (-1e-6, -2e-6), 1000.0, -500.0) == pytest.approx(
        0.05 - 1e-3 + 1e-3
    )


def test_negative_kinetic_costate_asks_for_traction() -> None:
    model = _model()
    sample = minimize_step(model, 0, _state(model, 20.0), (-1e-6, 0.0))
    # At 20 m/s gear 1 reaches the traction limit 9000/0.975 N; gear 2 stops at its torque limit.
    assert sample.gear == 1
    assert sample.inputs.motor_force == pytest.approx(9000.0 / 0.975)
    assert sample.inputs.brake_force == 0.0
    assert sample.values[0] < sample.values[1]


def test_positive_kinetic_costate_brakes_fully() -> None:
    model = _model()
    sample = minimize_step(model, 3, _state(model, 20.0), (1e-6, 0.0))
    assert sample.step == 3
    assert sample.inputs.brake_front == pytest.approx(14000.0)
    assert sample.inputs.brake_rear == pytest.approx(9000.0)
    # Without a battery price the motor recuperates as hard as the power limit allows.
    assert sample.inputs.motor_force == pytest.approx(-300e3 / 20.0)


def test_ties_keep_the_previous_gear_then_the_lowest_index() -> None:
    model = _model()
    state = _state(model, 30.0)
    assert minimize_step(model, 0, state, (0.0, 0.0), previous_gear=2).gear == 2
    assert minimize_step(model, 0, state, (0.0, 0.0)).gear == 1


def test_no_feasible_gear_raises() -> None:
    model = _model()
    with pytest.raises(StepInfeasibleError) as info:
        minimize_step(model, 7, _state(model, 120.0), (-1e-6, 0.0))
    assert info.value.step == 7


def test_exact_minimum_beats_a_dense_force_grid() -> None:
    model = _model()
    costates = (-2e-6, -1e-6)
    for v in (15.0, 35.0, 50.0):
        sample = minimize_step(model, 0, _state(model, v), costates)
        for gear in (1, 2):
            if not model.feasible(gear, v):
                assert sample.values[gear - 1] == float("inf")
                continue
            low, high = model.force_bounds(gear, v)
            grid = np.linspace(low, high, 20001)
            kin, bat = model.rates(gear, v, grid, sample.inputs.brake_force)
            h = hamiltonian_value(1.0 / v, costates, kin, bat)
            assert sample.values[gear - 1] <= float(h.min()) + 1e-12
        low, high = model.force_bounds(sample.gear, v)
        assert low - 1e-9 <= sample.inputs.motor_force <= high + 1e-9


def test_solve_gop_switches_where_the_hamiltonian_improves() -> None:
    model = _model()
    solution = _solution(model, [20.0, 30.0, 40.0], gear=2)
    costates = DampedCostates(np.full(3, -1e-6), np.zeros(3))
    result = solve_gop(solution, costates, model)

    # At 40 m/s both gears hit the power limit: equal H keeps gear 2.
    assert list(result.gears.active_gear) == [1, 1, 2]
    assert result.improvement[0] > 0 and result.improvement[1] > 0
    assert result.improvement[2] == 0.0
    assert result.fallback_steps == ()
    assert hamiltonian_table(result.samples).shape == (3, 2)


def test_solve_gop_checks_costate_length() -> None:
    model = _model()
    solution = _solution(model, [20.0, 30.0], gear=1)
    with pytest.raises(ValidationError):
        solve_gop(solution, DampedCostates(np.zeros(3), np.zeros(3)), model)


def test_non_strict_mode_keeps_the_previous_gear_on_infeasible_steps() -> None:
    model = _model()
    solution = _solution(model, [20.0, 120.0], gear=2)
    costates = DampedCostates(np.full(2, -1e-6), np.zeros(2))
    with pytest.raises(StepInfeasibleError):
        solve_gop(solution, costates, model)

    result = solve_gop(solution, costates, model, strict=False)
    assert result.fallback_steps == (1,)
    assert list(result.gears.active_gear) == [1, 2]
    assert result.improvement[1] == 0.0
