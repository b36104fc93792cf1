# Unit tests for racegear.exact.
# Branch-and-bound against brute force on tiny sections, budgets and infeasible sections.

from __future__ import annotations

import math

import numpy as np
import pytest

from racegear.errors import ValidationError
from racegear.exact import BnbNode, enumerate_exhaustive, solve_exact
from racegear.models import (
    AlgorithmSettings,
    PowertrainSpec,
    TrackProfile,
    TransmissionSpec,
    VehicleSpec,
)
from racegear.track import section_fixture
from racegear.transcription import SectionBoundary

MGT2 = TransmissionSpec(kind="mgt", ratios=(10.0, 6.5))


def _boundary(entry: float = 55.0) -> SectionBoundary:
    return SectionBoundary(entry_speed=entry, battery_allotment=255e3)


def test_child_bounds_never_drop_below_the_parent() -> None:
    root = BnbNode((), bound=4.0, depth=0, node_id=0)
    child = root.child(2, 1, bound=3.9, node_id=1)
    assert child.bound == 4.0
    assert child.depth == 1
    grandchild = child.child(0, 2, bound=4.2, node_id=2)
    assert grandchild.fixed == ((0, 2), (2, 1))
    assert grandchild.assignments() == {0: 2, 2: 1}
    assert grandchild.bound == 4.2


def test_enumeration_budget_is_enforced() -> None:
    section = section_fixture("braking-corner", 20)
    with pytest.raises(ValidationError):
        enumerate_exhaustive(section, VehicleSpec(), PowertrainSpec(), MGT2, _boundary())


def test_exact_step_limit_and_transmission_checks() -> None:
    settings = AlgorithmSettings(max_exact_steps=10)
    with pytest.raises(ValidationError):
        solve_exact(section_fixture("braking-corner", 12), VehicleSpec(), PowertrainSpec(),
                    MGT2, _boundary(), settings)
    cvt = TransmissionSpec(kind="cvt", ratio_min=4.0, ratio_max=12.0)
    with pytest.raises(ValidationError):
        solve_exact(section_fixture("braking-corner", 4), VehicleSpec(), PowertrainSpec(),
                    cvt, _boundary())


def test_branch_and_bound_matches_enumeration() -> None:
    section = section_fixture("braking-corner", 4)
    args = (section, VehicleSpec(), PowertrainSpec(), MGT2, _boundary())
    exact = solve_exact(*args)
    brute = enumerate_exhaustive(*args)

    assert brute.status == "optimal"
    assert brute.node_count == 16
    assert exact.status == "optimal"
    assert exact.feasible
    assert exact.section_time == pytest.approx(brute.section_time, rel=1e-6)
    assert exact.lower_bound <= exact.section_time + 1e-9
    assert exact.bound_gap >= 0.0
    exact.gears.check(4, 2)


def test_single_gear_section_needs_one_sequence() -> None:
    single = TransmissionSpec(kind="mgt", ratios=(7.8,))
    section = section_fixture("chicane", 5)
    args = (section, VehicleSpec(), PowertrainSpec(), single, _boundary())
    brute = enumerate_exhaustive(*args)
    exact = solve_exact(*args)
    assert brute.node_count == 1
    assert list(brute.gears.active_gear) == [1] * 5
    assert exact.section_time == pytest.approx(brute.section_time, rel=1e-6)


def test_tiny_node_budget_still_reports_a_valid_bound() -> None:
    section = section_fixture("braking-corner", 4)
    settings = AlgorithmSettings(node_budget=1)
    result = solve_exact(section, VehicleSpec(), PowertrainSpec(), MGT2, _boundary(), settings)
    assert result.status in ("optimal", "node_budget")
    assert result.feasible
    assert result.lower_bound <= result.section_time + 1e-9


def test_section_without_any_feasible_gear_sequence() -> None:
    # Nearly no friction brakes: 80 m/s cannot drop to the corner speed in 90 m.
    weak = VehicleSpec(brake_force_max_front=1.0, brake_force_max_rear=1.0)
    section = section_fixture("braking-corner", 4)
    args = (section, weak, PowertrainSpec(), MGT2, _boundary(80.0))

    brute = enumerate_exhaustive(*args)
    assert brute.status == "infeasible"
    assert brute.gears is None and brute.solution is None
    assert math.isinf(brute.section_time)

    exact = solve_exact(*args)
    assert exact.status == "infeasible"
    assert not exact.feasible
    assert math.isinf(exact.bound_gap)


MGT3 = TransmissionSpec(kind="mgt", ratios=(11.5, 7.8, 5.5))


def _random_section(rng: np.random.Generator, n_steps: int) -> TrackProfile:
    # Radii of 80 m and up keep a 30 m/s entry feasible in every gear.
    curvature = rng.uniform(0.0, 1.0 / 80.0, n_steps) * (rng.random(n_steps) < 0.6)
    return TrackProfile(step_length=float(rng.uniform(8.0, 15.0)), curvature=curvature,
                        name="random")


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
def test_branch_and_bound_matches_enumeration_on_random_sections(seed: int) -> None:
    rng = np.random.default_rng(seed)
    trans, n_steps = (MGT2, 4) if seed % 2 == 0 else (MGT3, 3)
    section = _random_section(rng, n_steps)
    args = (section, VehicleSpec(), PowertrainSpec(), trans, _boundary(30.0))

    brute = enumerate_exhaustive(*args)
    exact = solve_exact(*args)
    assert brute.status == "optimal"
    assert exact.status == "optimal"
    assert exact.section_time == pytest.approx(brute.section_time, abs=1e-6)
    assert exact.lower_bound <= exact.section_time + 1e-9


@pytest.mark.slow
def test_more_gears_never_slow_a_section_without_mass_penalty() -> None:
    # Each ratio set contains the previous one, so the feasible gear choices only grow.
    ratio_sets = ((11.5, 5.5), (11.5, 7.8, 5.5), (11.5, 9.0, 7.8, 5.5))
    section = section_fixture("braking-corner", 4)
    times = []
    for ratios in ratio_sets:
        trans = TransmissionSpec(kind="mgt", ratios=ratios, mass_penalty_per_gear=0.0)
        result = solve_exact(section, VehicleSpec(), PowertrainSpec(), trans, _boundary())
        assert result.status == "optimal"
        times.append(result.section_time)

    assert times[1] <= times[0] + 1e-7
    assert times[2] <= times[1] + 1e-7
