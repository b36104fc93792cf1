# Gearshift optimization: pointwise Hamiltonian minimization over the active gear and the
# continuous inputs, with states and (damped) costates held fixed.
#
#   H = q + lambda_kin * dE_kin/ds + lambda_bat * dE_bat/ds      (s/m)
#
# q = 1/v comes from the state. The gearbox, inverter and battery are evaluated tight, so for
# one gear H is piecewise polynomial in the motor force (degree <= 4) with kinks where the
# motor force or the AC power change sign. Each piece is minimized exactly from the roots of
# its derivative.

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial

from racegear.components import LossSurface, gear_loss_surface
from racegear.errors import StepInfeasibleError, ValidationError
from racegear.models import (
    ContinuousSolution,
    GearTrajectory,
    PowertrainSpec,
    TransmissionKind,
    TransmissionSpec,
    VehicleSpec,
    dynamic_mass,
)

if TYPE_CHECKING:
    from racegear.driver import DampedCostates

TIE_TOLERANCE = 1e-12
_SPEED_SLACK = 1e-9


@dataclass(frozen=True)
class StepState:
    kinetic_energy: float
    battery_energy: float


@dataclass(frozen=True)
class StepInputs:
    motor_force: float
    brake_front: float = 0.0
    brake_rear: float = 0.0

    @property
    def brake_force(self) -> float:
        return self.brake_front + self.brake_rear


@dataclass(frozen=True)
class HamiltonianSample:
    step: int
    # One value per gear (1-based gear g at index g-1); inf marks an infeasible gear.
    values: Tuple[float, ...]
    gear: int
    inputs: StepInputs

    @property
    def value(self) -> float:
        return self.values[self.gear - 1]


class HamiltonianModel:
    """Vehicle, powertrain and per-gear loss surfaces needed to evaluate H at a step."""

    def __init__(self, vehicle: VehicleSpec, powertrain: PowertrainSpec, trans: TransmissionSpec):
        if trans.kind is TransmissionKind.cvt:
            raise ValidationError("gearshift optimization needs a geared transmission")
        self.vehicle = vehicle
        self.powertrain = powertrain
        self.trans = trans
        self.mass = dynamic_mass(vehicle, trans)
        self.surfaces: List[LossSurface] = [
            gear_loss_surface(powertrain, vehicle, r) for r in trans.ratios
        ]

    @property
    def n_gear(self) -> int:
        return len(self.surfaces)

    def speed(self, kinetic_energy: float) -> float:
        if not kinetic_energy > 0:
            raise ValidationError("kinetic energy must be positive")
        return float(np.sqrt(2.0 * kinetic_energy / self.mass))

    def feasible(self, gear: int, v: float) -> bool:
        return v <= self.surfaces[gear - 1].speed_max * (1.0 + _SPEED_SLACK)

    def force_bounds(self, gear: int, v: float) -> Tuple[float, float]:
        s = self.surfaces[gear - 1]
        q = 1.0 / v
        power = self.powertrain.em_power_max * q
        low = -min(s.torque_force_max, power)
        high = min(s.torque_force_max, power, self.vehicle.traction_force_max / self.trans.eta)
        return low, high

    def rates(self, gear: int, v: float, force, brake) -> Tuple[np.ndarray, np.ndarray]:
        """Per-distance dE_kin/ds and dE_bat/ds (J/m) with the tight component chain."""
        s = self.surfaces[gear - 1]
        q = 1.0 / v
        force = np.asarray(force, dtype=float)
        eta = self.trans.eta
        gearbox = np.minimum(eta * force, force / eta)
        kinetic = (gearbox - self.vehicle.aero_coefficient * v**2
                   - self.vehicle.rolling_force - np.asarray(brake, dtype=float))
        ac = force + s.per_distance(self.powertrain, v, q, force)
        eta_inv = self.powertrain.inverter_efficiency
        dc = np.where(ac >= 0, ac / eta_inv, ac * eta_inv)
        drain = dc + self.powertrain.battery_loss_coefficient * dc**2
        battery = -(drain + self.vehicle.aux_power * q)
        return kinetic, battery


def hamiltonian_value(lethargy: float, costates: Tuple[float, float],
                      kinetic_rate, battery_rate):
    lam_kin, lam_bat = costates
    return lethargy + lam_kin * kinetic_rate + lam_bat * battery_rate


def hamiltonian(
    model: HamiltonianModel,
    state: StepState,
    costates: Tuple[float, float],
    gear: int,
    inputs: StepInputs,
) -> float:
    """H at one step for a gear and inputs; +inf when the gear overspeeds the EM."""
    v = model.speed(state.kinetic_energy)
    if not model.feasible(gear, v):
        return float("inf")
    kin, bat = model.rates(gear, v, inputs.motor_force, inputs.brake_force)
    return float(hamiltonian_value(1.0 / v, costates, kin, bat))


def _real_roots(poly: Polynomial) -> np.ndarray:
    poly = poly.trim(tol=0.0)
    if poly.degree() < 1:
        return np.zeros(0)
    roots = poly.roots()
    return roots.real[np.abs(roots.imag) <= 1e-9 * (1.0 + np.abs(roots.real))]


def _candidate_forces(model: HamiltonianModel, gear: int, v: float,
                      costates: Tuple[float, float]) -> np.ndarray:
    # Piece endpoints plus stationary points of H on every smooth piece.
    low, high = model.force_bounds(gear, v)
    s = model.surfaces[gear - 1]
    q = 1.0 / v
    pt = model.powertrain
    eta = model.trans.eta
    eta_inv = pt.inverter_efficiency
    alpha = (pt.em_loss_a0 + s.lethargy) * q + s.constant + s.velocity * v
    beta = s.quadratic / v
    ac = Polynomial([alpha, 1.0, beta])

    breaks = [low, high]
    breaks.extend(_real_roots(ac))
    if low < 0.0 < high:
        breaks.append(0.0)
    points = np.unique(np.clip(np.asarray(breaks, dtype=float), low, high))

    lam_kin, lam_bat = costates
    candidates = [points]
    for a, b in zip(points[:-1], points[1:]):
        if b - a <= 0:
            continue
        mid = 0.5 * (a + b)
        d = 1.0 / eta_inv if ac(mid) >= 0 else eta_inv
        gearbox_slope = eta if mid >= 0 else 1.0 / eta
        drain = d * ac + pt.battery_loss_coefficient * d**2 * ac**2
        h = Polynomial([0.0, lam_kin * gearbox_slope]) - lam_bat * drain
        roots = _real_roots(h.deriv())
        candidates.append(roots[(roots > a) & (roots < b)])
    return np.concatenate(candidates)


def _split_brakes(model: HamiltonianModel, total: float) -> Tuple[float, float]:
    front_max = model.vehicle.brake_force_max_front
    rear_max = model.vehicle.brake_force_max_rear
    share = front_max / (front_max + rear_max)
    return total * share, total * (1.0 - share)


def minimize_step(
    model: HamiltonianModel,
    step: int,
    state: StepState,
    costates: Tuple[float, float],
    previous_gear: Optional[int] = None,
) -> HamiltonianSample:
    """Best gear and inputs at one step; ties go to previous_gear, then the lowest index."""
    v = model.speed(state.kinetic_energy)
    q = 1.0 / v
    lam_kin = costates[0]
    # H is linear in the aggregated brake force with slope -lambda_kin.
    brake = model.vehicle.brake_force_max_front + model.vehicle.brake_force_max_rear
    brake = brake if lam_kin > 0 else 0.0

    values: List[float] = []
    forces: List[float] = []
    for gear in range(1, model.n_gear + 1):
        if not model.feasible(gear, v):
            values.append(float("inf"))
            forces.append(0.0)
            continue
        cand = _candidate_forces(model, gear, v, costates)
        kin, bat = model.rates(gear, v, cand, brake)
        h = hamiltonian_value(q, costates, kin, bat)
        best = int(np.argmin(h))
        values.append(float(h[best]))
        forces.append(float(cand[best]))

    finite = [h for h in values if np.isfinite(h)]
    if not finite:
        raise StepInfeasibleError(step)
    h_min = min(finite)
    ties = [g for g, h in enumerate(values, start=1) if h <= h_min + TIE_TOLERANCE]
    gear = previous_gear if previous_gear in ties else ties[0]
    front, rear = _split_brakes(model, brake)
    return HamiltonianSample(
        step=step,
        values=tuple(values),
        gear=gear,
        inputs=StepInputs(motor_force=forces[gear - 1], brake_front=front, brake_rear=rear),
    )


@dataclass(frozen=True, eq=False)
class GopResult:
    gears: GearTrajectory
    motor_force: np.ndarray
    brake_front: np.ndarray
    brake_rear: np.ndarray
    samples: Tuple[HamiltonianSample, ...]
    # H(previous gear) - H(chosen gear); inf where the previous gear is infeasible.
    improvement: np.ndarray
    # Steps where no gear was feasible and the previous gear was kept (non-strict mode).
    fallback_steps: Tuple[int, ...] = ()


def solve_gop(
    solution: ContinuousSolution,
    costates: "DampedCostates",
    model: HamiltonianModel,
    previous: Optional[GearTrajectory] = None,
    strict: bool = True,
) -> GopResult:
    """Minimize the Hamiltonian independently at every step of a solved lap."""
    n = solution.n_steps
    if costates.kinetic.size != n or costates.battery.size != n:
        raise ValidationError(f"costates have {costates.kinetic.size} steps, lap has {n}")
    if previous is None and solution.active_gear is not None:
        previous = GearTrajectory(solution.active_gear)
    prev = previous.active_gear if previous is not None else None

    kinetic = solution.kinetic_at_steps
    samples: List[HamiltonianSample] = []
    fallback: List[int] = []
    for i in range(n):
        state = StepState(float(kinetic[i]), float(solution.battery_energy[i]))
        lam = (float(costates.kinetic[i]), float(costates.battery[i]))
        incumbent = int(prev[i]) if prev is not None else None
        try:
            samples.append(minimize_step(model, i, state, lam, incumbent))
        except StepInfeasibleError:
            if strict or incumbent is None:
                raise
            fallback.append(i)
            samples.append(HamiltonianSample(
                step=i,
                values=tuple(float("inf") for _ in range(model.n_gear)),
                gear=incumbent,
                inputs=StepInputs(float(solution.motor_force[i])),
            ))

    gears = np.array([s.gear for s in samples])
    improvement = np.zeros(n)
    if prev is not None:
        for i, s in enumerate(samples):
            improvement[i] = s.values[int(prev[i]) - 1] - s.value if i not in fallback else 0.0
    return GopResult(
        gears=GearTrajectory(gears),
        motor_force=np.array([s.inputs.motor_force for s in samples]),
        brake_front=np.array([s.inputs.brake_front for s in samples]),
        brake_rear=np.array([s.inputs.brake_rear for s in samples]),
        samples=tuple(samples),
        improvement=improvement,
        fallback_steps=tuple(fallback),
    )


def hamiltonian_table(samples: Sequence[HamiltonianSample]) -> np.ndarray:
    # (n_steps, n_gear) matrix of per-gear values, for the debugging dump.
    return np.array([s.values for s in samples])
