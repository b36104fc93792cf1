# Shared data models for racegear.
# Lives in its own module so track, transcription, gop, driver and exact can share
# the same immutable types without importing each other.
#
# All per-step arrays are stored read-only; every type is safe to share across threads.

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from racegear.errors import ValidationError

# Weight added by each extra MGT gear and by the CVT, relative to the FGT car.
MGT_MASS_PENALTY_PER_GEAR = 0.0037
CVT_MASS_PENALTY = 0.026
MGT_MAX_GEARS = 4


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


class TransmissionKind(str, Enum):
    fgt = "fgt"
    mgt = "mgt"
    cvt = "cvt"


DEFAULT_EFFICIENCY = {
    TransmissionKind.fgt: 0.985,
    TransmissionKind.mgt: 0.975,
    TransmissionKind.cvt: 0.92,
}


@dataclass(frozen=True, eq=False)
class TrackProfile:
    """Uniform spatial grid: one curvature sample (1/m, signed) at the start of each step."""

    step_length: float
    curvature: np.ndarray
    name: str = "track"

    def __post_init__(self) -> None:
        object.__setattr__(self, "curvature", _frozen(self.curvature))
        if not self.step_length > 0:
            raise ValidationError(f"step_length must be positive, got {self.step_length}")
        if self.curvature.ndim != 1 or self.curvature.size < 2:
            raise ValidationError("a track needs at least 2 steps")
        if not np.all(np.isfinite(self.curvature)):
            raise ValidationError("curvature must be finite at every step")

    @property
    def n_steps(self) -> int:
        return int(self.curvature.size)

    @property
    def total_length(self) -> float:
        return self.n_steps * self.step_length

    @property
    def positions(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.step_length

    def section(self, start: int, n_steps: int, name: Optional[str] = None) -> "TrackProfile":
        if start < 0 or n_steps < 2 or start + n_steps > self.n_steps:
            raise ValidationError(f"section [{start}, {start + n_steps}) outside the track")
        return TrackProfile(
            step_length=self.step_length,
            curvature=self.curvature[start:start + n_steps],
            name=name or f"{self.name}[{start}:{start + n_steps}]",
        )


@dataclass(frozen=True)
class VehicleSpec:
    base_mass: float = 1100.0
    rotational_mass_factor: float = 1.05
    aero_coefficient: float = 0.8
    rolling_force: float = 130.0
    wheel_radius: float = 0.33
    lateral_accel_max: float = 25.0
    speed_cap: float = 85.0
    brake_force_max_front: float = 14000.0
    brake_force_max_rear: float = 9000.0
    traction_force_max: float = 9000.0
    aux_power: float = 2000.0

    def __post_init__(self) -> None:
        for name in (
            "base_mass", "aero_coefficient", "wheel_radius", "lateral_accel_max",
            "speed_cap", "brake_force_max_front", "brake_force_max_rear", "traction_force_max",
        ):
            if not getattr(self, name) > 0:
                raise ValidationError(f"vehicle.{name} must be positive")
        if not self.rotational_mass_factor >= 1.0:
            raise ValidationError("vehicle.rotational_mass_factor must be >= 1")
        if self.rolling_force < 0 or self.aux_power < 0:
            raise ValidationError("vehicle.rolling_force and vehicle.aux_power must be >= 0")


@dataclass(frozen=True)
class PowertrainSpec:
    # EM losses: a0 + a1*w + a2*w^2 + a3*tau^2 (W), w in rad/s, tau in N*m.
    em_loss_a0: float = 500.0
    em_loss_a1: float = 0.05
    em_loss_a2: float = 0.002
    em_loss_a3: float = 0.05
    em_torque_max: float = 450.0
    em_speed_max: float = 2000.0
    em_power_max: float = 300e3
    inverter_efficiency: float = 0.97
    battery_capacity: float = 25e6
    battery_consumption_limit: float = 6e6
    # Battery loss per metre: coefficient * F_dc^2, F_dc in N.
    battery_loss_coefficient: float = 2e-6

    def __post_init__(self) -> None:
        for name in ("em_loss_a0", "em_loss_a1", "em_loss_a2", "em_loss_a3",
                     "battery_loss_coefficient"):
            if getattr(self, name) < 0:
                raise ValidationError(f"powertrain.{name} must be >= 0")
        for name in ("em_torque_max", "em_speed_max", "em_power_max"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"powertrain.{name} must be positive")
        if not 0 < self.inverter_efficiency <= 1:
            raise ValidationError("powertrain.inverter_efficiency must lie in (0, 1]")
        if not 0 < self.battery_consumption_limit <= self.battery_capacity:
            raise ValidationError(
                "powertrain.battery_consumption_limit must lie in (0, battery_capacity]"
            )

    def best_efficiency_speed(self) -> float:
        # Minimizes loss per unit of output power at half the torque rating:
        # (a0 + a3*tau^2)/w + a1 + a2*w is smallest at w = sqrt((a0 + a3*tau^2)/a2).
        if self.em_loss_a2 <= 0:
            return self.em_speed_max
        torque = 0.5 * self.em_torque_max
        speed = np.sqrt((self.em_loss_a0 + self.em_loss_a3 * torque**2) / self.em_loss_a2)
        return float(min(speed, self.em_speed_max))


@dataclass(frozen=True)
class TransmissionSpec:
    kind: TransmissionKind
    ratios: Tuple[float, ...] = ()
    ratio_min: Optional[float] = None
    ratio_max: Optional[float] = None
    efficiency: Optional[float] = None
    mass_penalty_per_gear: float = MGT_MASS_PENALTY_PER_GEAR
    cvt_mass_penalty: float = CVT_MASS_PENALTY
    # One (low, high) pair per designed ratio: each gear for FGT/MGT, ratio_max for CVT.
    design_bounds: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", TransmissionKind(self.kind))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        object.__setattr__(
            self, "design_bounds", tuple((float(lo), float(hi)) for lo, hi in self.design_bounds)
        )
        if self.efficiency is None:
            object.__setattr__(self, "efficiency", DEFAULT_EFFICIENCY[self.kind])
        if not 0 < float(self.efficiency) <= 1:  # type: ignore[arg-type]
            raise ValidationError("transmission.efficiency must lie in (0, 1]")
        if self.mass_penalty_per_gear < 0 or self.cvt_mass_penalty < 0:
            raise ValidationError("transmission mass penalties must be >= 0")

        if self.kind is TransmissionKind.fgt:
            if len(self.ratios) != 1:
                raise ValidationError("an FGT has exactly one ratio")
        elif self.kind is TransmissionKind.mgt:
            if not 1 <= len(self.ratios) <= MGT_MAX_GEARS:
                raise ValidationError(f"an MGT has 1 to {MGT_MAX_GEARS} ratios")
        else:
            if self.ratios:
                raise ValidationError("a CVT takes ratio_min/ratio_max, not a ratio list")
            if self.ratio_min is None or self.ratio_max is None:
                raise ValidationError("a CVT needs ratio_min and ratio_max")
            if not 0 < self.ratio_min <= self.ratio_max:
                raise ValidationError("CVT ratios need 0 < ratio_min <= ratio_max")
        if any(r <= 0 for r in self.ratios):
            raise ValidationError("gear ratios must be positive")
        if any(a <= b for a, b in zip(self.ratios, self.ratios[1:])):
            raise ValidationError("gear ratios must be strictly decreasing")

    @property
    def n_gear(self) -> int:
        return len(self.ratios)

    @property
    def eta(self) -> float:
        return float(self.efficiency)  # type: ignore[arg-type]

    def design_vector(self) -> Tuple[float, ...]:
        if self.kind is TransmissionKind.cvt:
            return (float(self.ratio_max),)  # type: ignore[arg-type]
        return self.ratios

    def with_design(self, values: Sequence[float]) -> "TransmissionSpec":
        if self.kind is TransmissionKind.cvt:
            (gamma_max,) = values
            return replace(self, ratio_max=float(gamma_max))
        return replace(self, ratios=tuple(float(v) for v in values))


def effective_mass(vehicle: VehicleSpec, trans: TransmissionSpec) -> float:
    """Translational mass of the car carrying this transmission (before rotational inertia)."""
    m0 = vehicle.base_mass
    if trans.kind is TransmissionKind.mgt:
        return m0 * (1.0 + trans.mass_penalty_per_gear * (trans.n_gear - 1))
    if trans.kind is TransmissionKind.cvt:
        return m0 * (1.0 + trans.cvt_mass_penalty)
    return m0


def dynamic_mass(vehicle: VehicleSpec, trans: TransmissionSpec) -> float:
    # m_eff used in E_kin = m_eff * v^2 / 2.
    return effective_mass(vehicle, trans) * vehicle.rotational_mass_factor


@dataclass(frozen=True, eq=False)
class GearTrajectory:
    """Active gear (1-based) per step: the one-hot gear selection written as indices."""

    active_gear: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.active_gear)
        if arr.ndim != 1 or arr.size == 0:
            raise ValidationError("a gear trajectory is a non-empty 1-D sequence")
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValidationError("gear indices must be integers")
        object.__setattr__(self, "active_gear", _frozen(arr, dtype=np.int64))
        if self.active_gear.min() < 1:
            raise ValidationError("gear indices start at 1")

    @classmethod
    def constant(cls, n_steps: int, gear: int = 1) -> "GearTrajectory":
        return cls(np.full(n_steps, gear, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.active_gear.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GearTrajectory):
            return NotImplemented
        return bool(np.array_equal(self.active_gear, other.active_gear))

    def __hash__(self) -> int:
        return hash(self.active_gear.tobytes())

    def changes_from(self, other: "GearTrajectory") -> int:
        return int(np.count_nonzero(self.active_gear != other.active_gear))

    def one_hot(self, n_gear: int) -> np.ndarray:
        out = np.zeros((len(self), n_gear))
        out[np.arange(len(self)), self.active_gear - 1] = 1.0
        return out

    def check(self, n_steps: int, n_gear: int) -> None:
        if len(self) != n_steps:
            raise ValidationError(f"gear trajectory has {len(self)} steps, grid has {n_steps}")
        if self.active_gear.max() > n_gear:
            raise ValidationError(f"gear index {self.active_gear.max()} exceeds n_gear={n_gear}")

    def ratios(self, trans: TransmissionSpec) -> np.ndarray:
        return np.asarray(trans.ratios)[self.active_gear - 1]


@dataclass(frozen=True, eq=False)
class PowerBreakdown:
    battery: np.ndarray
    dc_link: np.ndarray
    ac: np.ndarray
    mechanical: np.ndarray
    gearbox_out: np.ndarray

    def __post_init__(self) -> None:
        for name in ("battery", "dc_link", "ac", "mechanical", "gearbox_out"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


_STEP_FIELDS = (
    "velocity", "lethargy", "motor_force", "brake_front", "brake_rear", "gearbox_force",
    "gear_ratio", "costate_kinetic", "costate_battery",
)


@dataclass(frozen=True, eq=False)
class ContinuousSolution:
    """Solved COP trajectories in SI units.

    `kinetic_energy` holds one node per step on a periodic lap (the node after the
    last step is node 0) and N+1 nodes on an open section. `battery_energy` always
    holds N+1 nodes. Inputs and costates hold one value per step; costates are lap-time
    sensitivities to energy injected at the end of the step (s/J).
    """

    step_length: float
    kinetic_energy: np.ndarray
    battery_energy: np.ndarray
    velocity: np.ndarray
    lethargy: np.ndarray
    motor_force: np.ndarray
    brake_front: np.ndarray
    brake_rear: np.ndarray
    gearbox_force: np.ndarray
    gear_ratio: np.ndarray
    costate_kinetic: np.ndarray
    costate_battery: np.ndarray
    lap_time: float
    effective_mass: float
    design_ratios: Tuple[float, ...] = ()
    cvt_ratio: Optional[np.ndarray] = None
    active_gear: Optional[np.ndarray] = None
    periodic: bool = True
    status: str = "optimal"
    solver_iterations: int = 0
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    duality_gap: float = 0.0
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = np.asarray(self.velocity).size
        for name in _STEP_FIELDS:
            arr = _frozen(getattr(self, name))
            if arr.size != n:
                raise ValidationError(f"{name} has {arr.size} entries, expected {n}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "kinetic_energy", _frozen(self.kinetic_energy))
        object.__setattr__(self, "battery_energy", _frozen(self.battery_energy))
        expected = n if self.periodic else n + 1
        if self.kinetic_energy.size != expected:
            raise ValidationError(f"kinetic_energy needs {expected} nodes")
        if self.battery_energy.size != n + 1:
            raise ValidationError("battery_energy needs n_steps + 1 nodes")
        if self.cvt_ratio is not None:
            object.__setattr__(self, "cvt_ratio", _frozen(self.cvt_ratio))
        if self.active_gear is not None:
            object.__setattr__(self, "active_gear", _frozen(self.active_gear, dtype=np.int64))
        object.__setattr__(self, "design_ratios", tuple(float(r) for r in self.design_ratios))

    @property
    def n_steps(self) -> int:
        return int(self.velocity.size)

    @property
    def positions(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.step_length

    @property
    def kinetic_at_steps(self) -> np.ndarray:
        return self.kinetic_energy[: self.n_steps]

    @property
    def kinetic_next(self) -> np.ndarray:
        # Node reached at the end of each step.
        if self.periodic:
            return np.roll(self.kinetic_energy, -1)
        return self.kinetic_energy[1:]

    @property
    def final_battery_energy(self) -> float:
        return float(self.battery_energy[-1])

    @property
    def energy_used(self) -> float:
        return float(self.battery_energy[0] - self.battery_energy[-1])

    @property
    def brake_force(self) -> np.ndarray:
        return self.brake_front + self.brake_rear


@dataclass(frozen=True)
class AlgorithmSettings:
    """Knobs of the iterative gearshift loop, the design search and the exact baseline."""

    beta: float = 0.5
    max_outer_iterations: int = 50
    lap_time_tolerance: float = 1e-6
    max_beta_halvings: int = 3
    design_tolerance: float = 1e-4
    design_ratio_tolerance: float = 1e-3
    max_design_passes: int = 8
    max_exact_steps: int = 24
    node_budget: int = 1_000_000
    bnb_gap_tolerance: float = 1e-7
    exhaustive_budget: int = 100_000
    section_entry_speed: float = 55.0

    def __post_init__(self) -> None:
        if not 0 < self.beta <= 1:
            raise ValidationError("algorithm.beta must lie in (0, 1]")
        for name in ("max_outer_iterations", "max_design_passes", "max_exact_steps",
                     "node_budget", "exhaustive_budget"):
            if getattr(self, name) < 1:
                raise ValidationError(f"algorithm.{name} must be >= 1")
        if self.max_beta_halvings < 0:
            raise ValidationError("algorithm.max_beta_halvings must be >= 0")
        for name in ("lap_time_tolerance", "design_tolerance", "design_ratio_tolerance",
                     "bnb_gap_tolerance", "section_entry_speed"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"algorithm.{name} must be positive")
