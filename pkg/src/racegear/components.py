# Surrogate component models: EM loss surfaces per ratio, the CVT loss envelope,
# and the power-chain audit that reconstructs battery-to-wheel power flows from a solved lap.
#
# Loss surfaces are per-distance (N = J/m) so the transcription stays affine in its states.
# The idle term a0*q is kept out of the surface because it multiplies lethargy, not a constant.
#
# A surface is written over a lifted speed s = v*(g/g_ref)^2 with s/v in [1/spread, spread]:
#
#   loss/m = constant + lethargy*q + velocity*s + quadratic*F^2/s
#
# A fixed gear has spread 1 (s = v). For the CVT the solver picks s, which is the ratio choice
# relaxed into a rotated cone: the spin and torque losses are exact, the friction term a1*g is
# bounded from below by its value at the lowest ratio.

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from racegear.errors import ValidationError
from racegear.models import (
    ContinuousSolution,
    PowerBreakdown,
    PowertrainSpec,
    TransmissionKind,
    TransmissionSpec,
    VehicleSpec,
)

CVT_RATIO_SAMPLES = 64
ENVELOPE_TOLERANCE = 0.02
_ENVELOPE_SPEEDS = 24
_ENVELOPE_FORCES = 25
_ENVELOPE_MIN_SPEED = 5.0


@dataclass(frozen=True)
class LossSurface:
    """EM loss per metre without the idle term, over the lifted speed s (see module header).

    F is the motor force at the wheels. `torque_force_max` and `speed_max` are the wheel-force
    and road-speed limits the EM imposes through this ratio (or ratio range).
    """

    constant: float
    velocity: float
    quadratic: float
    torque_force_max: float
    speed_max: float
    ratio: float
    lethargy: float = 0.0
    spread: float = 1.0

    def __post_init__(self) -> None:
        if not self.spread >= 1.0:
            raise ValidationError("a loss surface spread must be >= 1")

    def lifted_speed(self, v, force) -> np.ndarray:
        """The s in [v/spread, v*spread] that minimizes velocity*s + quadratic*F^2/s."""
        v = np.asarray(v, dtype=float)
        if self.spread == 1.0:
            return v
        force = np.abs(np.asarray(force, dtype=float))
        if self.velocity > 0:
            best = force * np.sqrt(self.quadratic / self.velocity)
        else:
            best = np.full(np.broadcast(v, force).shape, np.inf)
        return np.clip(best, v / self.spread, v * self.spread)

    def per_distance(self, powertrain: PowertrainSpec, v, q, force):
        force = np.asarray(force, dtype=float)
        q = np.asarray(q, dtype=float)
        s = self.lifted_speed(v, force)
        return (
            (powertrain.em_loss_a0 + self.lethargy) * q
            + self.constant
            + self.velocity * s
            + self.quadratic * force**2 / s
        )


@dataclass(frozen=True)
class EnvelopeFit:
    surface: LossSurface
    # Largest relative shortfall of the surrogate below the sampled envelope (idle loss included).
    max_deviation: float
    samples: int


def gear_loss_surface(powertrain: PowertrainSpec, vehicle: VehicleSpec, ratio: float) -> LossSurface:
    # w = g*v and tau = F/g with g = ratio/r_w; dividing a0 + a1 w + a2 w^2 + a3 tau^2 by v.
    g = ratio / vehicle.wheel_radius
    return LossSurface(
        constant=powertrain.em_loss_a1 * g,
        velocity=powertrain.em_loss_a2 * g**2,
        quadratic=powertrain.em_loss_a3 / g**2,
        torque_force_max=powertrain.em_torque_max * g,
        speed_max=powertrain.em_speed_max / g,
        ratio=float(ratio),
    )


def em_loss_power(powertrain: PowertrainSpec, vehicle: VehicleSpec, ratio, v, force) -> np.ndarray:
    """Physical EM loss (W) at the operating point given by road speed and wheel force."""
    ratio = np.asarray(ratio, dtype=float)
    omega = ratio * np.asarray(v, dtype=float) / vehicle.wheel_radius
    torque = np.asarray(force, dtype=float) * vehicle.wheel_radius / ratio
    return (
        powertrain.em_loss_a0
        + powertrain.em_loss_a1 * omega
        + powertrain.em_loss_a2 * omega**2
        + powertrain.em_loss_a3 * torque**2
    )


def cvt_ratio_samples(trans: TransmissionSpec) -> np.ndarray:
    return np.linspace(float(trans.ratio_min), float(trans.ratio_max), CVT_RATIO_SAMPLES)  # type: ignore[arg-type]


def _sampled_losses(powertrain: PowertrainSpec, vehicle: VehicleSpec, ratios: np.ndarray,
                    v: np.ndarray, force: np.ndarray) -> np.ndarray:
    # Per-distance gamma-dependent loss for every (sample point, ratio); inf where infeasible.
    g = ratios[None, :] / vehicle.wheel_radius
    v = v[:, None]
    force = force[:, None]
    loss = (
        powertrain.em_loss_a1 * g
        + powertrain.em_loss_a2 * g**2 * v
        + powertrain.em_loss_a3 * force**2 / (g**2 * v)
    )
    feasible = (g * v <= powertrain.em_speed_max * (1 + 1e-12)) & (
        np.abs(force) <= powertrain.em_torque_max * g * (1 + 1e-12)
    )
    return np.where(feasible, loss, np.inf)


def envelope_grid(powertrain: PowertrainSpec, vehicle: VehicleSpec,
                  trans: TransmissionSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(speed, force, envelope) samples: the per-distance EM loss, idle term included,
    minimized over the sampled CVT ratios at every feasible grid point."""
    g_min = float(trans.ratio_min) / vehicle.wheel_radius  # type: ignore[arg-type]
    g_max = float(trans.ratio_max) / vehicle.wheel_radius  # type: ignore[arg-type]
    force_max = powertrain.em_torque_max * g_max
    speed_max = min(vehicle.speed_cap, powertrain.em_speed_max / g_min)

    speeds = np.linspace(_ENVELOPE_MIN_SPEED, speed_max, _ENVELOPE_SPEEDS)
    forces = np.linspace(-force_max, force_max, _ENVELOPE_FORCES)
    vv, ff = (a.ravel() for a in np.meshgrid(speeds, forces, indexing="ij"))
    keep = np.abs(ff) * vv <= powertrain.em_power_max
    vv, ff = vv[keep], ff[keep]

    envelope = _sampled_losses(powertrain, vehicle, cvt_ratio_samples(trans), vv, ff).min(axis=1)
    ok = np.isfinite(envelope)
    vv, ff = vv[ok], ff[ok]
    return vv, ff, envelope[ok] + powertrain.em_loss_a0 / vv


def cvt_loss_surface(
    powertrain: PowertrainSpec,
    vehicle: VehicleSpec,
    trans: TransmissionSpec,
) -> EnvelopeFit:
    """Convex under-approximation of the per-distance EM loss minimized over the CVT ratio range.

    Raises ValidationError when the surrogate falls more than ENVELOPE_TOLERANCE below any
    sampled envelope point.
    """
    ratio_min = float(trans.ratio_min)  # type: ignore[arg-type]
    ratio_max = float(trans.ratio_max)  # type: ignore[arg-type]
    if ratio_max - ratio_min <= 1e-12 * ratio_max:
        return EnvelopeFit(gear_loss_surface(powertrain, vehicle, ratio_min), 0.0, 0)

    g_min = ratio_min / vehicle.wheel_radius
    g_max = ratio_max / vehicle.wheel_radius
    g_ref2 = g_min * g_max
    surface = LossSurface(
        constant=powertrain.em_loss_a1 * g_min,
        velocity=powertrain.em_loss_a2 * g_ref2,
        quadratic=powertrain.em_loss_a3 / g_ref2,
        torque_force_max=powertrain.em_torque_max * g_max,
        speed_max=powertrain.em_speed_max / g_min,
        ratio=ratio_max,
        spread=g_max / g_min,
    )

    vv, ff, envelope = envelope_grid(powertrain, vehicle, trans)
    if envelope.size == 0:
        return EnvelopeFit(surface, 0.0, 0)
    fit = surface.per_distance(powertrain, vv, 1.0 / vv, ff)
    deviation = max(float(np.max((envelope - fit) / envelope)), 0.0)
    if deviation > ENVELOPE_TOLERANCE:
        raise ValidationError(
            f"CVT loss surrogate sits {deviation:.1%} below the sampled envelope for ratios "
            f"[{ratio_min:g}, {ratio_max:g}] (limit {ENVELOPE_TOLERANCE:.0%}); "
            "lower powertrain.em_loss_a1 or narrow the ratio range"
        )
    return EnvelopeFit(surface, deviation, int(envelope.size))


def cvt_operating_ratio(powertrain: PowertrainSpec, vehicle: VehicleSpec, trans: TransmissionSpec,
                        v: np.ndarray, force: np.ndarray) -> np.ndarray:
    """Sampled ratio attaining the loss envelope at each operating point (nearest bound if none)."""
    ratios = cvt_ratio_samples(trans)
    v = np.asarray(v, dtype=float)
    force = np.asarray(force, dtype=float)
    losses = _sampled_losses(powertrain, vehicle, ratios, v, force)
    best = ratios[np.argmin(losses, axis=1)]
    infeasible = ~np.isfinite(losses).any(axis=1)
    if np.any(infeasible):
        # Overspeed wants the lowest ratio, overload the highest.
        overspeed = ratios[0] * v / vehicle.wheel_radius > powertrain.em_speed_max
        best[infeasible] = np.where(overspeed[infeasible], ratios[0], ratios[-1])
    return best


def gearbox_force(trans: TransmissionSpec, motor_force) -> np.ndarray:
    # Tight gearbox model: efficiency applied in the direction of power flow.
    f = np.asarray(motor_force, dtype=float)
    return np.minimum(trans.eta * f, f / trans.eta)


@dataclass(frozen=True, eq=False)
class PowerAudit:
    breakdown: PowerBreakdown
    # Battery power implied by the solved battery trajectory (W).
    modeled_battery: np.ndarray
    # modeled - reconstructed; positive where the loss relaxation is loose.
    slack: np.ndarray
    relative_slack: np.ndarray

    @property
    def max_relative_slack(self) -> float:
        return float(np.max(np.abs(self.relative_slack)))


def audit_powers(
    solution: ContinuousSolution,
    vehicle: VehicleSpec,
    powertrain: PowertrainSpec,
    trans: TransmissionSpec,
) -> PowerAudit:
    """Rebuild P_gb, P_m, P_ac, P_dc and P_b step by step from speeds, forces and ratios."""
    v = solution.velocity
    force = solution.motor_force
    ratio = solution.gear_ratio
    if trans.kind is TransmissionKind.cvt and solution.cvt_ratio is not None:
        ratio = solution.cvt_ratio

    mechanical = force * v
    gearbox_out = gearbox_force(trans, force) * v
    ac = mechanical + em_loss_power(powertrain, vehicle, ratio, v, force)
    eta_inv = powertrain.inverter_efficiency
    dc_link = np.where(ac >= 0, ac / eta_inv, ac * eta_inv)
    dc_force = dc_link / v
    battery = dc_link + powertrain.battery_loss_coefficient * dc_force**2 * v + vehicle.aux_power

    drain = -np.diff(solution.battery_energy) / solution.step_length
    modeled = drain * v
    slack = modeled - battery
    scale = np.maximum.reduce([np.abs(battery), np.full_like(battery, vehicle.aux_power),
                               np.ones_like(battery)])
    return PowerAudit(
        breakdown=PowerBreakdown(
            battery=battery, dc_link=dc_link, ac=ac, mechanical=mechanical, gearbox_out=gearbox_out
        ),
        modeled_battery=modeled,
        slack=slack,
        relative_slack=slack / scale,
    )
