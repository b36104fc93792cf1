# Space-domain convex transcription of the lap-time problem.
#
# One builder serves three callers:
#   build_cop        MGT/FGT with the active gear fixed at every step
#   build_fgt_cvt    FGT, or CVT with the EM loss replaced by its convex envelope
#   build_relaxation branch-and-bound node: undecided steps carry simplex weights over gears
#
# Every step i owns one "pair" (i, j) per allowed gear j. A pair holds gear j's share of the
# step: weight w, speed, lethargy, motor force and losses, each scaled by w (perspective form).
# With a single allowed gear w = 1 and the pair is exactly the fixed-gear model.
#
# Variables are scaled: speed by V_REF, forces by F_REF, energies by E_REF = m_eff*V_REF^2/2,
# lethargy by 1/V_REF. The objective is the lap time in seconds.
#
# Census per pair (fixed ratio): 24 variables, 15 rows
#   rotated cones (E_share, h, v), (q, v', r), (z, s, F), (u, h', F_dc)        12 vars
#   w, shifted gearbox force                                                     2 vars
#   slacks: torque x2, power x2, overspeed, inverter x2, gearbox x3             10 vars
#   rows: h = w/2, h' = w/2, r = sqrt(2) w, v' = v, s = v, plus one per slack
# Census per step: 8 variables, 7 rows
#   kinetic node, battery node, front brake, rear brake                          4 vars
#   slacks: kinetic cap, brake caps x2, battery loss slack                       4 vars
#   rows: sum w = 1, kinetic node = sum of shares, cap, brakes x2, kinetic dynamics, battery dynamics
# A CVT surface (spread > 1) replaces s = v by v/spread <= s <= v*spread: 2 more variables and
# 1 more row per pair.
# Fixed rows: initial battery, battery budget; sections add the entry row and the exit node
# with its cap (2 variables, 2 rows). A fixed-gear COP is therefore 32 variables and 22 rows
# per step plus 2 variables and 2 rows (periodic lap).

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from racegear import conic
from racegear.components import (
    LossSurface,
    cvt_loss_surface,
    cvt_operating_ratio,
    gear_loss_surface,
)
from racegear.errors import ExtractionError, ValidationError
from racegear.models import (
    ContinuousSolution,
    GearTrajectory,
    PowertrainSpec,
    TrackProfile,
    TransmissionKind,
    TransmissionSpec,
    VehicleSpec,
    dynamic_mass,
)
from racegear.track import max_kinetic_energy

V_REF = 50.0
F_REF = 1.0e4
_SQRT2 = float(np.sqrt(2.0))


@dataclass(frozen=True)
class SectionBoundary:
    """Open-section boundary: fixed entry speed, free exit, fixed battery allotment."""

    entry_speed: float
    battery_allotment: float

    def __post_init__(self) -> None:
        if not self.entry_speed > 0:
            raise ValidationError("section entry speed must be positive")
        if not self.battery_allotment > 0:
            raise ValidationError("section battery allotment must be positive")

    @classmethod
    def proportional(cls, section: TrackProfile, lap_length: float, powertrain: PowertrainSpec,
                     entry_speed: float) -> "SectionBoundary":
        share = section.total_length / lap_length
        return cls(entry_speed, powertrain.battery_consumption_limit * share)


@dataclass(frozen=True, eq=False)
class VariableLayout:
    n_steps: int
    n_gear: int
    step_length: float
    periodic: bool
    effective_mass: float
    energy_ref: float
    ratios: np.ndarray
    pair_step: np.ndarray
    pair_gear: np.ndarray
    columns: Dict[str, np.ndarray]
    rows: Dict[str, np.ndarray]
    gearbox_floor: np.ndarray
    trans: TransmissionSpec
    vehicle: VehicleSpec
    powertrain: PowertrainSpec
    extras: dict = field(default_factory=dict)

    @property
    def single_gear_per_step(self) -> bool:
        return self.pair_step.size == self.n_steps

    def census(self, problem: conic.ConicProblem) -> Dict[str, int]:
        return {
            "steps": self.n_steps,
            "pairs": int(self.pair_step.size),
            "variables": problem.variable_count,
            "constraints": problem.constraint_count,
        }


class _Assembler:
    """Collects cones, sparse triplets and right-hand sides; variables are allocated in order."""

    def __init__(self) -> None:
        self.cones: List[conic.Cone] = []
        self.size = 0
        self.n_rows = 0
        self._rows: List[np.ndarray] = []
        self._cols: List[np.ndarray] = []
        self._vals: List[np.ndarray] = []
        self._rhs: List[np.ndarray] = []
        self._cost: List[Tuple[np.ndarray, np.ndarray]] = []

    def nonnegative(self, count: int) -> np.ndarray:
        idx = np.arange(self.size, self.size + count)
        if count:
            if self.cones and self.cones[-1].kind is conic.ConeKind.nonnegative:
                last = self.cones.pop()
                self.cones.append(conic.Cone(conic.ConeKind.nonnegative, last.dim + count))
            else:
                self.cones.append(conic.Cone(conic.ConeKind.nonnegative, count))
        self.size += count
        return idx

    def rotated(self, count: int) -> np.ndarray:
        idx = self.size + np.arange(3 * count).reshape(count, 3)
        self.cones.extend(conic.Cone(conic.ConeKind.rotated_second_order, 3) for _ in range(count))
        self.size += 3 * count
        return idx

    def new_rows(self, rhs) -> np.ndarray:
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        idx = np.arange(self.n_rows, self.n_rows + rhs.size)
        self._rhs.append(rhs)
        self.n_rows += rhs.size
        return idx

    def add(self, rows: np.ndarray, cols: np.ndarray, coefs) -> None:
        rows = np.asarray(rows)
        coefs = np.broadcast_to(np.asarray(coefs, dtype=float), rows.shape)
        self._rows.append(rows.ravel())
        self._cols.append(np.asarray(cols).ravel())
        self._vals.append(np.array(coefs, dtype=float).ravel())

    def equal(self, terms: Sequence[Tuple[np.ndarray, object]], rhs) -> np.ndarray:
        m = len(terms[0][0])
        rows = self.new_rows(np.broadcast_to(np.asarray(rhs, dtype=float), (m,)))
        for cols, coef in terms:
            self.add(rows, cols, coef)
        return rows

    def less_equal(self, terms: Sequence[Tuple[np.ndarray, object]], rhs) -> np.ndarray:
        slack = self.nonnegative(len(terms[0][0]))
        return self.equal(list(terms) + [(slack, 1.0)], rhs)

    def greater_equal(self, terms: Sequence[Tuple[np.ndarray, object]], rhs) -> np.ndarray:
        slack = self.nonnegative(len(terms[0][0]))
        return self.equal(list(terms) + [(slack, -1.0)], rhs)

    def cost(self, cols: np.ndarray, coefs) -> None:
        self._cost.append((np.asarray(cols).ravel(),
                           np.broadcast_to(np.asarray(coefs, dtype=float), np.shape(cols)).ravel()))

    def build(self) -> conic.ConicProblem:
        c = np.zeros(self.size)
        for cols, coefs in self._cost:
            np.add.at(c, cols, coefs)
        A = sp.csr_matrix(
            (np.concatenate(self._vals), (np.concatenate(self._rows), np.concatenate(self._cols))),
            shape=(self.n_rows, self.size),
        )
        return conic.ConicProblem(
            objective=c,
            equality_matrix=A,
            equality_rhs=np.concatenate(self._rhs),
            cones=tuple(self.cones),
        )


def _surface_arrays(surfaces: Sequence[LossSurface]) -> Dict[str, np.ndarray]:
    # Scaled per-gear coefficients.
    return {
        "constant": np.array([s.constant for s in surfaces]) / F_REF,
        "lethargy": np.array([s.lethargy for s in surfaces]) / (V_REF * F_REF),
        "velocity": np.array([s.velocity for s in surfaces]) * V_REF / F_REF,
        "spread": np.array([s.spread for s in surfaces]),
        # z >= F^2/(2v) in scaled units carries the factor 2*F_REF/V_REF.
        "quadratic": np.array([s.quadratic for s in surfaces]) * 2.0 * F_REF / V_REF,
        "force_max": np.array([s.torque_force_max for s in surfaces]) / F_REF,
        "speed_max": np.array([s.speed_max for s in surfaces]) / V_REF,
        "ratio": np.array([s.ratio for s in surfaces]),
    }


def _assemble(
    track: TrackProfile,
    vehicle: VehicleSpec,
    powertrain: PowertrainSpec,
    trans: TransmissionSpec,
    surfaces: Sequence[LossSurface],
    allowed: Sequence[Sequence[int]],
    boundary: Optional[SectionBoundary],
) -> Tuple[conic.ConicProblem, VariableLayout]:
    N = track.n_steps
    ds = track.step_length
    mass = dynamic_mass(vehicle, trans)
    e_ref = 0.5 * mass * V_REF**2
    k_e = ds * F_REF / e_ref
    eta = trans.eta
    eta_inv = powertrain.inverter_efficiency
    coef = _surface_arrays(surfaces)

    pair_step = np.array([i for i in range(N) for _ in allowed[i]], dtype=np.int64)
    pair_gear = np.array([j for i in range(N) for j in allowed[i]], dtype=np.int64)
    K = pair_step.size

    asm = _Assembler()
    V = asm.rotated(K)   # (kinetic share, h, v)
    L = asm.rotated(K)   # (q, v', r)
    Z = asm.rotated(K)   # (z, v'', F)
    B = asm.rotated(K)   # (u, h', F_dc)
    w = asm.nonnegative(K)
    p = asm.nonnegative(K)
    kin = asm.nonnegative(N)
    bat = asm.nonnegative(N + 1)
    brake_f = asm.nonnegative(N)
    brake_r = asm.nonnegative(N)
    exit_node = asm.nonnegative(1) if boundary is not None else None

    share, vel, q, z, force, dc, u = V[:, 0], V[:, 2], L[:, 0], Z[:, 0], Z[:, 2], B[:, 2], B[:, 0]
    lifted = Z[:, 1]
    g = pair_gear
    ones = np.ones(K)

    # Cone links.
    asm.equal([(V[:, 1], 1.0), (w, -0.5)], 0.0)
    asm.equal([(B[:, 1], 1.0), (w, -0.5)], 0.0)
    asm.equal([(L[:, 2], 1.0), (w, -_SQRT2)], 0.0)
    asm.equal([(L[:, 1], 1.0), (vel, -1.0)], 0.0)
    spread = coef["spread"][g]
    if np.all(spread == 1.0):
        asm.equal([(lifted, 1.0), (vel, -1.0)], 0.0)
    else:
        asm.greater_equal([(lifted, ones), (vel, -1.0 / spread)], 0.0)
        asm.less_equal([(lifted, ones), (vel, -spread)], 0.0)

    # EM torque, power and speed limits (perspective: limits scale with w).
    pw = powertrain.em_power_max / (V_REF * F_REF)
    asm.less_equal([(force, ones), (w, -coef["force_max"][g])], 0.0)
    asm.less_equal([(force, -ones), (w, -coef["force_max"][g])], 0.0)
    asm.less_equal([(force, ones), (q, -pw)], 0.0)
    asm.less_equal([(force, -ones), (q, -pw)], 0.0)
    asm.less_equal([(vel, ones), (w, -coef["speed_max"][g])], 0.0)

    # Loss L = F + (a0 + c_q) q + c0 w + c1 s + c3 z; inverter F_dc >= L/eta_inv and >= eta_inv L.
    a0 = powertrain.em_loss_a0 / (V_REF * F_REF)
    loss_terms = [(force, ones), (q, a0 + coef["lethargy"][g]), (w, coef["constant"][g]),
                  (lifted, coef["velocity"][g]), (z, coef["quadratic"][g])]
    for factor in (1.0 / eta_inv, eta_inv):
        asm.greater_equal([(dc, ones)] + [(c, -factor * np.asarray(k)) for c, k in loss_terms], 0.0)

    # Gearbox: F_gb = p - floor*w with F_gb <= eta F, F_gb <= F/eta, F_gb <= traction limit.
    floor = coef["force_max"][g] / eta
    traction = vehicle.traction_force_max / F_REF
    asm.less_equal([(p, ones), (w, -floor), (force, -eta)], 0.0)
    asm.less_equal([(p, ones), (w, -floor), (force, -1.0 / eta)], 0.0)
    asm.less_equal([(p, ones), (w, -floor - traction)], 0.0)

    # Per-step rows.
    weight_rows = asm.new_rows(np.ones(N))
    asm.add(weight_rows[pair_step], w, 1.0)
    share_rows = asm.new_rows(np.zeros(N))
    asm.add(share_rows, kin, 1.0)
    asm.add(share_rows[pair_step], share, -1.0)

    e_max = max_kinetic_energy(track, vehicle, mass) / e_ref
    asm.less_equal([(kin, 1.0)], e_max)
    asm.less_equal([(brake_f, 1.0)], vehicle.brake_force_max_front / F_REF)
    asm.less_equal([(brake_r, 1.0)], vehicle.brake_force_max_rear / F_REF)

    # Kinetic dynamics: E[i+1] - E[i] - k_e (F_gb - aero E[i] - F_roll - brakes) = 0.
    aero = vehicle.aero_coefficient * V_REF**2 / F_REF
    if boundary is None:
        nxt = np.roll(kin, -1)
    else:
        nxt = np.concatenate([kin[1:], exit_node])
    kinetic_rows = asm.equal(
        [(nxt, 1.0), (kin, -1.0 + k_e * aero), (brake_f, k_e), (brake_r, k_e)],
        -k_e * vehicle.rolling_force / F_REF,
    )
    asm.add(kinetic_rows[pair_step], p, -k_e)
    asm.add(kinetic_rows[pair_step], w, k_e * floor)

    # Battery dynamics: Eb[i+1] - Eb[i] + k_e (F_dc + kb u + aux q + slack) = 0.
    battery_slack = asm.nonnegative(N)
    battery_rows = asm.equal([(bat[1:], 1.0), (bat[:-1], -1.0), (battery_slack, k_e)], 0.0)
    kb = powertrain.battery_loss_coefficient * F_REF
    aux = vehicle.aux_power / (V_REF * F_REF)
    asm.add(battery_rows[pair_step], dc, k_e)
    asm.add(battery_rows[pair_step], u, k_e * kb)
    asm.add(battery_rows[pair_step], q, k_e * aux)

    asm.equal([(bat[:1], 1.0)], powertrain.battery_capacity / e_ref)
    if boundary is None:
        allotment = powertrain.battery_consumption_limit
    else:
        allotment = boundary.battery_allotment
        entry = 0.5 * mass * boundary.entry_speed**2 / e_ref
        asm.equal([(kin[:1], 1.0)], entry)
        asm.less_equal([(exit_node, 1.0)], e_max[-1:])
    asm.greater_equal([(bat[-1:], 1.0)], (powertrain.battery_capacity - allotment) / e_ref)

    asm.cost(q, ds / V_REF)
    problem = asm.build()

    columns = {
        "weight": w, "kinetic_share": share, "velocity": vel, "lethargy": q, "motor_force": force,
        "loss_aux": z, "lifted_speed": lifted, "dc_force": dc, "battery_aux": u,
        "gearbox_shifted": p, "kinetic": kin, "battery": bat, "brake_front": brake_f,
        "brake_rear": brake_r, "battery_slack": battery_slack,
    }
    if exit_node is not None:
        columns["kinetic_exit"] = exit_node
    layout = VariableLayout(
        n_steps=N,
        n_gear=len(surfaces),
        step_length=ds,
        periodic=boundary is None,
        effective_mass=mass,
        energy_ref=e_ref,
        ratios=coef["ratio"],
        pair_step=pair_step,
        pair_gear=pair_gear,
        columns=columns,
        rows={"kinetic": kinetic_rows, "battery": battery_rows},
        gearbox_floor=floor,
        trans=trans,
        vehicle=vehicle,
        powertrain=powertrain,
    )
    return problem, layout


def _gear_surfaces(vehicle: VehicleSpec, powertrain: PowertrainSpec,
                   trans: TransmissionSpec) -> List[LossSurface]:
    return [gear_loss_surface(powertrain, vehicle, r) for r in trans.ratios]


def build_cop(
    track: TrackProfile,
    vehicle: VehicleSpec,
    powertrain: PowertrainSpec,
    trans: TransmissionSpec,
    gears: GearTrajectory,
    boundary: Optional[SectionBoundary] = None,
) -> Tuple[conic.ConicProblem, VariableLayout]:
    """Continuous problem for a fixed gear trajectory (MGT or FGT)."""
    if trans.kind is TransmissionKind.cvt:
        raise ValidationError("build_cop takes a geared transmission; use build_fgt_cvt for a CVT")
    gears.check(track.n_steps, trans.n_gear)
    allowed = [(int(j) - 1,) for j in gears.active_gear]
    return _assemble(track, vehicle, powertrain, trans,
                     _gear_surfaces(vehicle, powertrain, trans), allowed, boundary)


def build_fgt_cvt(
    track: TrackProfile,
    vehicle: VehicleSpec,
    powertrain: PowertrainSpec,
    trans: TransmissionSpec,
    boundary: Optional[SectionBoundary] = None,
) -> Tuple[conic.ConicProblem, VariableLayout]:
    if trans.kind is TransmissionKind.fgt:
        return build_cop(track, vehicle, powertrain, trans,
                         GearTrajectory.constant(track.n_steps), boundary)
    if trans.kind is not TransmissionKind.cvt:
        raise ValidationError("build_fgt_cvt takes an FGT or a CVT")
    fit = cvt_loss_surface(powertrain, vehicle, trans)
    allowed = [(0,)] * track.n_steps
    problem, layout = _assemble(track, vehicle, powertrain, trans, [fit.surface], allowed, boundary)
    layout.extras["envelope_deviation"] = fit.max_deviation
    return problem, layout


def build_relaxation(
    track: TrackProfile,
    vehicle: VehicleSpec,
    powertrain: PowertrainSpec,
    trans: TransmissionSpec,
    fixed: Mapping[int, int],
    boundary: Optional[SectionBoundary] = None,
) -> Tuple[conic.ConicProblem, VariableLayout]:
    """Convex-hull relaxation: steps in `fixed` (0-based step -> 1-based gear) use that gear,
    every other step mixes all gears with simplex weights."""
    if trans.kind is TransmissionKind.cvt:
        raise ValidationError("gear relaxation needs a geared transmission")
    every = tuple(range(trans.n_gear))
    allowed = []
    for i in range(track.n_steps):
        if i in fixed:
            gear = int(fixed[i])
            if not 1 <= gear <= trans.n_gear:
                raise ValidationError(f"gear {gear} at step {i} outside 1..{trans.n_gear}")
            allowed.append((gear - 1,))
        else:
            allowed.append(every)
    return _assemble(track, vehicle, powertrain, trans,
                     _gear_surfaces(vehicle, powertrain, trans), allowed, boundary)


def relaxation_weights(solution: conic.ConicSolution, layout: VariableLayout) -> np.ndarray:
    """(n_steps, n_gear) gear weights of a solved relaxation."""
    weights = np.zeros((layout.n_steps, layout.n_gear))
    weights[layout.pair_step, layout.pair_gear] = solution.primal[layout.columns["weight"]]
    return np.clip(weights, 0.0, 1.0)


def _per_step(layout: VariableLayout, values: np.ndarray) -> np.ndarray:
    return np.bincount(layout.pair_step, weights=values, minlength=layout.n_steps)


def extract(solution: conic.ConicSolution, layout: VariableLayout) -> ContinuousSolution:
    """Map a solved problem back to SI trajectories; costates come from the dynamics duals."""
    if not solution.optimal:
        raise ExtractionError(solution.status.value)
    x = solution.primal
    col = layout.columns
    e_ref = layout.energy_ref
    trans = layout.trans

    velocity = _per_step(layout, x[col["velocity"]]) * V_REF
    lethargy = _per_step(layout, x[col["lethargy"]]) / V_REF
    motor_force = _per_step(layout, x[col["motor_force"]]) * F_REF
    weight = x[col["weight"]]
    gearbox = _per_step(layout, x[col["gearbox_shifted"]] - layout.gearbox_floor * weight) * F_REF

    kinetic = x[col["kinetic"]] * e_ref
    if not layout.periodic:
        kinetic = np.concatenate([kinetic, x[col["kinetic_exit"]] * e_ref])

    w = np.zeros((layout.n_steps, layout.n_gear))
    w[layout.pair_step, layout.pair_gear] = weight
    active = np.argmax(w, axis=1) + 1
    cvt_ratio = None
    if trans.kind is TransmissionKind.cvt:
        cvt_ratio = cvt_operating_ratio(layout.powertrain, layout.vehicle, trans,
                                        velocity, motor_force)
        gear_ratio = cvt_ratio
        active_gear = None
    else:
        gear_ratio = layout.ratios[active - 1]
        active_gear = active

    y = solution.dual_equality
    return ContinuousSolution(
        step_length=layout.step_length,
        kinetic_energy=kinetic,
        battery_energy=x[col["battery"]] * e_ref,
        velocity=velocity,
        lethargy=lethargy,
        motor_force=motor_force,
        brake_front=x[col["brake_front"]] * F_REF,
        brake_rear=x[col["brake_rear"]] * F_REF,
        gearbox_force=gearbox,
        gear_ratio=gear_ratio,
        costate_kinetic=y[layout.rows["kinetic"]] / e_ref,
        costate_battery=y[layout.rows["battery"]] / e_ref,
        lap_time=float(np.sum(lethargy) * layout.step_length),
        effective_mass=layout.effective_mass,
        design_ratios=trans.design_vector(),
        cvt_ratio=cvt_ratio,
        active_gear=active_gear,
        periodic=layout.periodic,
        status=solution.status.value,
        solver_iterations=solution.iterations,
        primal_residual=solution.primal_residual,
        dual_residual=solution.dual_residual,
        duality_gap=solution.duality_gap,
        extras=dict(layout.extras),
    )


def solve_layout(
    problem: conic.ConicProblem,
    layout: VariableLayout,
    settings: Optional[conic.SolverSettings] = None,
) -> Tuple[conic.ConicSolution, Optional[ContinuousSolution]]:
    # Solve and extract; the continuous solution is None unless the solver proved optimality.
    result = conic.solve(problem, settings)
    if not result.optimal:
        return result, None
    return result, extract(result, layout)
