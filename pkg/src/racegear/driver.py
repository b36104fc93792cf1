# Iterative gearshift optimization and the outer gear-ratio search.
#
#   b0 = initial_gears(...)
#   loop k = 1, 2, ...
#       x^k, lambda^k = COP(b^{k-1})
#       lambda~^k     = damp(lambda~^{k-1}, lambda^k, beta)
#       b^k           = GOP(x^k, lambda~^k)
#   until b^k == b^{k-1} and |T^k - T^{k-1}| <= tolerance
#
# The design search wraps either the loop (MGT) or a single convex solve (FGT/CVT) in a
# coordinate-wise golden-section search over the gear ratios.

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console

from racegear import conic
from racegear.errors import (
    ExtractionError,
    SolverFailure,
    StepInfeasibleError,
    ValidationError,
)
from racegear.gop import GopResult, HamiltonianModel, solve_gop
from racegear.models import (
    AlgorithmSettings,
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
from racegear.transcription import SectionBoundary, build_cop, build_fgt_cvt, solve_layout

_err = Console(stderr=True)

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
INV_PHI_SQUARED = (3.0 - math.sqrt(5.0)) / 2.0
# Relative gap kept between neighbouring MGT ratios during the search.
ORDER_MARGIN = 1e-3
_SPEED_FLOOR = 1.0


def _note(events: List[str], message: str) -> None:
    events.append(message)
    _err.print(f"[dim]racegear: {message}[/dim]")


# --- costates -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DampedCostates:
    """Per-step costates fed to the GOP (s/J)."""

    kinetic: np.ndarray
    battery: np.ndarray

    def __post_init__(self) -> None:
        kinetic = np.array(self.kinetic, dtype=float, copy=True)
        battery = np.array(self.battery, dtype=float, copy=True)
        if kinetic.ndim != 1 or kinetic.shape != battery.shape:
            raise ValidationError("kinetic and battery costates need the same 1-D shape")
        if not (np.all(np.isfinite(kinetic)) and np.all(np.isfinite(battery))):
            raise ValidationError("costates must be finite")
        kinetic.setflags(write=False)
        battery.setflags(write=False)
        object.__setattr__(self, "kinetic", kinetic)
        object.__setattr__(self, "battery", battery)

    def __len__(self) -> int:
        return int(self.kinetic.size)

    @classmethod
    def from_solution(cls, solution: ContinuousSolution) -> "DampedCostates":
        return cls(solution.costate_kinetic, solution.costate_battery)


def damp(previous: Optional[DampedCostates], fresh: DampedCostates, beta: float) -> DampedCostates:
    """Exponential smoothing: (1 - beta) * previous + beta * fresh; `fresh` on the first call."""
    if not 0 < beta <= 1:
        raise ValidationError(f"beta must lie in (0, 1], got {beta}")
    if previous is None:
        return fresh
    if len(previous) != len(fresh):
        raise ValidationError(f"costates have {len(previous)} and {len(fresh)} steps")
    return DampedCostates(
        kinetic=(1.0 - beta) * previous.kinetic + beta * fresh.kinetic,
        battery=(1.0 - beta) * previous.battery + beta * fresh.battery,
    )


# --- initial gear trajectory ----------------------------------------------------------


def speed_estimate(
    track: TrackProfile,
    vehicle: VehicleSpec,
    powertrain: PowertrainSpec,
    trans: TransmissionSpec,
    entry_speed: Optional[float] = None,
) -> np.ndarray:
    """Forward-backward speed profile at the traction and brake limits under the speed caps.

    A closed lap (entry_speed None) starts both passes at the tightest cap, where the
    speed is known; an open section starts forward from the entry speed.
    """
    mass = dynamic_mass(vehicle, trans)
    n = track.n_steps
    ds = track.step_length
    top = max(trans.ratios) if trans.ratios else float(trans.ratio_max)  # type: ignore[arg-type]
    bottom = min(trans.ratios) if trans.ratios else float(trans.ratio_min)  # type: ignore[arg-type]

    cap = 2.0 * max_kinetic_energy(track, vehicle, mass) / mass
    cap = np.minimum(cap, (powertrain.em_speed_max * vehicle.wheel_radius / bottom) ** 2)
    torque_force = powertrain.em_torque_max * top / vehicle.wheel_radius
    brake = vehicle.brake_force_max_front + vehicle.brake_force_max_rear

    def drag(v2: float) -> float:
        return vehicle.aero_coefficient * v2 + vehicle.rolling_force

    def traction(v2: float) -> float:
        v = max(math.sqrt(v2), _SPEED_FLOOR)
        wheel = min(vehicle.traction_force_max, powertrain.em_power_max / v, torque_force * trans.eta)
        return wheel - drag(v2)

    v2 = cap.copy()
    if entry_speed is None:
        start = int(np.argmin(cap))
        forward = [(start + k) % n for k in range(n + 1)]
    else:
        v2[0] = min(v2[0], entry_speed**2)
        forward = list(range(n))
    for i, j in zip(forward[:-1], forward[1:]):
        v2[j] = min(v2[j], max(v2[i] + 2.0 * ds * traction(v2[i]) / mass, _SPEED_FLOOR**2))

    backward = forward[::-1]
    for j, i in zip(backward[:-1], backward[1:]):
        v2[i] = min(v2[i], v2[j] + 2.0 * ds * (brake + drag(v2[j])) / mass)
    return np.sqrt(v2)


def initial_gears(
    track: TrackProfile,
    vehicle: VehicleSpec,
    powertrain: PowertrainSpec,
    trans: TransmissionSpec,
    boundary: Optional[SectionBoundary] = None,
) -> GearTrajectory:
    """Per step, the feasible gear whose EM speed is closest to the best-efficiency speed."""
    if trans.kind is TransmissionKind.cvt:
        raise ValidationError("initial gears need a geared transmission")
    entry = boundary.entry_speed if boundary is not None else None
    v = speed_estimate(track, vehicle, powertrain, trans, entry)
    ratios = np.asarray(trans.ratios)
    omega = ratios[None, :] * v[:, None] / vehicle.wheel_radius
    feasible = omega <= powertrain.em_speed_max * (1.0 + 1e-9)
    missing = np.flatnonzero(~feasible.any(axis=1))
    if missing.size:
        raise ValidationError(f"no feasible gear at step {int(missing[0])}")
    distance = np.where(feasible, np.abs(omega - powertrain.best_efficiency_speed()), np.inf)
    return GearTrajectory(np.argmin(distance, axis=1) + 1)


# --- iterative loop -------------------------------------------------------------------


@dataclass(frozen=True)
class IterationRecord:
    k: int
    lap_time: float
    gear_changes: int
    beta: float
    solver_iterations: int
    wall_time: float


@dataclass(frozen=True, eq=False)
class IterativeResult:
    solution: ContinuousSolution
    gears: GearTrajectory
    records: Tuple[IterationRecord, ...]
    converged: bool
    costates: Optional[DampedCostates] = None
    gop: Optional[GopResult] = None
    events: Tuple[str, ...] = ()

    @property
    def lap_time(self) -> float:
        return self.solution.lap_time

    def deltas_to_final(self) -> np.ndarray:
        # Signed T^k - T_final; only non-negative when the trace is monotone.
        return np.array([r.lap_time for r in self.records]) - self.lap_time


class _CopCache:
    """Fixed-gear COP solves keyed by gear trajectory; identical inputs give identical solves."""

    def __init__(self, track, vehicle, powertrain, trans, boundary, solver):
        self.args = (track, vehicle, powertrain, trans)
        self.boundary = boundary
        self.solver = solver
        self._solved: Dict[GearTrajectory, Tuple[str, Optional[ContinuousSolution]]] = {}

    def solve(self, gears: GearTrajectory) -> Tuple[str, Optional[ContinuousSolution]]:
        if gears not in self._solved:
            problem, layout = build_cop(*self.args, gears, self.boundary)
            result, solution = solve_layout(problem, layout, self.solver)
            self._solved[gears] = (result.status.value, solution)
        return self._solved[gears]

    def recover(
        self,
        candidate: GearTrajectory,
        incumbent: GearTrajectory,
        improvement: np.ndarray,
        events: List[str],
    ) -> Tuple[GearTrajectory, ContinuousSolution]:
        """Solve the candidate; if infeasible, revert its changed steps, the smallest
        Hamiltonian improvements first, in batches of 1, 2, 4, ... until a COP solves."""
        status, solution = self.solve(candidate)
        if solution is not None:
            return candidate, solution
        changed = np.flatnonzero(candidate.active_gear != incumbent.active_gear)
        order = changed[np.argsort(improvement[changed], kind="stable")]
        gears = candidate.active_gear.copy()
        reverted, batch = 0, 1
        while reverted < order.size:
            take = order[reverted:reverted + batch]
            gears[take] = incumbent.active_gear[take]
            reverted += take.size
            batch *= 2
            trial = GearTrajectory(gears)
            _, solution = self.solve(trial)
            if solution is not None:
                _note(events, f"COP {status} for the new gears; reverted {reverted} of "
                              f"{order.size} changed steps")
                return trial, solution
        raise SolverFailure(status, "COP failed for the incumbent gear trajectory")


def _gop_step(solution, costates, model, gears, events) -> GopResult:
    try:
        return solve_gop(solution, costates, model, gears)
    except StepInfeasibleError as exc:
        _note(events, f"GOP found no feasible gear at step {exc.step}; kept the previous gears there")
        return solve_gop(solution, costates, model, gears, strict=False)


def run_iterative(
    track: TrackProfile,
    vehicle: VehicleSpec,
    powertrain: PowertrainSpec,
    trans: TransmissionSpec,
    settings: Optional[AlgorithmSettings] = None,
    solver: Optional[conic.SolverSettings] = None,
    boundary: Optional[SectionBoundary] = None,
    initial: Optional[GearTrajectory] = None,
) -> IterativeResult:
    """Alternate fixed-gear COP solves and Hamiltonian gear selection until the gears repeat."""
    settings = settings or AlgorithmSettings()
    if trans.kind is TransmissionKind.cvt:
        raise ValidationError("the iterative gearshift method needs a geared transmission")
    gears = initial if initial is not None else initial_gears(
        track, vehicle, powertrain, trans, boundary
    )
    gears.check(track.n_steps, trans.n_gear)

    clock = time.perf_counter()
    cop = _CopCache(track, vehicle, powertrain, trans, boundary, solver)
    status, first = cop.solve(gears)
    if first is None:
        raise SolverFailure(status, "COP failed for the initial gear trajectory")
    solution: ContinuousSolution = first
    model = HamiltonianModel(vehicle, powertrain, trans)

    beta = settings.beta
    halvings = 0
    seen = {gears}
    best_solution, best_gears = solution, gears
    damped: Optional[DampedCostates] = None
    gop: Optional[GopResult] = None
    previous_time: Optional[float] = None
    records: List[IterationRecord] = []
    events: List[str] = []

    for k in range(1, settings.max_outer_iterations + 1):
        damped = damp(damped, DampedCostates.from_solution(solution), beta)
        gop = _gop_step(solution, damped, model, gears, events)
        candidate = gop.gears
        changes = candidate.changes_from(gears)
        lap_time = solution.lap_time

        now = time.perf_counter()
        records.append(IterationRecord(k, lap_time, changes, beta, solution.solver_iterations,
                                       now - clock))
        clock = now
        if lap_time < best_solution.lap_time:
            best_solution, best_gears = solution, gears

        if (changes == 0 and previous_time is not None
                and abs(lap_time - previous_time) <= settings.lap_time_tolerance):
            return IterativeResult(solution, gears, tuple(records), True, damped, gop,
                                   tuple(events))
        previous_time = lap_time
        if changes == 0:
            continue

        if candidate in seen:
            halvings += 1
            if halvings > settings.max_beta_halvings:
                _note(events, f"gear cycle persists after {settings.max_beta_halvings} beta "
                              "halvings; returning the best incumbent")
                break
            beta /= 2.0
            _note(events, f"gear trajectory repeats an earlier iterate at k={k}; beta -> {beta:g}")
        gears, solution = cop.recover(candidate, gears, gop.improvement, events)
        seen.add(gears)
    else:
        _note(events, f"no convergence after {settings.max_outer_iterations} iterations; "
                      "returning the best incumbent")

    return IterativeResult(best_solution, best_gears, tuple(records), False, damped, gop,
                           tuple(events))


# --- design search --------------------------------------------------------------------


@dataclass(frozen=True)
class DesignEvaluation:
    design: Tuple[float, ...]
    # +inf when the inner problem failed or did not solve.
    lap_time: float
    converged: bool = True


@dataclass(frozen=True, eq=False)
class DesignResult:
    trans: TransmissionSpec
    solution: ContinuousSolution
    evaluations: Tuple[DesignEvaluation, ...]
    iterative: Optional[IterativeResult] = None

    @property
    def lap_time(self) -> float:
        return self.solution.lap_time

    @property
    def ratios(self) -> Tuple[float, ...]:
        return self.trans.design_vector()


def golden_section(f: Callable[[float], float], a: float, b: float,
                   tol: float) -> Tuple[float, float]:
    """Minimize a unimodal f on [a, b]; returns the best evaluated point and its value."""
    a, b = min(a, b), max(a, b)
    h = b - a
    if h <= tol:
        x = 0.5 * (a + b)
        return x, f(x)
    n = int(math.ceil(math.log(tol / h) / math.log(INV_PHI)))
    c = a + INV_PHI_SQUARED * h
    d = a + INV_PHI * h
    yc, yd = f(c), f(d)
    best = min((yc, c), (yd, d))
    for _ in range(n - 1):
        if yc < yd:
            b, d, yd = d, c, yc
            h *= INV_PHI
            c = a + INV_PHI_SQUARED * h
            yc = f(c)
            best = min(best, (yc, c))
        else:
            a, c, yc = c, d, yd
            h *= INV_PHI
            d = a + INV_PHI * h
            yd = f(d)
            best = min(best, (yd, d))
    return best[1], best[0]


def _check_bounds(trans: TransmissionSpec) -> List[Tuple[float, float]]:
    bounds = list(trans.design_bounds)
    size = len(trans.design_vector())
    if len(bounds) != size:
        raise ValidationError(f"design search needs {size} (low, high) ratio bounds, "
                              f"got {len(bounds)}")
    for j, (lo, hi) in enumerate(bounds, start=1):
        if not 0 < lo <= hi:
            raise ValidationError(f"ratio bounds for design variable {j} must satisfy 0 < low <= high")
    if trans.kind is TransmissionKind.cvt and float(trans.ratio_min) > bounds[0][1]:  # type: ignore[arg-type]
        raise ValidationError("CVT ratio_max bounds lie below ratio_min")
    return bounds


def _ordered_start(trans: TransmissionSpec, bounds: Sequence[Tuple[float, float]]) -> List[float]:
    """A strictly decreasing design inside the bounds: the template if it qualifies, else the
    geometric mean of the lowest and highest ordered chains."""
    if trans.kind is TransmissionKind.cvt:
        lo, hi = bounds[0]
        lo = max(lo, float(trans.ratio_min))  # type: ignore[arg-type]
        return [min(max(float(trans.ratio_max), lo), hi)]  # type: ignore[arg-type]
    n = len(bounds)
    low = [0.0] * n
    for j in reversed(range(n)):
        low[j] = bounds[j][0] if j == n - 1 else max(bounds[j][0], low[j + 1] * (1 + ORDER_MARGIN))
        if low[j] > bounds[j][1]:
            raise ValidationError("ratio bounds leave no strictly decreasing gear set")
    high = [0.0] * n
    for j in range(n):
        high[j] = bounds[j][1] if j == 0 else min(bounds[j][1], high[j - 1] / (1 + ORDER_MARGIN))

    template = list(trans.ratios)
    inside = all(lo <= r <= hi for r, (lo, hi) in zip(template, bounds))
    ordered = all(a >= b * (1 + ORDER_MARGIN) for a, b in zip(template, template[1:]))
    if inside and ordered:
        return template
    return [math.sqrt(a * b) for a, b in zip(low, high)]


def _coordinate_box(trans: TransmissionSpec, bounds: Sequence[Tuple[float, float]],
                    x: Sequence[float], j: int) -> Tuple[float, float]:
    lo, hi = bounds[j]
    if trans.kind is TransmissionKind.cvt:
        return max(lo, float(trans.ratio_min)), hi  # type: ignore[arg-type]
    if j + 1 < len(x):
        lo = max(lo, x[j + 1] * (1 + ORDER_MARGIN))
    if j > 0:
        hi = min(hi, x[j - 1] / (1 + ORDER_MARGIN))
    return lo, hi


def design_search(
    track: TrackProfile,
    vehicle: VehicleSpec,
    powertrain: PowertrainSpec,
    template: TransmissionSpec,
    settings: Optional[AlgorithmSettings] = None,
    solver: Optional[conic.SolverSettings] = None,
    boundary: Optional[SectionBoundary] = None,
) -> DesignResult:
    """Coordinate-wise golden-section search over the gear ratios within `design_bounds`."""
    settings = settings or AlgorithmSettings()
    bounds = _check_bounds(template)
    x = _ordered_start(template, bounds)

    cache: Dict[Tuple[float, ...], DesignEvaluation] = {}
    order: List[DesignEvaluation] = []
    outcomes: Dict[Tuple[float, ...], Tuple[ContinuousSolution, Optional[IterativeResult]]] = {}

    def evaluate(design: Sequence[float]) -> float:
        key = tuple(float(v) for v in design)
        if key in cache:
            return cache[key].lap_time
        trans = template.with_design(key)
        lap_time, converged = math.inf, False
        try:
            if trans.kind is TransmissionKind.mgt:
                run = run_iterative(track, vehicle, powertrain, trans, settings, solver, boundary)
                outcomes[key] = (run.solution, run)
                lap_time, converged = run.lap_time, run.converged
            else:
                problem, layout = build_fgt_cvt(track, vehicle, powertrain, trans, boundary)
                _, solution = solve_layout(problem, layout, solver)
                if solution is not None:
                    outcomes[key] = (solution, None)
                    lap_time, converged = solution.lap_time, True
        except (SolverFailure, ExtractionError, ValidationError) as exc:
            _err.print(f"[dim]racegear: design {key} skipped: {exc}[/dim]")
        cache[key] = DesignEvaluation(key, lap_time, converged)
        order.append(cache[key])
        return lap_time

    fx = evaluate(x)
    tol_scale = settings.design_ratio_tolerance
    for _ in range(settings.max_design_passes):
        before = fx
        for j in range(len(x)):
            lo, hi = _coordinate_box(template, bounds, x, j)
            if hi - lo <= 1e-12 * max(hi, 1.0):
                continue

            def along(value: float, j: int = j) -> float:
                trial = list(x)
                trial[j] = value
                return evaluate(trial)

            xj, fj = golden_section(along, lo, hi, tol_scale * max(hi, 1.0))
            if fj < fx:
                x[j], fx = xj, fj
        if len(x) == 1 or before - fx < settings.design_tolerance:
            break

    key = tuple(float(v) for v in x)
    if key not in outcomes:
        raise SolverFailure("infeasible", "no design inside the ratio bounds solved")
    solution, run = outcomes[key]
    return DesignResult(template.with_design(key), solution, tuple(order), run)
