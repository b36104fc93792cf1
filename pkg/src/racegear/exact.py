# Exact gear selection on short sections: best-first branch-and-bound over per-step gear
# choices, plus brute-force enumeration as the ground-truth oracle for tiny sections.
#
# A node fixes the gear at some steps; every other step mixes all gear models with simplex
# weights (build_relaxation). Its relaxed lap time is a lower bound on every completion.

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from racegear import conic
from racegear.errors import ValidationError
from racegear.models import (
    AlgorithmSettings,
    ContinuousSolution,
    GearTrajectory,
    PowertrainSpec,
    TrackProfile,
    TransmissionKind,
    TransmissionSpec,
    VehicleSpec,
)
from racegear.transcription import (
    SectionBoundary,
    build_cop,
    build_relaxation,
    relaxation_weights,
    solve_layout,
)

INTEGRALITY_TOLERANCE = 1e-6
BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class BnbNode:
    # Sorted (step, gear) pairs; steps 0-based, gears 1-based.
    fixed: Tuple[Tuple[int, int], ...]
    bound: float
    depth: int
    node_id: int

    def assignments(self) -> Dict[int, int]:
        return dict(self.fixed)

    def child(self, step: int, gear: int, bound: float, node_id: int) -> "BnbNode":
        return BnbNode(
            fixed=tuple(sorted(self.fixed + ((step, gear),))),
            bound=max(bound, self.bound),
            depth=self.depth + 1,
            node_id=node_id,
        )


@dataclass(frozen=True, eq=False)
class ExactResult:
    # None when no gear sequence admits a feasible lap.
    gears: Optional[GearTrajectory]
    solution: Optional[ContinuousSolution]
    lower_bound: float
    node_count: int
    status: str
    wall_time: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.solution is not None

    @property
    def section_time(self) -> float:
        return self.solution.lap_time if self.solution is not None else math.inf

    @property
    def bound_gap(self) -> float:
        if self.solution is None:
            return math.inf
        return max(self.section_time - self.lower_bound, 0.0)


@dataclass(frozen=True, eq=False)
class _Relaxed:
    bound: float
    weights: np.ndarray


class _Search:
    def __init__(self, section, vehicle, powertrain, trans, boundary, solver):
        self.args = (section, vehicle, powertrain, trans)
        self.boundary = boundary
        self.solver = solver
        self.best: Optional[Tuple[GearTrajectory, ContinuousSolution]] = None
        self._cop: Dict[GearTrajectory, Optional[ContinuousSolution]] = {}

    @property
    def incumbent(self) -> float:
        return self.best[1].lap_time if self.best is not None else math.inf

    def relax(self, fixed: Mapping[int, int]) -> Optional[_Relaxed]:
        problem, layout = build_relaxation(*self.args, fixed, self.boundary)
        result, solution = solve_layout(problem, layout, self.solver)
        if solution is None:
            return None
        return _Relaxed(solution.lap_time, relaxation_weights(result, layout))

    def complete(self, gears: GearTrajectory) -> Optional[ContinuousSolution]:
        # Fixed-gear COP for a full assignment; the incumbent keeps the first best found.
        if gears not in self._cop:
            problem, layout = build_cop(*self.args, gears, self.boundary)
            _, solution = solve_layout(problem, layout, self.solver)
            self._cop[gears] = solution
            if solution is not None and solution.lap_time < self.incumbent:
                self.best = (gears, solution)
        return self._cop[gears]


def _rounded(weights: np.ndarray) -> GearTrajectory:
    return GearTrajectory(np.argmax(weights, axis=1) + 1)


def _branch_step(weights: np.ndarray, fixed: Mapping[int, int]) -> Tuple[Optional[int], bool]:
    """Most fractional free step (1 - max weight largest, lowest index on ties) and whether
    every free step is integral. The step is None once all steps are fixed."""
    fraction = 1.0 - weights.max(axis=1)
    if fixed:
        fraction[list(fixed)] = -1.0
    step = int(np.argmax(fraction))
    if fraction[step] < 0:
        return None, True
    return step, bool(fraction[step] <= INTEGRALITY_TOLERANCE)


def _check_section(section: TrackProfile, trans: TransmissionSpec,
                   settings: AlgorithmSettings) -> None:
    if trans.kind is TransmissionKind.cvt:
        raise ValidationError("exact gear selection needs a geared transmission")
    if section.n_steps > settings.max_exact_steps:
        raise ValidationError(
            f"exact solve limited to {settings.max_exact_steps} steps, section has {section.n_steps}"
        )


def solve_exact(
    section: TrackProfile,
    vehicle: VehicleSpec,
    powertrain: PowertrainSpec,
    trans: TransmissionSpec,
    boundary: Optional[SectionBoundary] = None,
    settings: Optional[AlgorithmSettings] = None,
    solver: Optional[conic.SolverSettings] = None,
) -> ExactResult:
    """Globally optimal gear trajectory on a short section by best-first branch-and-bound."""
    settings = settings or AlgorithmSettings()
    _check_section(section, trans, settings)
    started = time.perf_counter()
    search = _Search(section, vehicle, powertrain, trans, boundary, solver)
    tolerance = settings.bnb_gap_tolerance

    root = search.relax({})
    if root is None:
        return ExactResult(None, None, math.inf, 1, "infeasible", time.perf_counter() - started)
    search.complete(_rounded(root.weights))

    ids = itertools.count(1)
    heap: List[Tuple[float, int, BnbNode, np.ndarray]] = []
    heapq.heappush(heap, (root.bound, 0, BnbNode((), root.bound, 0, 0), root.weights))
    node_count = 1
    pruned_floor = math.inf
    status = "optimal"

    while heap:
        bound, _, node, weights = heapq.heappop(heap)
        if bound >= search.incumbent - tolerance:
            # Best-first: every open node is at least this bound.
            pruned_floor = min(pruned_floor, bound)
            heap.clear()
            break
        fixed = node.assignments()
        step, integral = _branch_step(weights, fixed)
        if integral and search.complete(_rounded(weights)) is not None:
            pruned_floor = min(pruned_floor, bound)
            continue
        if step is None:
            continue
        # A near-integral point whose rounding fails still branches on its least certain step.

        # Children in descending relaxed weight; stable sort keeps lower gears first on ties.
        for gear in np.argsort(-weights[step], kind="stable") + 1:
            if node_count >= settings.node_budget:
                status = "node_budget"
                heapq.heappush(heap, (bound, node.node_id, node, weights))
                break
            child_fixed = dict(fixed)
            child_fixed[step] = int(gear)
            relaxed = search.relax(child_fixed)
            node_count += 1
            if relaxed is None:
                continue
            child = node.child(step, int(gear), relaxed.bound, next(ids))
            if child.bound < search.incumbent - tolerance:
                heapq.heappush(heap, (child.bound, child.node_id, child, relaxed.weights))
            else:
                pruned_floor = min(pruned_floor, child.bound)
        if status == "node_budget":
            break

    open_floor = min((entry[0] for entry in heap), default=math.inf)
    lower_bound = min(search.incumbent, pruned_floor, open_floor)
    wall = time.perf_counter() - started
    if search.best is None:
        status = "infeasible" if status == "optimal" else status
        return ExactResult(None, None, lower_bound, node_count, status, wall)
    gears, solution = search.best
    return ExactResult(gears, solution, lower_bound, node_count, status, wall)


def enumerate_exhaustive(
    section: TrackProfile,
    vehicle: VehicleSpec,
    powertrain: PowertrainSpec,
    trans: TransmissionSpec,
    boundary: Optional[SectionBoundary] = None,
    settings: Optional[AlgorithmSettings] = None,
    solver: Optional[conic.SolverSettings] = None,
) -> ExactResult:
    """Solve one COP per gear sequence and keep the fastest (ties: first in lexicographic order)."""
    settings = settings or AlgorithmSettings()
    if trans.kind is TransmissionKind.cvt:
        raise ValidationError("enumeration needs a geared transmission")
    total = trans.n_gear ** section.n_steps
    if total > settings.exhaustive_budget:
        raise ValidationError(
            f"{trans.n_gear}^{section.n_steps} = {total} gear sequences exceed the "
            f"enumeration budget of {settings.exhaustive_budget}"
        )
    started = time.perf_counter()
    search = _Search(section, vehicle, powertrain, trans, boundary, solver)
    for sequence in itertools.product(range(1, trans.n_gear + 1), repeat=section.n_steps):
        search.complete(GearTrajectory(np.array(sequence)))
    wall = time.perf_counter() - started
    if search.best is None:
        return ExactResult(None, None, math.inf, total, "infeasible", wall)
    gears, solution = search.best
    return ExactResult(gears, solution, solution.lap_time, total, "optimal", wall)
