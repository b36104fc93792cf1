# Unit tests for racegear.conic.
# Small cone programs with known optima, infeasibility detection and the text dump.

from __future__ import annotations

import itertools
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pytest

from racegear.conic import (
    Cone,
    ConeKind,
    ConicProblem,
    ConicSolution,
    SolveStatus,
    certify,
    dump_problem,
    load_problem,
    solve,
)
from racegear.errors import ValidationError


def _lp() -> ConicProblem:
    # minimize x1 + 2 x2  s.t.  x1 + x2 = 1, x >= 0
    return ConicProblem(
        objective=np.array([1.0, 2.0]),
        equality_matrix=np.array([[1.0, 1.0]]),
        equality_rhs=np.array([1.0]),
        cones=(Cone(ConeKind.nonnegative, 2),),
    )


def _soc() -> ConicProblem:
    # minimize t  s.t.  (t, x) in SOC, x = (3, 4)
    return ConicProblem(
        objective=np.array([1.0, 0.0, 0.0]),
        equality_matrix=np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        equality_rhs=np.array([3.0, 4.0]),
        cones=(Cone(ConeKind.second_order, 3),),
    )


def _rotated() -> ConicProblem:
    # minimize a  s.t.  2ab >= x^2, b = 1, x = 2
    return ConicProblem(
        objective=np.array([1.0, 0.0, 0.0]),
        equality_matrix=np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        equality_rhs=np.array([1.0, 2.0]),
        cones=(Cone(ConeKind.rotated_second_order, 3),),
    )


def test_lp_optimum_and_sensitivity() -> None:
    sol = solve(_lp())
    assert sol.status is SolveStatus.optimal
    assert sol.optimal
    assert sol.objective_value == pytest.approx(1.0, abs=1e-6)
    assert sol.primal == pytest.approx([1.0, 0.0], abs=1e-6)
    # d(optimal value)/d(rhs)
    assert sol.dual_equality[0] == pytest.approx(1.0, abs=1e-6)


def test_second_order_cone_norm() -> None:
    sol = solve(_soc())
    assert sol.status is SolveStatus.optimal
    assert sol.objective_value == pytest.approx(5.0, abs=1e-6)
    assert sol.dual_equality == pytest.approx([0.6, 0.8], abs=1e-6)


def test_rotated_cone() -> None:
    sol = solve(_rotated())
    assert sol.status is SolveStatus.optimal
    assert sol.primal[0] == pytest.approx(2.0, abs=1e-6)
    # a* = x^2 / (2b): da/db = -2, da/dx = 2 at b = 1, x = 2
    assert sol.dual_equality == pytest.approx([-2.0, 2.0], abs=1e-5)


def test_mixed_cones_in_one_problem() -> None:
    # Both blocks of the LP and SOC examples stacked side by side.
    c = np.array([1.0, 2.0, 1.0, 0.0, 0.0])
    A = np.array([
        [1.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ])
    problem = ConicProblem(
        objective=c,
        equality_matrix=A,
        equality_rhs=np.array([1.0, 3.0, 4.0]),
        cones=(Cone(ConeKind.nonnegative, 2), Cone(ConeKind.second_order, 3)),
    )
    sol = solve(problem)
    assert sol.optimal
    assert sol.objective_value == pytest.approx(6.0, abs=1e-6)


def test_primal_infeasible_is_reported() -> None:
    problem = ConicProblem(
        objective=np.array([1.0]),
        equality_matrix=np.array([[1.0]]),
        equality_rhs=np.array([-1.0]),
        cones=(Cone(ConeKind.nonnegative, 1),),
    )
    assert solve(problem).status is SolveStatus.primal_infeasible


def test_unbounded_is_reported_as_dual_infeasible() -> None:
    # minimize -x1  s.t.  x1 - x2 = 0, x >= 0
    problem = ConicProblem(
        objective=np.array([-1.0, 0.0]),
        equality_matrix=np.array([[1.0, -1.0]]),
        equality_rhs=np.array([0.0]),
        cones=(Cone(ConeKind.nonnegative, 2),),
    )
    assert solve(problem).status is SolveStatus.dual_infeasible


def test_certify_accepts_optimal_solutions() -> None:
    for problem in (_lp(), _soc(), _rotated()):
        report = certify(problem, solve(problem))
        assert report.passes(1e-6)


def test_solve_is_deterministic() -> None:
    first = solve(_soc())
    second = solve(_soc())
    assert np.array_equal(first.primal, second.primal)
    assert np.array_equal(first.dual_equality, second.dual_equality)
    assert first.iterations == second.iterations


def test_problem_validation() -> None:
    with pytest.raises(ValidationError):
        ConicProblem(
            objective=np.zeros(3),
            equality_matrix=np.zeros((1, 3)),
            equality_rhs=np.zeros(1),
            cones=(Cone(ConeKind.nonnegative, 2),),
        )
    with pytest.raises(ValidationError):
        ConicProblem(
            objective=np.zeros(2),
            equality_matrix=np.zeros((2, 2)),
            equality_rhs=np.zeros(1),
            cones=(Cone(ConeKind.nonnegative, 2),),
        )
    with pytest.raises(ValidationError):
        Cone(ConeKind.rotated_second_order, 2)


def test_dump_and_load_preserve_problem(tmp_path: Path) -> None:
    problem = _rotated()
    path = tmp_path / "problem.txt"
    dump_problem(problem, path)
    assert path.read_text(encoding="utf-8").startswith("# racegear conic problem v1")

    loaded = load_problem(path)
    assert loaded.cones == problem.cones
    assert np.array_equal(loaded.objective, problem.objective)
    assert np.array_equal(loaded.equality_rhs, problem.equality_rhs)
    assert (loaded.equality_matrix != problem.equality_matrix).nnz == 0
    assert solve(loaded).objective_value == pytest.approx(2.0, abs=1e-6)


def test_load_rejects_foreign_files(tmp_path: Path) -> None:
    path = tmp_path / "other.txt"
    path.write_text("hello\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_problem(path)


# --- seeded random instances ------------------------------------------------------


def _interior(rng: np.random.Generator, cone: Cone) -> np.ndarray:
    # A point strictly inside the cone.
    if cone.kind is ConeKind.nonnegative:
        return rng.uniform(0.5, 2.0, cone.dim)
    if cone.kind is ConeKind.second_order:
        tail = rng.normal(size=cone.dim - 1)
        return np.concatenate([[np.linalg.norm(tail) + rng.uniform(0.5, 1.5)], tail])
    tail = rng.normal(size=cone.dim - 2)
    a = rng.uniform(0.5, 2.0)
    b = (tail @ tail + 1.0) / (2.0 * a) + rng.uniform(0.5, 1.5)
    return np.concatenate([[a, b], tail])


def _random_problem(rng: np.random.Generator, cones: List[Cone]) -> ConicProblem:
    # Strictly feasible primal and dual by construction, so an optimum exists.
    x0 = np.concatenate([_interior(rng, cone) for cone in cones])
    s0 = np.concatenate([_interior(rng, cone) for cone in cones])
    n = x0.size
    m = max(1, n // 2)
    A = rng.normal(size=(m, n))
    y0 = rng.normal(size=m)
    return ConicProblem(objective=A.T @ y0 + s0, equality_matrix=A, equality_rhs=A @ x0,
                        cones=tuple(cones))


def _random_cones(rng: np.random.Generator) -> List[Cone]:
    cones = [Cone(ConeKind.nonnegative, int(rng.integers(1, 12)))]
    for _ in range(int(rng.integers(1, 5))):
        kind = (ConeKind.second_order, ConeKind.rotated_second_order)[int(rng.integers(2))]
        cones.append(Cone(kind, int(rng.integers(3, 8))))
    return cones


@pytest.mark.parametrize("seed", range(12))
def test_random_cone_programs_certify(seed: int) -> None:
    rng = np.random.default_rng(seed)
    problem = _random_problem(rng, _random_cones(rng))
    assert problem.variable_count <= 50
    sol = solve(problem)
    assert sol.optimal
    report = certify(problem, sol)
    assert report.scaled_primal_residual <= 1e-7
    assert report.scaled_dual_residual <= 1e-7
    assert report.duality_gap <= 1e-7
    assert report.primal_cone_violation <= 1e-9
    assert report.dual_cone_violation <= 1e-9


def _vertex_optimum(problem: ConicProblem) -> float:
    # Best basic feasible solution of min c'x, Ax = b, x >= 0.
    A = problem.equality_matrix.toarray()
    b, c = problem.equality_rhs, problem.objective
    m, n = A.shape
    best = np.inf
    for basis in itertools.combinations(range(n), m):
        B = A[:, basis]
        if abs(np.linalg.det(B)) < 1e-10:
            continue
        xb = np.linalg.solve(B, b)
        if xb.min() >= -1e-10:
            best = min(best, float(c[list(basis)] @ xb))
    return best


@pytest.mark.parametrize("seed", range(10))
def test_random_lp_optimum_matches_vertex_enumeration(seed: int) -> None:
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(4, 8))
    problem = _random_problem(rng, [Cone(ConeKind.nonnegative, n)])
    sol = solve(problem)
    assert sol.optimal
    assert sol.objective_value == pytest.approx(_vertex_optimum(problem), rel=1e-6, abs=1e-6)


@pytest.mark.parametrize("seed", range(6))
def test_dual_matches_rhs_sensitivity_on_random_programs(seed: int) -> None:
    rng = np.random.default_rng(200 + seed)
    problem = _random_problem(rng, _random_cones(rng))
    sol = solve(problem)
    assert sol.optimal

    h = 1e-4
    for row in range(problem.constraint_count):
        values: List[float] = []
        for sign in (1.0, -1.0):
            rhs = problem.equality_rhs.copy()
            rhs[row] += sign * h
            shifted = solve(ConicProblem(problem.objective, problem.equality_matrix, rhs,
                                         problem.cones))
            assert shifted.optimal
            values.append(shifted.objective_value)
        slope = (values[0] - values[1]) / (2.0 * h)
        assert slope == pytest.approx(sol.dual_equality[row], rel=1e-3, abs=1e-3)


def test_certify_rejects_perturbed_primals() -> None:
    problem = _lp()
    sol = solve(problem)
    perturbations: Tuple[np.ndarray, ...] = (
        np.array([1e-2, 0.0]),   # breaks A x = b
        np.array([1e-2, -1e-2]),  # leaves the cone
    )
    for delta in perturbations:
        moved = ConicSolution(
            status=sol.status, primal=sol.primal + delta, dual_equality=sol.dual_equality,
            dual_cone=sol.dual_cone, objective_value=sol.objective_value,
            duality_gap=sol.duality_gap, primal_residual=sol.primal_residual,
            dual_residual=sol.dual_residual, iterations=sol.iterations,
        )
        report = certify(problem, moved)
        assert not report.passes(1e-6)
        assert report.max_violation > 1e-3
