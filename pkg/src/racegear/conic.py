# Primal-dual interior-point solver for linear programs over products of
# nonnegative, second-order and rotated second-order cones.
#
#   primal:  minimize c'x   subject to  A x = b,  x in K
#   dual:    maximize b'y   subject to  s = c - A'y,  s in K
#
# Homogeneous self-dual embedding, Nesterov-Todd scaling, Mehrotra predictor-corrector.
# dual_equality[j] is the sensitivity d(optimal value)/d(b[j]); the Lagrangian is
# c'x + y'(b - Ax) - s'x. Rotated cones are mapped onto ordinary second-order cones
# by an orthogonal change of variables before solving and mapped back afterwards.

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from rich.console import Console
from scipy.sparse.linalg import splu

from racegear.errors import ValidationError

_err = Console(stderr=True)

_SQRT_HALF = np.sqrt(0.5)
DUMP_HEADER = "# racegear conic problem v1"


class ConeKind(str, Enum):
    nonnegative = "nonnegative"
    second_order = "second-order"
    rotated_second_order = "rotated-second-order"


class SolveStatus(str, Enum):
    optimal = "optimal"
    primal_infeasible = "primal_infeasible"
    dual_infeasible = "dual_infeasible"
    iteration_limit = "iteration_limit"
    numerical_failure = "numerical_failure"


@dataclass(frozen=True)
class Cone:
    kind: ConeKind
    dim: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ConeKind(self.kind))
        minimum = {
            ConeKind.nonnegative: 1,
            ConeKind.second_order: 2,
            ConeKind.rotated_second_order: 3,
        }[self.kind]
        if self.dim < minimum:
            raise ValidationError(f"{self.kind.value} cone needs dimension >= {minimum}")


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 200
    feasibility_tolerance: float = 1e-8
    gap_tolerance: float = 1e-8
    reduced_tolerance: float = 1e-7
    regularization: float = 1e-8
    refinement_passes: int = 3
    regularization_retries: int = 3
    step_fraction: float = 0.99
    equilibration_passes: int = 10
    verbose: bool = False


@dataclass(frozen=True, eq=False)
class ConicProblem:
    objective: np.ndarray
    equality_matrix: sp.csr_matrix
    equality_rhs: np.ndarray
    cones: Tuple[Cone, ...]

    def __post_init__(self) -> None:
        c = np.asarray(self.objective, dtype=float).ravel()
        b = np.asarray(self.equality_rhs, dtype=float).ravel()
        A = sp.csr_matrix(self.equality_matrix, dtype=float)
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "equality_rhs", b)
        object.__setattr__(self, "equality_matrix", A)
        object.__setattr__(self, "cones", tuple(self.cones))
        if sum(cone.dim for cone in self.cones) != c.size:
            raise ValidationError("cone dimensions must sum to the variable count")
        if A.shape != (b.size, c.size):
            raise ValidationError(
                f"equality matrix is {A.shape}, expected {(b.size, c.size)}"
            )
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b)) and np.all(np.isfinite(A.data))):
            raise ValidationError("problem data must be finite")

    @property
    def variable_count(self) -> int:
        return int(self.objective.size)

    @property
    def constraint_count(self) -> int:
        return int(self.equality_rhs.size)


@dataclass(frozen=True, eq=False)
class ConicSolution:
    status: SolveStatus
    primal: np.ndarray
    dual_equality: np.ndarray
    dual_cone: np.ndarray
    objective_value: float
    duality_gap: float
    primal_residual: float
    dual_residual: float
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.optimal


@dataclass(frozen=True)
class CertificateReport:
    primal_residual: float
    dual_residual: float
    primal_cone_violation: float
    dual_cone_violation: float
    complementarity: float
    duality_gap: float
    # Residuals relative to 1 + ||b|| and 1 + ||c||; gap terms relative to 1 + |c'x|.
    scaled_primal_residual: float
    scaled_dual_residual: float

    @property
    def max_violation(self) -> float:
        return max(
            self.scaled_primal_residual,
            self.scaled_dual_residual,
            self.primal_cone_violation,
            self.dual_cone_violation,
            self.complementarity,
            self.duality_gap,
        )

    def passes(self, tolerance: float = 1e-7) -> bool:
        return self.max_violation <= tolerance


# ---------------------------------------------------------------------------
# Cone bookkeeping
# ---------------------------------------------------------------------------


class _ConeIndex:
    # Index arrays per cone family after rotated cones are turned into second-order ones.
    def __init__(self, cones: Sequence[Cone]):
        nonneg: List[int] = []
        starts: Dict[int, List[int]] = defaultdict(list)
        rot_a: List[int] = []
        offset = 0
        for cone in cones:
            if cone.kind is ConeKind.nonnegative:
                nonneg.extend(range(offset, offset + cone.dim))
            else:
                starts[cone.dim].append(offset)
                if cone.kind is ConeKind.rotated_second_order:
                    rot_a.append(offset)
            offset += cone.dim
        self.size = offset
        self.nonneg = np.asarray(nonneg, dtype=np.int64)
        self.soc = [
            np.asarray(group)[:, None] + np.arange(dim)[None, :]
            for dim, group in sorted(starts.items())
        ]
        self.rot_a = np.asarray(rot_a, dtype=np.int64)
        self.rot_b = self.rot_a + 1
        self.degree = self.nonneg.size + sum(idx.shape[0] for idx in self.soc)

        # Sparsity pattern of the block-diagonal scaling Hessian.
        rows = [self.nonneg]
        cols = [self.nonneg]
        for idx in self.soc:
            d = idx.shape[1]
            rows.append(np.repeat(idx, d, axis=1).ravel())
            cols.append(np.tile(idx, (1, d)).ravel())
        self.hess_rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        self.hess_cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)

    def rotation(self) -> sp.csc_matrix:
        # Symmetric orthogonal involution mixing the two heads of every rotated cone.
        n = self.size
        plain = np.setdiff1d(np.arange(n), np.concatenate([self.rot_a, self.rot_b]))
        rows = np.concatenate([plain, self.rot_a, self.rot_a, self.rot_b, self.rot_b])
        cols = np.concatenate([plain, self.rot_a, self.rot_b, self.rot_a, self.rot_b])
        k = self.rot_a.size
        data = np.concatenate([
            np.ones(plain.size),
            np.full(k, _SQRT_HALF), np.full(k, _SQRT_HALF),
            np.full(k, _SQRT_HALF), np.full(k, -_SQRT_HALF),
        ])
        return sp.csc_matrix((data, (rows, cols)), shape=(n, n))

    def identity(self) -> np.ndarray:
        e = np.zeros(self.size)
        e[self.nonneg] = 1.0
        for idx in self.soc:
            e[idx[:, 0]] = 1.0
        return e

    def is_interior(self, v: np.ndarray) -> bool:
        if np.any(v[self.nonneg] <= 0):
            return False
        for idx in self.soc:
            u = v[idx]
            if np.any(u[:, 0] - np.linalg.norm(u[:, 1:], axis=1) <= 0):
                return False
        return True

    def max_step(self, v: np.ndarray, dv: np.ndarray) -> float:
        # Largest alpha with v + alpha*dv in the cone (inf if unbounded).
        alpha = np.inf
        dn = dv[self.nonneg]
        neg = dn < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-v[self.nonneg][neg] / dn[neg])))
        for idx in self.soc:
            u, du = v[idx], dv[idx]
            a = du[:, 0] ** 2 - np.sum(du[:, 1:] ** 2, axis=1)
            b = 2.0 * (u[:, 0] * du[:, 0] - np.sum(u[:, 1:] * du[:, 1:], axis=1))
            c = u[:, 0] ** 2 - np.sum(u[:, 1:] ** 2, axis=1)
            disc = b * b - 4.0 * a * c
            den = -b + np.sqrt(np.maximum(disc, 0.0))
            ok = (disc >= 0) & (den > 0)
            if np.any(ok):
                alpha = min(alpha, float(np.min(2.0 * c[ok] / den[ok])))
        return alpha

    def jordan_product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.size)
        out[self.nonneg] = u[self.nonneg] * v[self.nonneg]
        for idx in self.soc:
            a, b = u[idx], v[idx]
            out[idx[:, 0]] = np.sum(a * b, axis=1)
            out[idx[:, 1:]] = a[:, :1] * b[:, 1:] + b[:, :1] * a[:, 1:]
        return out

    def jordan_divide(self, lam: np.ndarray, r: np.ndarray) -> np.ndarray:
        # Solves lam o d = r for d.
        out = np.zeros(self.size)
        out[self.nonneg] = r[self.nonneg] / lam[self.nonneg]
        for idx in self.soc:
            l, q = lam[idx], r[idx]
            det = l[:, 0] ** 2 - np.sum(l[:, 1:] ** 2, axis=1)
            d0 = (l[:, 0] * q[:, 0] - np.sum(l[:, 1:] * q[:, 1:], axis=1)) / det
            out[idx[:, 0]] = d0
            out[idx[:, 1:]] = (q[:, 1:] - d0[:, None] * l[:, 1:]) / l[:, :1]
        return out


class _Scaling:
    """Nesterov-Todd scaling W with W^-1 x = W s = lam."""

    def __init__(self, cones: _ConeIndex, x: np.ndarray, s: np.ndarray):
        self.cones = cones
        self.w_nonneg = np.sqrt(x[cones.nonneg] / s[cones.nonneg])
        self.blocks: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        for idx in cones.soc:
            u, v = x[idx], s[idx]
            uju = u[:, 0] ** 2 - np.sum(u[:, 1:] ** 2, axis=1)
            vjv = v[:, 0] ** 2 - np.sum(v[:, 1:] ** 2, axis=1)
            if np.any(uju <= 0) or np.any(vjv <= 0):
                raise FloatingPointError("iterate left the second-order cone interior")
            un = u / np.sqrt(uju)[:, None]
            vn = v / np.sqrt(vjv)[:, None]
            gamma = np.sqrt(0.5 * (1.0 + np.sum(un * vn, axis=1)))
            w = np.empty_like(un)
            w[:, 0] = (un[:, 0] + vn[:, 0]) / (2.0 * gamma)
            w[:, 1:] = (un[:, 1:] - vn[:, 1:]) / (2.0 * gamma)[:, None]
            beta = (uju / vjv) ** 0.25
            self.blocks.append((idx, w, beta))
        self.lam = self.apply(s)

    def _bar(self, w: np.ndarray, u: np.ndarray, inverse: bool) -> np.ndarray:
        sign = -1.0 if inverse else 1.0
        w0, w1 = w[:, 0], w[:, 1:]
        dot = np.sum(w1 * u[:, 1:], axis=1)
        out = np.empty_like(u)
        out[:, 0] = w0 * u[:, 0] + sign * dot
        out[:, 1:] = sign * u[:, :1] * w1 + u[:, 1:] + (dot / (1.0 + w0))[:, None] * w1
        return out

    def apply(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        nn = self.cones.nonneg
        out[nn] = self.w_nonneg * u[nn]
        for idx, w, beta in self.blocks:
            out[idx] = beta[:, None] * self._bar(w, u[idx], inverse=False)
        return out

    def apply_inverse(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        nn = self.cones.nonneg
        out[nn] = u[nn] / self.w_nonneg
        for idx, w, beta in self.blocks:
            out[idx] = self._bar(w, u[idx], inverse=True) / beta[:, None]
        return out

    def hessian_data(self) -> np.ndarray:
        # Entries of W^-2 in the pattern of _ConeIndex.hess_rows/hess_cols.
        parts = [1.0 / self.w_nonneg**2]
        for idx, w, beta in self.blocks:
            n, d = idx.shape
            w0, w1 = w[:, 0], w[:, 1:]
            m = np.zeros((n, d, d))
            m[:, 0, 0] = w0
            m[:, 0, 1:] = -w1
            m[:, 1:, 0] = -w1
            m[:, 1:, 1:] = np.eye(d - 1)[None] + np.einsum(
                "ni,nj->nij", w1, w1
            ) / (1.0 + w0)[:, None, None]
            h = np.einsum("nij,njk->nik", m, m) / (beta**2)[:, None, None]
            parts.append(h.reshape(-1))
        return np.concatenate(parts)


class _KKT:
    # Quasi-definite reduced system [[-(H + d I), A'], [A, d I]] with refinement
    # against the unregularized matrix.
    def __init__(self, A: sp.csr_matrix, At: sp.csc_matrix, H: sp.csc_matrix,
                 delta: float, passes: int):
        n, m = At.shape
        self.n = n
        self.delta = delta
        self.passes = passes
        self.K = sp.bmat(
            [[-H - delta * sp.identity(n, format="csc"), At],
             [A, delta * sp.identity(m, format="csc")]],
            format="csc",
        )
        self.lu = splu(self.K, permc_spec="MMD_AT_PLUS_A")

    def solve(self, rx: np.ndarray, ry: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        rhs = np.concatenate([rx, ry])
        z = self.lu.solve(rhs)
        scale = 1.0 + np.linalg.norm(rhs)
        for _ in range(self.passes):
            correction = np.concatenate([self.delta * z[: self.n], -self.delta * z[self.n:]])
            res = rhs - (self.K @ z + correction)
            if np.linalg.norm(res) <= 1e-14 * scale:
                break
            z = z + self.lu.solve(res)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError("non-finite KKT solution")
        return z[: self.n], z[self.n:]


@dataclass
class _Direction:
    dx: np.ndarray
    dy: np.ndarray
    ds: np.ndarray
    dtau: float
    dkappa: float


class _Workspace:
    def __init__(self, problem: ConicProblem, settings: SolverSettings):
        self.problem = problem
        self.settings = settings
        self.cones = _ConeIndex(problem.cones)
        self.T = self.cones.rotation()

        A1 = (problem.equality_matrix @ self.T).tocsr()
        c1 = self.T @ problem.objective
        self.D, self.E = self._equilibrate(A1)
        self.A = (sp.diags(self.D) @ A1 @ sp.diags(self.E)).tocsr()
        self.At = self.A.T.tocsc()
        self.b = self.D * problem.equality_rhs
        self.c = self.E * c1
        self.b_norm = float(np.linalg.norm(problem.equality_rhs))
        self.c_norm = float(np.linalg.norm(problem.objective))

    def _equilibrate(self, A1: sp.csr_matrix) -> Tuple[np.ndarray, np.ndarray]:
        # Ruiz scaling; columns of one second-order cone share a factor so the cone survives.
        m, n = A1.shape
        D = np.ones(m)
        E = np.ones(n)
        for _ in range(self.settings.equilibration_passes):
            M = abs(sp.diags(D) @ A1 @ sp.diags(E)).tocsr()
            if M.nnz == 0:
                break
            rows = M.max(axis=1).toarray().ravel()
            cols = M.max(axis=0).toarray().ravel()
            for idx in self.cones.soc:
                cols[idx] = cols[idx].max(axis=1, keepdims=True)
            rows[rows == 0] = 1.0
            cols[cols == 0] = 1.0
            D /= np.sqrt(np.clip(rows, 1e-8, 1e8))
            E /= np.sqrt(np.clip(cols, 1e-8, 1e8))
        return D, E

    # Map between the internal (rotated, equilibrated) space and the caller's space.
    def to_original(self, x: np.ndarray, y: np.ndarray, s: np.ndarray):
        return self.T @ (self.E * x), self.D * y, self.T @ (s / self.E)

    def to_internal(self, x: np.ndarray, y: np.ndarray, s: np.ndarray):
        return (self.T @ x) / self.E, y / self.D, (self.T @ s) * self.E

    def _measure(self, x: np.ndarray, y: np.ndarray, s: np.ndarray):
        p = self.problem
        pres = float(np.linalg.norm(p.equality_matrix @ x - p.equality_rhs))
        dres = float(np.linalg.norm(p.objective - p.equality_matrix.T @ y - s))
        pcost = float(p.objective @ x)
        dcost = float(p.equality_rhs @ y)
        return pres, dres, pcost, dcost

    def _converged(self, pres: float, dres: float, pcost: float, dcost: float,
                   tolerance: float, gap_tolerance: float) -> bool:
        return (
            pres <= tolerance * (1.0 + self.b_norm)
            and dres <= tolerance * (1.0 + self.c_norm)
            and abs(pcost - dcost) <= gap_tolerance * (1.0 + abs(pcost))
        )

    def _factor(self, H: sp.csc_matrix) -> _KKT:
        delta = self.settings.regularization
        last: Optional[Exception] = None
        for _ in range(self.settings.regularization_retries + 1):
            try:
                return _KKT(self.A, self.At, H, delta, self.settings.refinement_passes)
            except (RuntimeError, FloatingPointError) as exc:
                last = exc
                delta *= 100.0
        raise FloatingPointError(f"KKT factorization failed: {last}")

    def _direction(self, kkt: _KKT, scaling: _Scaling, base: Tuple[np.ndarray, np.ndarray],
                   state, residuals, sigma: float, mu: float,
                   corrector: Optional[_Direction]) -> _Direction:
        x, y, s, tau, kappa = state
        F1, F2, F3 = residuals
        cones = self.cones
        lam = scaling.lam

        r1 = -(1.0 - sigma) * F1
        r2 = -(1.0 - sigma) * F2
        r3 = -(1.0 - sigma) * F3
        rc = -cones.jordan_product(lam, lam) + sigma * mu * cones.identity()
        rtk = -tau * kappa + sigma * mu
        if corrector is not None:
            rc -= cones.jordan_product(
                scaling.apply_inverse(corrector.dx), scaling.apply(corrector.ds)
            )
            rtk -= corrector.dtau * corrector.dkappa

        winv_dc = scaling.apply_inverse(cones.jordan_divide(lam, rc))
        x2, y2 = kkt.solve(r2 - winv_dc, r1)
        x1, y1 = base
        denom = self.c @ x1 - self.b @ y1 - kappa / tau
        dtau = (r3 - self.c @ x2 + self.b @ y2 - rtk / tau) / denom
        dx = x2 + dtau * x1
        dy = y2 + dtau * y1
        ds = winv_dc - scaling.apply_inverse(scaling.apply_inverse(dx))
        dkappa = (rtk - kappa * dtau) / tau
        return _Direction(dx, dy, ds, float(dtau), float(dkappa))

    def _step_to_boundary(self, state, d: _Direction) -> float:
        x, _, s, tau, kappa = state
        alpha = min(self.cones.max_step(x, d.dx), self.cones.max_step(s, d.ds))
        if d.dtau < 0:
            alpha = min(alpha, -tau / d.dtau)
        if d.dkappa < 0:
            alpha = min(alpha, -kappa / d.dkappa)
        return alpha

    def run(self, initial_point=None) -> ConicSolution:
        st = self.settings
        cones = self.cones
        n, m = cones.size, self.b.size
        e = cones.identity()

        x, y, s = e.copy(), np.zeros(m), e.copy()
        if initial_point is not None:
            xi, yi, si = self.to_internal(*[np.asarray(v, dtype=float) for v in initial_point])
            if cones.is_interior(xi) and cones.is_interior(si):
                x, y, s = xi, yi, si
        tau, kappa = 1.0, 1.0

        status: Optional[SolveStatus] = None
        iteration = 0
        hess_pattern = (cones.hess_rows, cones.hess_cols)
        for iteration in range(st.max_iterations + 1):
            xo, yo, so = self.to_original(x / tau, y / tau, s / tau)
            pres, dres, pcost, dcost = self._measure(xo, yo, so)
            if st.verbose:
                _err.print(
                    f"[dim]{iteration:3d}  pcost {pcost: .8e}  dcost {dcost: .8e}  "
                    f"pres {pres:.2e}  dres {dres:.2e}  tau/kappa {tau / kappa:.2e}[/dim]"
                )
            if self._converged(pres, dres, pcost, dcost,
                               st.feasibility_tolerance, st.gap_tolerance):
                status = SolveStatus.optimal
                break
            certificate = self._infeasibility(x, y, s, tau, kappa)
            if certificate is not None:
                status = certificate
                break
            if iteration == st.max_iterations:
                break

            F1 = self.A @ x - self.b * tau
            F2 = self.At @ y + s - self.c * tau
            F3 = float(self.c @ x - self.b @ y + kappa)
            mu = (float(x @ s) + tau * kappa) / (cones.degree + 1)
            state = (x, y, s, tau, kappa)
            try:
                scaling = _Scaling(cones, x, s)
                H = sp.csc_matrix((scaling.hessian_data(), hess_pattern), shape=(n, n))
                kkt = self._factor(H)
                base = kkt.solve(self.c, self.b)
                affine = self._direction(kkt, scaling, base, state, (F1, F2, F3),
                                         0.0, mu, None)
                alpha_aff = min(1.0, self._step_to_boundary(state, affine))
                sigma = float(np.clip((1.0 - alpha_aff) ** 3, 0.0, 1.0))
                d = self._direction(kkt, scaling, base, state, (F1, F2, F3),
                                    sigma, mu, affine)
            except FloatingPointError as exc:
                if st.verbose:
                    _err.print(f"[dim]racegear: solver breakdown: {exc}[/dim]")
                status = SolveStatus.numerical_failure
                break

            alpha = min(1.0, st.step_fraction * self._step_to_boundary(state, d))
            if not np.isfinite(alpha) or alpha < 1e-10:
                status = SolveStatus.numerical_failure
                break
            x = x + alpha * d.dx
            y = y + alpha * d.dy
            s = s + alpha * d.ds
            tau = tau + alpha * d.dtau
            kappa = kappa + alpha * d.dkappa

        if status is None:
            status = SolveStatus.iteration_limit
        if status in (SolveStatus.iteration_limit, SolveStatus.numerical_failure):
            # Accept a stalled iterate when it already meets the reduced tolerance.
            if tau > 0 and self._converged(pres, dres, pcost, dcost,
                                           st.reduced_tolerance, st.reduced_tolerance):
                status = SolveStatus.optimal

        if status in (SolveStatus.primal_infeasible, SolveStatus.dual_infeasible):
            xo, yo, so = self.to_original(x, y, s)
            return ConicSolution(
                status=status, primal=xo, dual_equality=yo, dual_cone=so,
                objective_value=float("nan"), duality_gap=float("nan"),
                primal_residual=pres, dual_residual=dres, iterations=iteration,
            )
        return ConicSolution(
            status=status, primal=xo, dual_equality=yo, dual_cone=so,
            objective_value=pcost, duality_gap=pcost - dcost,
            primal_residual=pres, dual_residual=dres, iterations=iteration,
        )

    def _infeasibility(self, x, y, s, tau, kappa) -> Optional[SolveStatus]:
        if kappa <= tau:
            return None
        tol = self.settings.feasibility_tolerance
        xo, yo, so = self.to_original(x, y, s)
        p = self.problem
        bty = float(p.equality_rhs @ yo)
        if bty > 0:
            farkas = np.linalg.norm(p.equality_matrix.T @ yo + so) / bty
            if farkas <= tol:
                return SolveStatus.primal_infeasible
        ctx = float(p.objective @ xo)
        if ctx < 0:
            ray = np.linalg.norm(p.equality_matrix @ xo) / -ctx
            if ray <= tol:
                return SolveStatus.dual_infeasible
        return None


def solve(
    problem: ConicProblem,
    settings: Optional[SolverSettings] = None,
    initial_point: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None,
) -> ConicSolution:
    """Solve the cone program; deterministic for fixed inputs and settings.

    `initial_point` is an optional (x, y, s) guess in the caller's coordinates; it is
    used only when both x and s lie strictly inside the cone.
    """
    return _Workspace(problem, settings or SolverSettings()).run(initial_point)


# ---------------------------------------------------------------------------
# Independent certification
# ---------------------------------------------------------------------------


def _cone_violation(cones: Sequence[Cone], v: np.ndarray) -> float:
    worst = 0.0
    offset = 0
    for cone in cones:
        block = v[offset:offset + cone.dim]
        offset += cone.dim
        if cone.kind is ConeKind.nonnegative:
            worst = max(worst, float(-block.min()))
        elif cone.kind is ConeKind.second_order:
            worst = max(worst, float(np.linalg.norm(block[1:]) - block[0]))
        else:
            a, b, tail = block[0], block[1], block[2:]
            reach = np.sqrt(2.0 * max(a, 0.0) * max(b, 0.0))
            worst = max(worst, float(-a), float(-b), float(np.linalg.norm(tail) - reach))
    return max(worst, 0.0)


def certify(problem: ConicProblem, solution: ConicSolution) -> CertificateReport:
    """Recompute residuals, cone membership and complementarity from scratch."""
    A = problem.equality_matrix
    b, c = problem.equality_rhs, problem.objective
    x, y, s = solution.primal, solution.dual_equality, solution.dual_cone

    pres = float(np.linalg.norm(A @ x - b))
    dres = float(np.linalg.norm(c - A.T @ y - s))
    pcost = float(c @ x)
    scale = 1.0 + abs(pcost)
    return CertificateReport(
        primal_residual=pres,
        dual_residual=dres,
        primal_cone_violation=_cone_violation(problem.cones, x),
        dual_cone_violation=_cone_violation(problem.cones, s),
        complementarity=abs(float(x @ s)) / scale,
        duality_gap=abs(pcost - float(b @ y)) / scale,
        scaled_primal_residual=pres / (1.0 + np.linalg.norm(b)),
        scaled_dual_residual=dres / (1.0 + np.linalg.norm(c)),
    )


# ---------------------------------------------------------------------------
# Plain-text dump/restore
# ---------------------------------------------------------------------------


def dump_problem(problem: ConicProblem, path: Path) -> None:
    # Sections: header counts, cone list, sparse objective, sparse rhs, matrix triplets.
    path.parent.mkdir(parents=True, exist_ok=True)
    A = problem.equality_matrix.tocoo()
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{DUMP_HEADER}\n")
        fh.write(f"variables {problem.variable_count}\n")
        fh.write(f"constraints {problem.constraint_count}\n")
        fh.write(f"cones {len(problem.cones)}\n")
        for cone in problem.cones:
            fh.write(f"{cone.kind.value} {cone.dim}\n")
        nz = np.flatnonzero(problem.objective)
        fh.write(f"objective {nz.size}\n")
        for i in nz:
            fh.write(f"{i} {float(problem.objective[i])!r}\n")
        nz = np.flatnonzero(problem.equality_rhs)
        fh.write(f"rhs {nz.size}\n")
        for j in nz:
            fh.write(f"{j} {float(problem.equality_rhs[j])!r}\n")
        fh.write(f"matrix {A.nnz}\n")
        for r, col, v in zip(A.row, A.col, A.data):
            fh.write(f"{r} {col} {float(v)!r}\n")
        fh.write("end\n")


def load_problem(path: Path) -> ConicProblem:
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
    if not lines or lines[0] != DUMP_HEADER:
        raise ValidationError(f"{path} is not a racegear conic problem dump")
    pos = 1

    def section(name: str) -> int:
        nonlocal pos
        key, count = lines[pos].split()
        if key != name:
            raise ValidationError(f"{path}: expected section '{name}', found '{key}'")
        pos += 1
        return int(count)

    n = section("variables")
    m = section("constraints")
    cones = []
    for _ in range(section("cones")):
        kind, dim = lines[pos].split()
        cones.append(Cone(ConeKind(kind), int(dim)))
        pos += 1
    c = np.zeros(n)
    for _ in range(section("objective")):
        i, v = lines[pos].split()
        c[int(i)] = float(v)
        pos += 1
    b = np.zeros(m)
    for _ in range(section("rhs")):
        j, v = lines[pos].split()
        b[int(j)] = float(v)
        pos += 1
    rows, cols, data = [], [], []
    for _ in range(section("matrix")):
        r, col, v = lines[pos].split()
        rows.append(int(r))
        cols.append(int(col))
        data.append(float(v))
        pos += 1
    A = sp.csr_matrix((data, (rows, cols)), shape=(m, n))
    return ConicProblem(objective=c, equality_matrix=A, equality_rhs=b, cones=tuple(cones))
