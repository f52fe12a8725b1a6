"""Dense convex QP solver: min 1/2 z'Hz + f'z  s.t.  Gz <= h, lb <= z <= ub.

Primal active-set method with a phase-1 feasibility stage.  Exact-ish leaf
solutions and cheap warm starts matter more here than raw scaling: the
branch-and-bound layer re-solves near-identical problems with one extra row
at a time, and node pruning needs trustworthy objectives.

Instances of :class:`ActiveSetWorkspace` hold mutable scratch state and are
not shareable across threads; the module-level :func:`solve_qp` creates one
per call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimensionError

try:
    from ._askernel import HAVE_NUMBA, active_set_kernel as _kernel

    if not HAVE_NUMBA:
        _kernel = None
except ImportError:      # pragma: no cover
    _kernel = None

INF_BOUND = 1e19          # sentinel magnitude for infinite bounds
DEFAULT_SIGMA = 1e-9      # Tikhonov floor added to H before factorization
FEAS_TOL = 1e-8           # primal feasibility tolerance
OPT_TOL = 1e-9            # dual (multiplier) tolerance
PHASE1_INFEAS = 1e-6      # phase-1 objective above this certifies infeasibility


def regularize(h_matrix: np.ndarray, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """H + sigma*I, strictly positive definite for PSD input."""
    h_matrix = np.asarray(h_matrix, dtype=float)
    return h_matrix + sigma * np.eye(h_matrix.shape[0])


@dataclass
class QpProblem:
    """Problem data; infinite bounds may be +-inf or +-INF_BOUND."""

    H: np.ndarray
    f: np.ndarray
    G: np.ndarray
    h: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        self.G = np.asarray(self.G, dtype=float).reshape(-1, self.H.shape[0])
        self.h = np.asarray(self.h, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        n = self.H.shape[0]
        if self.H.shape != (n, n) or self.f.shape != (n,):
            raise DimensionError("H/f dimensions inconsistent")
        if self.G.shape[0] != self.h.shape[0]:
            raise DimensionError("G/h dimensions inconsistent")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise DimensionError("bound dimensions inconsistent")
        if np.max(np.abs(self.H - self.H.T)) > 1e-9:
            raise DimensionError("H must be symmetric within 1e-9")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def cholesky(self) -> np.ndarray:
        """Cached lower Cholesky factor of the regularized Hessian."""
        if self._chol is None:
            hreg = regularize(0.5 * (self.H + self.H.T))
            try:
                self._chol = scipy.linalg.cholesky(hreg, lower=True)
            except scipy.linalg.LinAlgError:
                self._chol = scipy.linalg.cholesky(
                    regularize(hreg, 1e-6), lower=True)
        return self._chol


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    status: str                 # "Optimal" | "Infeasible" | "MaxIter"
    kkt_residual: float
    iterations: int
    active_set: tuple = ()


def _finite_rows(problem: QpProblem) -> tuple[np.ndarray, np.ndarray]:
    """All inequality rows with finite bounds folded in as +-e_i rows."""
    n = problem.n
    rows = [problem.G]
    rhs = [problem.h]
    eye = np.eye(n)
    ub_mask = problem.ub < INF_BOUND
    lb_mask = problem.lb > -INF_BOUND
    if np.any(ub_mask):
        rows.append(eye[ub_mask])
        rhs.append(problem.ub[ub_mask])
    if np.any(lb_mask):
        rows.append(-eye[lb_mask])
        rhs.append(-problem.lb[lb_mask])
    return np.vstack(rows), np.concatenate(rhs)


class ActiveSetWorkspace:
    """One solver instance; reusable, not thread-shareable."""

    def __init__(self, max_iter: int | None = None):
        self.max_iter = max_iter

    def solve(self, problem: QpProblem,
              warm_start: np.ndarray | None = None,
              warm_working_set=None) -> QpSolution:
        g_all, h_all = _finite_rows(problem)
        chol = problem.cholesky()
        n = problem.n

        x0 = self._starting_point(problem, chol, warm_start)
        viol = self._max_violation(g_all, h_all, x0)
        iters_phase1 = 0
        if viol > FEAS_TOL:
            x0 = self._projection_sweeps(g_all, h_all, x0)
            viol = self._max_violation(g_all, h_all, x0)
        if viol > FEAS_TOL:
            x0, phase1_obj, iters_phase1, ok = self._phase1(g_all, h_all, x0)
            if not ok:
                return QpSolution(z=x0, objective=math.inf, status="MaxIter",
                                  kkt_residual=math.inf, iterations=iters_phase1)
            if (self._max_violation(g_all, h_all, x0) > FEAS_TOL
                    and phase1_obj > PHASE1_INFEAS):
                return QpSolution(z=x0, objective=math.inf, status="Infeasible",
                                  kkt_residual=phase1_obj, iterations=iters_phase1)

        w0: list[int] = []
        if warm_working_set:
            resid = g_all @ x0 - h_all
            w0 = sorted({int(i) for i in warm_working_set
                         if 0 <= i < len(h_all) and abs(resid[int(i)]) <= 1e-6})
            w0 = w0[:n - 1]
        elif len(h_all):
            # seed with rows the start point already sits on (projection
            # sweeps and warm starts leave iterates exactly on boundaries)
            resid = g_all @ x0 - h_all
            near = np.flatnonzero(np.abs(resid) <= 1e-10)
            w0 = [int(i) for i in near[:n - 1]]

        x, lam, work, status, iters = self._active_set(
            problem.f, g_all, h_all, x0, chol=chol, w0=w0)
        obj = float(0.5 * x @ problem.H @ x + problem.f @ x)
        kkt = self._kkt_residual(problem, g_all, h_all, x, lam, work)
        return QpSolution(z=x, objective=obj, status=status, kkt_residual=kkt,
                          iterations=iters + iters_phase1,
                          active_set=tuple(work))

    # internals

    @staticmethod
    def _max_violation(g_all, h_all, x) -> float:
        if g_all.shape[0] == 0:
            return 0.0
        return float(np.max(g_all @ x - h_all, initial=0.0))

    @staticmethod
    def _starting_point(problem, chol, warm_start):
        if warm_start is not None:
            x = np.asarray(warm_start, dtype=float).copy()
        else:
            x = scipy.linalg.cho_solve((chol, True), -problem.f,
                                       check_finite=False)
        return np.clip(x, np.maximum(problem.lb, -INF_BOUND),
                       np.minimum(problem.ub, INF_BOUND))

    @staticmethod
    def _projection_sweeps(g_all, h_all, x, sweeps: int = 200):
        """Cyclic projection onto violated rows (cheap feasibility repair).

        Warm starts from a parent branch-and-bound node typically violate a
        single fresh row; a few Kaczmarz projections restore feasibility
        without a full phase-1 solve.
        """
        norms2 = np.einsum("ij,ij->i", g_all, g_all)
        for _ in range(sweeps):
            resid = g_all @ x - h_all
            i = int(np.argmax(resid))
            if resid[i] <= 0.5 * FEAS_TOL:
                break
            x = x - (resid[i] / norms2[i]) * g_all[i]
        return x

    def _phase1(self, g_all, h_all, x0):
        """Minimize the uniform relaxation level t of all rows.

        Augmented problem in (x, t):

            min  mu/2 |x - x0|^2 + 1/2 t^2 + t   s.t.  Gx - h <= t, t >= 0.

        For a feasible problem the linear term drives t to exactly 0 (the
        mu-weighted projection cost is far below the unit reward on t), so
        the returned objective t* doubles as an infeasibility certificate.
        """
        n = x0.shape[0]
        m = g_all.shape[0]
        mu = 1e-4
        h1 = np.diag(np.concatenate([np.full(n, mu), [1.0]]))
        f1 = np.concatenate([-mu * x0, [1.0]])
        g1 = np.hstack([g_all, -np.ones((m, 1))])
        g1 = np.vstack([g1, np.zeros((1, n + 1))])
        g1[-1, -1] = -1.0                      # t >= 0
        h1_rhs = np.concatenate([h_all, [0.0]])
        t0 = self._max_violation(g_all, h_all, x0) + 1.0
        z0 = np.concatenate([x0, [t0]])
        chol1 = scipy.linalg.cholesky(regularize(h1), lower=True)
        z, _, _, status, iters = self._active_set(f1, g1, h1_rhs, z0, chol=chol1)
        return z[:n], float(z[-1]), iters, status == "Optimal"

    def _active_set(self, f, g_all, h_all, x0, chol, w0=None):
        """Primal active-set iteration from a feasible x0."""
        n = x0.shape[0]
        m = g_all.shape[0]
        max_iter = self.max_iter or min(max(120, 3 * n), 400)

        if _kernel is not None:
            try:
                x, lam, work, nw, code, it = _kernel(
                    np.ascontiguousarray(chol), np.ascontiguousarray(f),
                    np.ascontiguousarray(g_all), np.ascontiguousarray(h_all),
                    np.ascontiguousarray(x0, dtype=float),
                    np.asarray(w0 or [], dtype=np.int64),
                    max_iter, OPT_TOL, 1e-11)
                status = "Optimal" if code == 0 else "MaxIter"
                return x, lam[:nw], [int(w) for w in work[:nw]], status, it
            except Exception:
                pass                    # singular subsystem: interpreted path

        x = x0.copy()
        work: list[int] = list(w0 or [])
        lam = np.zeros(0)
        gx = None                        # cached g_all @ x, updated per step

        for it in range(1, max_iter + 1):
            grad = chol @ (chol.T @ x) + f   # H_reg x + f
            if work:
                gw = g_all[work]
                sol = scipy.linalg.cho_solve(
                    (chol, True), np.column_stack([gw.T, -grad]),
                    check_finite=False)
                y = sol[:, :-1]              # H^-1 Gw'
                q = sol[:, -1]               # H^-1 (-grad)
                s = gw @ y
                # working sets here can be linearly dependent (cone rows are
                # combinations of same-step velocity bounds); a small ridge
                # keeps the multipliers finite and splits duplicates evenly
                ridge = 1e-10 * max(float(np.max(np.diagonal(s))), 1.0)
                s[np.diag_indices_from(s)] += ridge
                r = h_all[work] - gw @ x
                rhs = gw @ q - r
                try:
                    lam = scipy.linalg.solve(s, rhs, assume_a="pos",
                                             check_finite=False)
                except scipy.linalg.LinAlgError:
                    lam = np.linalg.lstsq(s, rhs, rcond=None)[0]
                p = q - y @ lam
            else:
                lam = np.zeros(0)
                p = scipy.linalg.cho_solve((chol, True), -grad,
                                           check_finite=False)

            if np.max(np.abs(p), initial=0.0) <= 1e-11 * (1.0 + np.max(np.abs(x))):
                if lam.size == 0 or np.min(lam) >= -OPT_TOL:
                    return x, lam, work, "Optimal", it
                # drop: most negative multiplier, ties to lowest row index
                lam_min = np.min(lam)
                cand = [work[i] for i in range(len(work))
                        if lam[i] <= lam_min + 1e-12]
                drop = min(cand)
                idx = work.index(drop)
                work.pop(idx)
                continue

            # ratio test over rows not in the working set
            alpha = 1.0
            blocking = -1
            if m:
                gp = g_all @ p
                if gx is None:
                    gx = g_all @ x
                mask = gp > 1e-13
                if work:
                    mask[work] = False
                if np.any(mask):
                    slack = np.maximum(h_all[mask] - gx[mask], 0.0)
                    ratios = slack / gp[mask]
                    amin = float(np.min(ratios))
                    if amin < alpha - 1e-15:
                        alpha = amin
                        rows = np.flatnonzero(mask)
                        # deterministic: lowest row index among the tied minima
                        blocking = int(rows[np.flatnonzero(ratios <= amin + 1e-15)[0]])
                gx = gx + alpha * gp
            x = x + alpha * p
            if blocking >= 0:
                work.append(blocking)
                work.sort()

        return x, lam, work, "MaxIter", max_iter

    @staticmethod
    def _kkt_residual(problem, g_all, h_all, x, lam, work) -> float:
        grad = problem.H @ x + problem.f
        if work and len(lam) == len(work):
            grad = grad + g_all[list(work)].T @ np.maximum(lam, 0.0)
        stat = float(np.max(np.abs(grad), initial=0.0))
        feas = float(np.max(g_all @ x - h_all, initial=0.0)) if len(h_all) else 0.0
        comp = 0.0
        if len(lam) == len(work):
            for i, row in enumerate(work):
                comp = max(comp, abs(lam[i] * (g_all[row] @ x - h_all[row])))
        return max(stat, feas, comp)


def solve_qp(problem: QpProblem,
             warm_start: np.ndarray | None = None) -> QpSolution:
    """Solve one QP with a fresh workspace."""
    return ActiveSetWorkspace().solve(problem, warm_start)
