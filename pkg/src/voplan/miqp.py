"""Big-M mixed-integer QP assembly and exact branch-and-bound.

The per-agent horizon problem is condensed onto the stacked input vector
U = (u_0, ..., u_{N-1}): predicted means are affine in U, so the tracking
cost is a dense QP and every tightened collision constraint is one linear
row.  Rows belonging to the same disjunction ("at least one cone side /
polygon edge holds") carry one binary each; branch-and-bound enforces one
member per violated disjunction and bounds nodes with the plain QP that
simply drops the undecided disjunctions, which at big-M scale is the same
relaxation the [0,1]-relaxed binaries induce on U.
"""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .chance import TightenedConstraint
from .dynamics import NU, NX, AgentModel
from .errors import AssemblyError, GuardError
from .qp import ActiveSetWorkspace, QpProblem

log = logging.getLogger(__name__)

DEFAULT_BIG_M = 1e4
ROW_TOL = 1e-7            # member satisfaction tolerance, above the QP's 1e-8
Z_TOL = 1e-6              # activated binaries satisfy their row within this
PRUNE_TOL = 1e-6          # node pruned when bound >= incumbent - PRUNE_TOL
ENUMERATE_CAP = 20

_STATE_MAP_CACHE: dict = {}
_COST_CACHE: dict = {}
_CHOL_CACHE: dict = {}


@dataclass
class DisjunctionMember:
    row: np.ndarray
    rhs: float
    binary_id: int = -1


@dataclass
class Disjunction:
    """At least ``min_active`` of the member rows must hold."""

    members: list[DisjunctionMember]
    label: tuple = ()
    min_active: int = 1


@dataclass
class AgentProblem:
    """Everything one agent needs for one horizon solve."""

    model: AgentModel
    x0_mean: np.ndarray
    x_ref: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Q_N: np.ndarray
    horizon: int
    velocity_constraints: list[list[TightenedConstraint]] = field(default_factory=list)
    position_constraints: list[list[TightenedConstraint]] = field(default_factory=list)
    big_m: float = DEFAULT_BIG_M


@dataclass
class MiqpProblem:
    qp: QpProblem
    disjunctions: list[Disjunction]
    M: float
    binary_count: int
    # flattened member rows for vectorized bookkeeping: member i of
    # disjunction d lives at row member_offsets[d] + i
    member_rows: np.ndarray = field(default=None, repr=False)
    member_rhs: np.ndarray = field(default=None, repr=False)
    member_offsets: np.ndarray = field(default=None, repr=False)
    member_margins: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.member_rows is None:
            rows, rhs, offsets = [], [], []
            at = 0
            for d in self.disjunctions:
                offsets.append(at)
                for mem in d.members:
                    rows.append(mem.row)
                    rhs.append(mem.rhs)
                    at += 1
            self.member_rows = (np.asarray(rows, dtype=float).reshape(at, -1)
                                if at else np.zeros((0, self.qp.n)))
            self.member_rhs = np.asarray(rhs, dtype=float)
            self.member_offsets = np.asarray(offsets + [at], dtype=int)
        if self.member_margins is None:
            self.member_margins = np.zeros(len(self.member_rhs))


@dataclass
class MiqpSolution:
    u: np.ndarray
    z: np.ndarray
    objective: float
    status: str               # Optimal | Infeasible | TimeBudgetExceeded
    nodes_explored: int
    wall_time: float


def input_to_state_maps(model: AgentModel, horizon: int):
    """Affine mean-propagation maps: mean_k = S[k] @ U + powers[k] @ x0.

    S has shape (N+1, 4, 2N) with S[k][:, 2l:2l+2] = A^(k-l-1) B for l < k.
    Cached per (tau_s, horizon): the double-integrator A, B are functions of
    the sampling interval alone.
    """
    key = (round(model.tau_s, 12), horizon)
    hit = _STATE_MAP_CACHE.get(key)
    if hit is not None:
        return hit
    n = horizon
    powers = [np.eye(NX)]
    for _ in range(n):
        powers.append(model.A @ powers[-1])
    s = np.zeros((n + 1, NX, NU * n))
    for k in range(1, n + 1):
        for l in range(k):
            s[k][:, NU * l:NU * (l + 1)] = powers[k - l - 1] @ model.B
    powers = np.stack(powers)
    s.setflags(write=False)
    powers.setflags(write=False)
    _STATE_MAP_CACHE[key] = (s, powers)
    return s, powers


def assemble(agent_problem: AgentProblem) -> MiqpProblem:
    """Condense the horizon problem into a MiqpProblem over stacked inputs."""
    ap = agent_problem
    n = ap.horizon
    if n < 1:
        raise AssemblyError("horizon must be >= 1")
    if ap.x0_mean.shape != (NX,) or ap.x_ref.shape != (NX,):
        raise AssemblyError("state vectors must have dimension 4")
    for w, shape in ((ap.Q, (NX, NX)), (ap.Q_N, (NX, NX)), (ap.R, (NU, NU))):
        if np.asarray(w).shape != shape:
            raise AssemblyError("weight matrix dimensions inconsistent")

    s, powers = input_to_state_maps(ap.model, n)
    drift = powers @ ap.x0_mean

    dim = NU * n
    cost_key = (round(ap.model.tau_s, 12), n, ap.Q.tobytes(), ap.R.tobytes(),
                ap.Q_N.tobytes())
    h_mat = _COST_CACHE.get(cost_key)
    if h_mat is None:
        h_mat = np.zeros((dim, dim))
        for k in range(1, n + 1):
            w = ap.Q_N if k == n else ap.Q
            h_mat += 2.0 * s[k].T @ w @ s[k]
        for l in range(n):
            h_mat[NU * l:NU * (l + 1), NU * l:NU * (l + 1)] += 2.0 * ap.R
        h_mat = 0.5 * (h_mat + h_mat.T)
        h_mat.setflags(write=False)
        _COST_CACHE[cost_key] = h_mat
    f_vec = np.zeros(dim)
    for k in range(1, n + 1):
        w = ap.Q_N if k == n else ap.Q
        f_vec += 2.0 * s[k].T @ (w @ (drift[k] - ap.x_ref))

    # state bounds on the predicted mean become rows over U; rows that no
    # box-feasible input sequence can violate are dropped outright
    lb = np.tile(ap.model.u_min, n)
    ub = np.tile(ap.model.u_max, n)
    rows, rhs = [], []
    for k in range(1, n + 1):
        for d in range(NX):
            if np.isfinite(ap.model.x_max[d]):
                rows.append(s[k][d])
                rhs.append(ap.model.x_max[d] - drift[k][d])
            if np.isfinite(ap.model.x_min[d]):
                rows.append(-s[k][d])
                rhs.append(drift[k][d] - ap.model.x_min[d])
    g_base = np.asarray(rows).reshape(-1, dim)
    h_base = np.asarray(rhs, dtype=float)
    if len(h_base):
        peak = np.sum(np.maximum(g_base * lb, g_base * ub), axis=1)
        keep = peak > h_base - 1e-9
        g_base = g_base[keep]
        h_base = h_base[keep]

    qp = QpProblem(h_mat, f_vec, g_base, h_base, lb, ub)
    chol = _CHOL_CACHE.get(cost_key)
    if chol is None:
        chol = qp.cholesky()
        _CHOL_CACHE[cost_key] = chol
    else:
        qp._chol = chol

    disjunctions: list[Disjunction] = []
    flat_rows: list[np.ndarray] = []
    flat_rhs: list[float] = []
    binary_id = 0
    groups = (("velocity", ap.model.L_v, ap.velocity_constraints),
              ("position", ap.model.L_p, ap.position_constraints))
    for kind, selector, constraint_groups in groups:
        if not constraint_groups:
            continue
        sel_s = selector @ s            # (N+1, 2, dim)
        sel_drift = drift @ selector.T  # (N+1, 2)
        for group in constraint_groups:
            members = []
            for tc in group:
                k = tc.timestep
                if not 1 <= k <= n:
                    raise AssemblyError(f"constraint timestep {k} outside horizon")
                if tc.space != kind:
                    raise AssemblyError(f"{tc.space} constraint in {kind} group")
                row = -(tc.normal @ sel_s[k])
                r = float(tc.normal @ sel_drift[k]) - (tc.offset + tc.margin)
                members.append(DisjunctionMember(row=row, rhs=r, binary_id=binary_id))
                flat_rows.append(row)
                flat_rhs.append(r)
                binary_id += 1
            if members:
                label = group[0].source + (group[0].timestep,)
                disjunctions.append(Disjunction(members=members, label=label))

    member_rows = (np.asarray(flat_rows).reshape(binary_id, dim)
                   if binary_id else np.zeros((0, dim)))
    member_rhs = np.asarray(flat_rhs, dtype=float)
    margins = np.asarray([tc.margin
                          for groups in (ap.velocity_constraints,
                                         ap.position_constraints)
                          for group in groups for tc in group], dtype=float)
    offsets = np.zeros(len(disjunctions) + 1, dtype=int)
    for i, d in enumerate(disjunctions):
        offsets[i + 1] = offsets[i] + len(d.members)

    _audit_big_m(member_rows, member_rhs, lb, ub, ap.big_m)
    return MiqpProblem(qp=qp, disjunctions=disjunctions, M=ap.big_m,
                       binary_count=binary_id, member_rows=member_rows,
                       member_rhs=member_rhs, member_offsets=offsets,
                       member_margins=margins)


def scale_margins(problem: MiqpProblem, scale: float) -> MiqpProblem:
    """Copy of the problem with every tightening margin multiplied by scale.

    scale=1 is the original; scale=0 keeps only the deterministic cone and
    edge constraints.  Used by the planner's feasibility-restoration ladder.
    """
    new_rhs = problem.member_rhs + (1.0 - scale) * problem.member_margins
    disjunctions = []
    at = 0
    for d in problem.disjunctions:
        members = []
        for mem in d.members:
            members.append(DisjunctionMember(row=mem.row, rhs=float(new_rhs[at]),
                                             binary_id=mem.binary_id))
            at += 1
        disjunctions.append(Disjunction(members=members, label=d.label,
                                        min_active=d.min_active))
    return MiqpProblem(qp=problem.qp, disjunctions=disjunctions, M=problem.M,
                       binary_count=problem.binary_count,
                       member_rows=problem.member_rows, member_rhs=new_rhs,
                       member_offsets=problem.member_offsets,
                       member_margins=problem.member_margins * scale)


def _audit_big_m(member_rows, member_rhs, lb, ub, big_m):
    if not len(member_rows):
        return
    peak = np.sum(np.maximum(member_rows * lb, member_rows * ub), axis=1) - member_rhs
    worst = float(np.max(peak))
    if worst > big_m:
        log.warning("big-M %.3g below worst-case member violation %.3g",
                    big_m, worst)


def _member_index(problem: MiqpProblem, disjunction: int, member: int) -> int:
    return int(problem.member_offsets[disjunction]) + member


def leaf_qp(problem: MiqpProblem, member_ids) -> QpProblem:
    """Base QP plus the selected member rows, sharing the cached factor."""
    base = problem.qp
    if len(member_ids):
        g = np.vstack([base.G, problem.member_rows[member_ids]])
        h = np.concatenate([base.h, problem.member_rhs[member_ids]])
    else:
        g, h = base.G, base.h
    qp = QpProblem(base.H, base.f, g, h, base.lb, base.ub)
    qp._chol = base.cholesky()
    return qp


def _assignment_z(problem: MiqpProblem, u: np.ndarray) -> np.ndarray:
    """Binary vector marking every member satisfied at u."""
    if problem.binary_count == 0:
        return np.zeros(0)
    return (problem.member_rows @ u - problem.member_rhs <= Z_TOL).astype(float)


class _Search:
    """Shared machinery for the branch-and-bound node solves."""

    def __init__(self, problem: MiqpProblem):
        self.problem = problem
        self.solver = ActiveSetWorkspace()
        self.base_m = problem.qp.G.shape[0]
        self.nodes = 0

    def member_ids(self, decisions) -> list[int]:
        return [_member_index(self.problem, i, m)
                for i, m in enumerate(decisions) if m >= 0]

    def solve(self, decisions, warm_x=None, warm_rows=None):
        """warm_rows: active rows as (base_idx | ('m', member_id) | ('b', k))."""
        ids = self.member_ids(decisions)
        qp = leaf_qp(self.problem, ids)
        w0 = None
        if warm_rows is not None:
            w0 = self._translate(warm_rows, ids)
        sol = self.solver.solve(qp, warm_start=warm_x, warm_working_set=w0)
        self.nodes += 1
        return sol, ids

    def tag_rows(self, sol, ids) -> list:
        """Re-encode a solution's active rows independent of the leaf layout."""
        tags = []
        m_here = self.base_m + len(ids)
        for idx in sol.active_set:
            if idx < self.base_m:
                tags.append(idx)
            elif idx < m_here:
                tags.append(("m", ids[idx - self.base_m]))
            else:
                tags.append(("b", idx - m_here))
        return tags

    def _translate(self, tags, ids) -> list[int]:
        pos = {mid: i for i, mid in enumerate(ids)}
        out = []
        for tag in tags:
            if isinstance(tag, tuple):
                kind, v = tag
                if kind == "m":
                    i = pos.get(v)
                    if i is not None:
                        out.append(self.base_m + i)
                else:
                    out.append(self.base_m + len(ids) + v)
            else:
                out.append(tag)
        return out

    def violations(self, decisions, u):
        """Undecided disjunctions with every member violated at u.

        Returns [(disjunction_index, [(member_index, violation), ...]), ...].
        """
        p = self.problem
        if p.binary_count == 0:
            return []
        viol = p.member_rows @ u - p.member_rhs
        worst = np.minimum.reduceat(viol, p.member_offsets[:-1])
        out = []
        for i in np.flatnonzero(worst > ROW_TOL):
            i = int(i)
            if decisions[i] >= 0:
                continue
            lo = int(p.member_offsets[i])
            hi = int(p.member_offsets[i + 1])
            out.append((i, [(m, float(viol[lo + m])) for m in range(hi - lo)]))
        return out


def branch_and_bound(problem: MiqpProblem,
                     warm_assignment: dict | None = None,
                     node_limit: int | None = None,
                     time_limit: float | None = None,
                     bail_without_incumbent: int | None = None,
                     greedy_rounds: int = 8) -> MiqpSolution:
    """Exact solve over the disjunction binaries.

    Depth-first until the first incumbent, then best-first on node bounds.
    Node relaxations drop undecided disjunctions, which is a valid lower
    bound; violated disjunctions are branched member-by-member with
    deterministic ordering (violation, then member index).  A shifted
    previous assignment and a greedy rounding dive seed the incumbent so the
    search is mostly a pruning pass in the receding-horizon loop.
    """
    t0 = time.perf_counter()
    search = _Search(problem)
    nd = len(problem.disjunctions)
    incumbent_u = None
    incumbent_obj = np.inf

    # probe the shifted previous assignment as an incumbent heuristic
    if warm_assignment and nd:
        probe = [warm_assignment.get(d.label, -1) for d in problem.disjunctions]
        sol, _ = search.solve(probe)
        if sol.status == "Optimal" and not search.violations(probe, sol.z):
            incumbent_u, incumbent_obj = sol.z, sol.objective

    # greedy rounding: repeatedly enforce the least-violated member of every
    # violated disjunction
    if incumbent_u is None and nd:
        decisions = [-1] * nd
        warm_x = warm_rows = None
        for _ in range(greedy_rounds):
            sol, ids = search.solve(decisions, warm_x, warm_rows)
            if sol.status != "Optimal":
                break
            violated = search.violations(decisions, sol.z)
            if not violated:
                incumbent_u, incumbent_obj = sol.z, sol.objective
                break
            for i, viols in violated:
                decisions[i] = min(viols, key=lambda mv: (mv[1], mv[0]))[0]
            warm_x, warm_rows = sol.z, search.tag_rows(sol, ids)

    root = tuple([-1] * nd)
    frontier = [(-np.inf, 0, root, None, None)]
    seq = 1
    best_first = incumbent_u is not None
    status = "Optimal"

    while frontier:
        if best_first:
            idx = min(range(len(frontier)),
                      key=lambda i: (frontier[i][0], frontier[i][1]))
        else:
            idx = len(frontier) - 1
        bound, _, decisions, warm_x, warm_rows = frontier.pop(idx)
        if bound >= incumbent_obj - PRUNE_TOL:
            continue
        if node_limit is not None and search.nodes >= node_limit:
            status = "TimeBudgetExceeded"
            break
        if (bail_without_incumbent is not None and incumbent_u is None
                and search.nodes >= bail_without_incumbent):
            # planner context: the rounding dive already failed, so a
            # feasible assignment is unlikely; cut to the slack fallback
            status = "TimeBudgetExceeded"
            break
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            status = "TimeBudgetExceeded"
            break

        sol, ids = search.solve(list(decisions), warm_x, warm_rows)
        if sol.status != "Optimal":
            continue                       # infeasible or stalled: prune
        if sol.objective >= incumbent_obj - PRUNE_TOL:
            continue
        violated = search.violations(decisions, sol.z)
        if not violated:
            incumbent_u, incumbent_obj = sol.z, sol.objective
            best_first = True
            continue

        # branch on the disjunction whose best member is most violated
        scores = [(min(v for _, v in viols), i) for i, viols in violated]
        _, branch_idx = max(scores, key=lambda t: (t[0], -t[1]))
        viols = dict(violated)[branch_idx]
        children = sorted(viols, key=lambda mv: (mv[1], mv[0]))
        tags = search.tag_rows(sol, ids)
        for member_idx, _ in reversed(children):
            child = list(decisions)
            child[branch_idx] = member_idx
            frontier.append((sol.objective, seq, tuple(child), sol.z, tags))
            seq += 1

    wall = time.perf_counter() - t0
    if incumbent_u is None:
        return MiqpSolution(u=np.zeros(problem.qp.n),
                            z=np.zeros(problem.binary_count), objective=np.inf,
                            status="Infeasible" if status == "Optimal" else status,
                            nodes_explored=search.nodes, wall_time=wall)
    return MiqpSolution(u=incumbent_u, z=_assignment_z(problem, incumbent_u),
                        objective=incumbent_obj, status=status,
                        nodes_explored=search.nodes, wall_time=wall)


def enumerate_oracle(problem: MiqpProblem) -> MiqpSolution:
    """Brute force over all binary assignments with >=1 active member each."""
    if problem.binary_count > ENUMERATE_CAP:
        raise GuardError(f"binary_count {problem.binary_count} above enumeration cap")
    t0 = time.perf_counter()
    solver = ActiveSetWorkspace()
    best = None
    best_obj = np.inf
    best_z = None
    nodes = 0

    per_disjunction = []
    for di, d in enumerate(problem.disjunctions):
        m = len(d.members)
        subsets = [[_member_index(problem, di, i) for i in range(m) if mask >> i & 1]
                   for mask in range(1, 1 << m)]
        per_disjunction.append(subsets)

    for combo in itertools.product(*per_disjunction):
        ids = [i for subset in combo for i in subset]
        z = np.zeros(problem.binary_count)
        z[ids] = 1.0
        sol = solver.solve(leaf_qp(problem, ids))
        nodes += 1
        if sol.status == "Optimal" and sol.objective < best_obj - 1e-12:
            best, best_obj, best_z = sol.z, sol.objective, z

    wall = time.perf_counter() - t0
    if best is None:
        return MiqpSolution(u=np.zeros(problem.qp.n),
                            z=np.zeros(problem.binary_count), objective=np.inf,
                            status="Infeasible", nodes_explored=nodes, wall_time=wall)
    return MiqpSolution(u=best, z=best_z, objective=best_obj, status="Optimal",
                        nodes_explored=nodes, wall_time=wall)
