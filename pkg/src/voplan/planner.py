"""Per-agent receding-horizon planning loop.

Each step: predict every neighbor forward under constant velocity, rebuild
the velocity-obstacle cones at the predicted geometry for every horizon
timestep, tighten them against the propagated state covariance, assemble
the big-M mixed-integer QP, solve it, and apply the first input.  Agents
never communicate; they only observe current neighbor states.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import chance
from .chance import TightenedConstraint, allocate_risk, allocate_static_risk
from .dynamics import NU, AgentModel, GaussianBelief, covariance_horizon, make_agent_model
from .errors import ZeroNeighborsError
from .geometry import PolygonObstacle, inflate_polygon
from .miqp import (
    DEFAULT_BIG_M,
    AgentProblem,
    MiqpSolution,
    assemble,
    branch_and_bound,
    scale_margins,
)

SCALE_LADDER = (1.0, 0.25, 0.0)
from .qp import ActiveSetWorkspace, QpProblem, solve_qp

TABLE_Q = (10.0, 10.0, 0.1, 0.1)
TABLE_QN = (10.0, 10.0, 0.0, 0.0)
TABLE_R = (0.1, 0.1)


@dataclass
class AgentConfig:
    model: AgentModel
    x_ref: np.ndarray
    delta: float = 0.1
    epsilon: float = 0.01
    horizon: int = 20
    Q: np.ndarray = field(default_factory=lambda: np.diag(TABLE_Q))
    R: np.ndarray = field(default_factory=lambda: np.diag(TABLE_R))
    Q_N: np.ndarray = field(default_factory=lambda: np.diag(TABLE_QN))
    sensing_radius: float = math.inf
    big_m: float = DEFAULT_BIG_M
    node_limit: int | None = 12

    @classmethod
    def for_goal(cls, goal, model: AgentModel | None = None, **kw) -> "AgentConfig":
        model = model or make_agent_model()
        x_ref = np.array([goal[0], goal[1], 0.0, 0.0])
        return cls(model=model, x_ref=x_ref, **kw)


@dataclass
class WorldState:
    """Frozen per-step snapshot every agent plans against."""

    beliefs: list[GaussianBelief]
    true_states: list[np.ndarray]
    obstacles: list[PolygonObstacle]
    radii: list[float]
    step: int = 0


@dataclass
class PlanDiagnostics:
    solve_time_s: float
    nodes: int
    status: str
    fallback: bool = False
    slack: float = 0.0
    binary_count: int = 0
    overlap_pairs: int = 0
    margin_scale: float = 1.0


def predict_neighbors(world: WorldState, ego: int, horizon: int, tau_s: float,
                      sensing_radius: float = math.inf):
    """Constant-velocity forecasts p_j + k*tau*v_j per visible neighbor.

    Returns (indices, tracks (J, N+1, 2), velocities (J, 2)); velocities are
    assumed fixed across the horizon, so the velocity forecast is the
    returned array itself at every k.
    """
    p_ego = world.true_states[ego][:2]
    idx, pos, vel = [], [], []
    for j, state in enumerate(world.true_states):
        if j == ego:
            continue
        if float(np.linalg.norm(state[:2] - p_ego)) > sensing_radius:
            continue
        idx.append(j)
        pos.append(state[:2])
        vel.append(state[2:])
    if not idx:
        return [], np.zeros((0, horizon + 1, 2)), np.zeros((0, 2))
    pos = np.asarray(pos)
    vel = np.asarray(vel)
    ks = np.arange(horizon + 1)[None, :, None]
    tracks = pos[:, None, :] + ks * tau_s * vel[:, None, :]
    return idx, tracks, vel


def _batched_cones(p_ego: np.ndarray, p_nb: np.ndarray, r_sum: np.ndarray):
    """Vectorized tangent-cone normals over (neighbor, timestep) pairs.

    Same construction as geometry.build_collision_cone; entries where the
    discs overlap are flagged instead of raised.  Shapes: p_ego (K, 2),
    p_nb (J, K, 2), r_sum (J,).  Returns unit normals n1, n2 (J, K, 2) and
    an overlap mask (J, K).
    """
    p_ij = p_ego[None, :, :] - p_nb
    dist = np.linalg.norm(p_ij, axis=-1)
    overlap = dist <= r_sum[:, None]
    safe = np.where(overlap, np.inf, dist)
    sin_a = np.clip(r_sum[:, None] / safe, 0.0, 1.0)
    cos_a = np.sqrt(1.0 - sin_a ** 2)
    x, y = p_ij[..., 0], p_ij[..., 1]
    n1 = np.stack([sin_a * x + cos_a * y, -cos_a * x + sin_a * y], axis=-1)
    n2 = np.stack([sin_a * x - cos_a * y, cos_a * x + sin_a * y], axis=-1)
    with np.errstate(invalid="ignore"):
        n1 = n1 / dist[..., None]
        n2 = n2 / dist[..., None]
    return n1, n2, overlap


def build_agent_problem(agent: AgentConfig, ego: int, belief: GaussianBelief,
                        neighbor_predictions, obstacles: list[PolygonObstacle],
                        neighbor_radii: dict | None = None) -> tuple[AgentProblem, int]:
    """Tightened horizon problem for one agent.

    neighbor_predictions is (indices, tracks (J, N+1, 2), velocities (J, 2));
    obstacle constraints are built against polygons already inflated by the
    ego radius.  Returns the problem and the overlap-fallback count.
    """
    n = agent.horizon
    model = agent.model
    idx, tracks, vels = neighbor_predictions
    covs = covariance_horizon(model, belief.cov, n)
    cov_v = covs[:, 2:, 2:]
    cov_p = covs[:, :2, :2]

    ego_track = belief.mean[:2][None, :] + (
        np.arange(n + 1)[:, None] * model.tau_s * belief.mean[2:][None, :])

    vo_groups: list[list[TightenedConstraint]] = []
    overlap_count = 0
    if idx:
        share = allocate_risk(agent.delta, len(idx))
        share = min(share, chance.MAX_RISK_SHARE)
        quantile = math.sqrt(2.0) * chance.erf_inv(1.0 - 2.0 * share)
        r_sum = np.array([model.r + (neighbor_radii or {}).get(j, model.r)
                          for j in idx])
        n1, n2, overlap = _batched_cones(ego_track, tracks, r_sum)
        for jj, j in enumerate(idx):
            for k in range(1, n + 1):
                if overlap[jj, k]:
                    overlap_count += 1
                    sep = ego_track[k] - tracks[jj, k]
                    norm = float(np.linalg.norm(sep))
                    normal = sep / norm if norm > 1e-12 else np.array([1.0, 0.0])
                    g = quantile * math.sqrt(float(normal @ cov_v[k] @ normal))
                    vo_groups.append([TightenedConstraint(
                        normal=normal, offset=float(normal @ vels[jj]),
                        margin=g, space="velocity", source=(ego, j), timestep=k)])
                    continue
                members = []
                for normal in (n1[jj, k], n2[jj, k]):
                    g = quantile * math.sqrt(max(float(normal @ cov_v[k] @ normal), 0.0))
                    members.append(TightenedConstraint(
                        normal=normal, offset=float(normal @ vels[jj]),
                        margin=g, space="velocity", source=(ego, j), timestep=k))
                vo_groups.append(members)

    obstacle_groups: list[list[TightenedConstraint]] = []
    if obstacles:
        share = min(allocate_static_risk(agent.epsilon, len(obstacles)),
                    chance.MAX_RISK_SHARE)
        quantile = math.sqrt(2.0) * chance.erf_inv(1.0 - 2.0 * share)
        for o, poly in enumerate(obstacles):
            inflated = inflate_polygon(poly, model.r)
            for k in range(1, n + 1):
                members = []
                for h in inflated.halfspaces:
                    g = quantile * math.sqrt(max(float(h.normal @ cov_p[k] @ h.normal), 0.0))
                    members.append(TightenedConstraint(
                        normal=h.normal, offset=h.offset, margin=g,
                        space="position", source=("obstacle", o), timestep=k))
                obstacle_groups.append(members)

    problem = AgentProblem(
        model=model, x0_mean=belief.mean, x_ref=agent.x_ref,
        Q=agent.Q, R=agent.R, Q_N=agent.Q_N, horizon=n,
        velocity_constraints=vo_groups, position_constraints=obstacle_groups,
        big_m=agent.big_m)
    return problem, overlap_count


def update_belief(agent: AgentConfig, belief: GaussianBelief,
                  applied_input: np.ndarray) -> GaussianBelief:
    """Open-loop belief prediction through one applied input."""
    model = agent.model
    mean = model.A @ belief.mean + model.B @ np.asarray(applied_input, dtype=float)
    cov = model.A @ belief.cov @ model.A.T + model.W
    return GaussianBelief(mean=mean, cov=0.5 * (cov + cov.T))


class AgentPlanner:
    """Stateful wrapper: warm starts and fallback bookkeeping for one agent."""

    def __init__(self, agent: AgentConfig, index: int):
        self.agent = agent
        self.index = index
        self._prev_assignment: dict | None = None
        self._congested = False
        self._scale_idx = 0

    def plan_step(self, world: WorldState) -> tuple[np.ndarray, MiqpSolution, PlanDiagnostics]:
        t0 = time.perf_counter()
        agent = self.agent
        belief = world.beliefs[self.index]
        preds = predict_neighbors(world, self.index, agent.horizon,
                                  agent.model.tau_s, agent.sensing_radius)
        radii = {j: world.radii[j] for j in preds[0]}
        problem, overlaps = build_agent_problem(
            agent, self.index, belief, preds, world.obstacles, radii)
        miqp_problem = assemble(problem)

        # Feasibility-restoration ladder: the fixed-allocation margins can be
        # jointly infeasible in crowded low-speed scenes, so retry with the
        # tightening scaled down before resorting to soft penalties.  Scale 0
        # keeps the deterministic cones hard.  Such steps are flagged as
        # risk-violating.  Hysteresis: while congested, start from the scale
        # that last worked and re-probe the full margins periodically.
        scales = SCALE_LADDER
        start = 0
        if self._congested and world.step % 8 != 0:
            start = min(self._scale_idx, len(scales) - 1)
        if miqp_problem.binary_count == 0:
            start = 0

        nodes = 0
        sol = None
        used = None
        warm = self._shifted_assignment()
        for si in range(start, len(scales)):
            s = scales[si]
            prob_s = miqp_problem if s == 1.0 else scale_margins(miqp_problem, s)
            if miqp_problem.binary_count and not _first_layer_feasible(prob_s):
                continue
            budget = (8, 4) if (si == 0 and not self._congested) else (4, 3)
            trial = branch_and_bound(prob_s, warm_assignment=warm,
                                     node_limit=agent.node_limit,
                                     bail_without_incumbent=budget[0],
                                     greedy_rounds=budget[1])
            nodes += trial.nodes_explored
            if trial.status != "Infeasible" and np.isfinite(trial.objective):
                sol = trial
                used = si
                self._prev_assignment = _solution_assignment(prob_s, trial)
                break
            if miqp_problem.binary_count == 0:
                break

        slack = 0.0
        if sol is None:
            sol, slack = _elastic_solve(scale_margins(miqp_problem, 0.0))
            nodes += sol.nodes_explored
            used = len(scales) - 1
            self._prev_assignment = None
        fallback = scales[used] < 1.0 or sol.status == "FallbackEngaged"
        self._congested = fallback
        self._scale_idx = used

        u0 = sol.u[:NU]
        u0 = np.clip(u0, agent.model.u_min, agent.model.u_max)
        diag = PlanDiagnostics(
            solve_time_s=time.perf_counter() - t0,
            nodes=nodes, status=sol.status, fallback=fallback,
            slack=slack, binary_count=miqp_problem.binary_count,
            overlap_pairs=overlaps, margin_scale=scales[used])
        return u0, sol, diag

    def _shifted_assignment(self) -> dict | None:
        if not self._prev_assignment:
            return None
        shifted = {}
        for label, member in self._prev_assignment.items():
            *head, k = label
            if k > 1:
                shifted[(*head, k - 1)] = member
        horizon = self.agent.horizon
        for label, member in list(shifted.items()):
            *head, k = label
            if k == horizon - 1:
                shifted[(*head, horizon)] = member
        return shifted or None


_PROBE_GRID: dict = {}


def _first_layer_feasible(problem) -> bool:
    """Cheap necessary-condition probe on the k=1 constraint layer.

    Rows tied to the first prediction step only involve the first input, so
    a dense grid over the input box decides their disjunctive feasibility
    with one matrix product.  Returning False certifies infeasibility up to
    the grid resolution; feasible slivers thinner than the grid pitch are
    the only misses, and those just skip one rung of the margin ladder.
    """
    sel = []
    for i, d in enumerate(problem.disjunctions):
        if not d.label or d.label[-1] != 1:
            continue
        lo, hi = problem.member_offsets[i], problem.member_offsets[i + 1]
        if np.max(np.abs(problem.member_rows[lo:hi, 2:]), initial=0.0) > 1e-12:
            continue
        sel.append((lo, hi))
    if not sel:
        return True

    base = problem.qp
    key = (float(base.lb[0]), float(base.lb[1]), float(base.ub[0]), float(base.ub[1]))
    grid = _PROBE_GRID.get(key)
    if grid is None:
        ax = np.linspace(key[0], key[2], 41)
        ay = np.linspace(key[1], key[3], 41)
        gx, gy = np.meshgrid(ax, ay, indexing="ij")
        grid = np.column_stack([gx.ravel(), gy.ravel()])
        _PROBE_GRID[key] = grid

    idx = np.concatenate([np.arange(lo, hi) for lo, hi in sel])
    vals = grid @ problem.member_rows[idx, :2].T - problem.member_rhs[idx]
    ok = np.ones(len(grid), dtype=bool)
    at = 0
    for lo, hi in sel:
        seg = vals[:, at:at + (hi - lo)]
        at += hi - lo
        ok &= np.min(seg, axis=1) <= 0.0
        if not np.any(ok):
            return False
    return True


def _solution_assignment(problem, sol: MiqpSolution) -> dict:
    """Enforced-member choice per disjunction label (lowest satisfied index)."""
    out = {}
    for d in problem.disjunctions:
        for m_idx, mem in enumerate(d.members):
            if sol.z[mem.binary_id]:
                out[d.label] = m_idx
                break
    return out


def _elastic_solve(problem) -> tuple[MiqpSolution, float]:
    """Soft re-solve when no binary assignment is feasible.

    Minimizes the original cost plus an M-weighted quadratic penalty on the
    violation of one member per disjunction (the least violated at the
    current iterate).  Input bounds stay hard, so the relaxation is always
    solvable; re-selecting members a few times settles the assignment.
    """
    t0 = time.perf_counter()
    base = problem.qp
    n = base.n
    rho = problem.M
    # capped iterations: active-set iterates stay box-feasible, and a
    # slightly unpolished fallback input is fine (the step is flagged)
    solver = ActiveSetWorkspace(max_iter=40)

    hard_g, hard_h = base.G, base.h
    sol = solver.solve(QpProblem(base.H, base.f, hard_g, hard_h, base.lb, base.ub))
    state_viol = (float(np.max(hard_g @ sol.z - hard_h, initial=0.0))
                  if len(hard_h) else 0.0)
    soft_state = sol.status == "Infeasible" or state_viol > 1e-6
    if soft_state:
        # even the state-bound rows conflict (e.g. an out-of-bound observed
        # velocity); penalize them instead of enforcing
        sol = solver.solve(QpProblem(base.H, base.f, np.zeros((0, n)),
                                     np.zeros(0), base.lb, base.ub))
    u = sol.z

    chosen = np.zeros(0, dtype=int)
    active = None
    warm_rows = sol.active_set
    nodes = 1
    for _ in range(5):
        # least-violated member per disjunction; penalize only the rows that
        # are actually violated at the current iterate (one-sided penalty)
        if problem.binary_count:
            viol = problem.member_rows @ u - problem.member_rhs
            pick = []
            for i in range(len(problem.disjunctions)):
                lo, hi = problem.member_offsets[i], problem.member_offsets[i + 1]
                pick.append(lo + int(np.argmin(viol[lo:hi])))
            chosen = np.asarray(pick, dtype=int)
            hot = chosen[viol[chosen] > 1e-12]
        else:
            hot = np.zeros(0, dtype=int)

        soft_rows = [problem.member_rows[hot]] if len(hot) else []
        soft_rhs = [problem.member_rhs[hot]] if len(hot) else []
        if soft_state:
            resid = base.G @ u - base.h
            bad = resid > 1e-12
            if np.any(bad):
                soft_rows.append(base.G[bad])
                soft_rhs.append(base.h[bad])
        if not soft_rows:
            break
        a = np.vstack(soft_rows)
        b = np.concatenate(soft_rhs)
        key = (len(a), float(np.sum(b)))
        if key == active:
            break
        active = key
        h_pen = base.H + 2.0 * rho * a.T @ a
        f_pen = base.f - 2.0 * rho * a.T @ b
        g = np.zeros((0, n)) if soft_state else hard_g
        h = np.zeros(0) if soft_state else hard_h
        sol = solver.solve(QpProblem(h_pen, f_pen, g, h, base.lb, base.ub),
                           warm_start=u, warm_working_set=warm_rows)
        warm_rows = sol.active_set
        nodes += 1
        u = sol.z

    slack = 0.0
    z = np.zeros(problem.binary_count)
    if problem.binary_count:
        viol = problem.member_rows @ u - problem.member_rhs
        slack = float(np.sum(np.maximum(viol[chosen], 0.0)))
        z[chosen] = 1.0
    objective = float(0.5 * u @ base.H @ u + base.f @ u)
    wrapped = MiqpSolution(u=u, z=z, objective=objective,
                           status="FallbackEngaged", nodes_explored=nodes,
                           wall_time=time.perf_counter() - t0)
    return wrapped, slack
