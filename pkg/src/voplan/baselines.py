"""Comparison planners: pure velocity-obstacle selection and position-space MPC.

The VO baseline commands instantaneous velocity changes: it takes the
preferred velocity (straight at the goal) unless that lies inside some
neighbor's velocity obstacle, in which case it grid-searches the velocity
box for the admissible velocity closest to the preferred one.

PB-MPC keeps the same tracking cost as the main planner but replaces the
velocity-space cones with linearized pairwise distance constraints
|p_i - p_j| >= d_safe, re-convexified around the previous trajectory inside
a trust-region loop.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import chance
from .chance import allocate_risk
from .dynamics import NU, GaussianBelief, covariance_horizon
from .geometry import build_collision_cone, build_velocity_obstacle, vo_contains
from .miqp import input_to_state_maps
from .planner import AgentConfig, WorldState, predict_neighbors
from .qp import ActiveSetWorkspace, QpProblem


@dataclass
class VoBaselineConfig:
    preferred_speed: float = 5.0
    v_limit: float = 10.0
    resolution: float = 0.1
    goal_tolerance: float = 0.1

    def __post_init__(self):
        if self.preferred_speed > self.v_limit:
            raise ValueError("preferred_speed must not exceed the velocity bound")


@dataclass
class PbMpcConfig:
    d_safe: float = 0.4
    trust_radius: float = 0.5
    max_scp_iters: int = 5

    def __post_init__(self):
        if self.d_safe <= 0:
            raise ValueError("d_safe must be positive")


def _velocity_grid(config: VoBaselineConfig) -> np.ndarray:
    axis = np.arange(-config.v_limit, config.v_limit + 1e-9, config.resolution)
    vx, vy = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([vx.ravel(), vy.ravel()])


def vo_select_velocity(position, velocity, goal, neighbors,
                       config: VoBaselineConfig, ego_radius: float):
    """Pick the admissible velocity closest to the goal-directed preference.

    neighbors: list of (position, velocity, radius).  Returns (velocity,
    feasible_flag); an empty admissible set returns zero velocity flagged.
    """
    position = np.asarray(position, dtype=float)
    to_goal = np.asarray(goal, dtype=float) - position
    dist = float(np.linalg.norm(to_goal))
    if dist < config.goal_tolerance:
        v_pref = np.zeros(2)
    else:
        v_pref = to_goal / dist * config.preferred_speed

    vos = []
    seps = []
    for p_j, v_j, r_j in neighbors:
        try:
            cone = build_collision_cone(position, p_j, ego_radius, r_j)
            vos.append(build_velocity_obstacle(cone, v_j))
        except Exception:
            # already overlapping: require motion that separates
            sep = position - np.asarray(p_j, dtype=float)
            norm = float(np.linalg.norm(sep))
            n = sep / norm if norm > 1e-12 else np.array([1.0, 0.0])
            seps.append((n, float(n @ np.asarray(v_j, dtype=float))))

    def admissible(v):
        return (not any(vo_contains(vo, v) for vo in vos)
                and all(float(n @ v) >= c for n, c in seps))

    if admissible(v_pref):
        return v_pref, True

    grid = _velocity_grid(config)
    ok = np.ones(len(grid), dtype=bool)
    for vo in vos:
        h1, h2 = vo.halfspaces
        inside = ((grid @ h1.normal <= h1.offset + 1e-12)
                  & (grid @ h2.normal <= h2.offset + 1e-12))
        ok &= ~inside
    for n, c in seps:
        ok &= grid @ n >= c
    if not np.any(ok):
        return np.zeros(2), False
    cand = grid[ok]
    d2 = np.einsum("ij,ij->i", cand - v_pref, cand - v_pref)
    best = int(np.argmin(d2))   # ties resolve to the lowest grid index
    return cand[best], True


class VoBaselinePlanner:
    """Adapter with the same per-step surface as AgentPlanner.

    The commanded velocity is applied as an instantaneous change: the
    returned "input" is the acceleration that realizes it in one sampling
    interval (saturated at the input bounds).
    """

    def __init__(self, agent: AgentConfig, index: int,
                 config: VoBaselineConfig | None = None):
        self.agent = agent
        self.index = index
        self.config = config or VoBaselineConfig(
            v_limit=float(agent.model.x_max[2]))

    def plan_step(self, world: WorldState):
        t0 = time.perf_counter()
        state = world.true_states[self.index]
        neighbors = [(world.true_states[j][:2], world.true_states[j][2:],
                      world.radii[j])
                     for j in range(len(world.true_states)) if j != self.index]
        v_cmd, feasible = vo_select_velocity(
            state[:2], state[2:], self.agent.x_ref[:2], neighbors,
            self.config, world.radii[self.index])
        u = (v_cmd - state[2:]) / self.agent.model.tau_s
        u = np.clip(u, self.agent.model.u_min, self.agent.model.u_max)
        elapsed = time.perf_counter() - t0
        diag = {"solve_time_s": elapsed, "feasible": feasible,
                "commanded_velocity": v_cmd}
        return u, None, diag


@dataclass
class _PbState:
    prev_positions: np.ndarray | None = None   # (N+1, 2) linearization track


class PbMpcPlanner:
    """Position-space MPC with tightened linearized distance constraints."""

    def __init__(self, agent: AgentConfig, index: int,
                 config: PbMpcConfig | None = None):
        self.agent = agent
        self.index = index
        self.config = config or PbMpcConfig(d_safe=2 * agent.model.r)
        self._state = _PbState()
        self._solver = ActiveSetWorkspace()

    def plan_step(self, world: WorldState):
        t0 = time.perf_counter()
        agent = self.agent
        model = agent.model
        n = agent.horizon
        belief = world.beliefs[self.index]
        s, powers = input_to_state_maps(model, n)
        drift = powers @ belief.mean

        idx, tracks, _ = predict_neighbors(world, self.index, n, model.tau_s,
                                           agent.sensing_radius)
        covs = covariance_horizon(model, belief.cov, n)
        cov_p = covs[:, :2, :2]
        share = None
        if idx:
            share = min(allocate_risk(agent.delta, len(idx)),
                        chance.MAX_RISK_SHARE)
            quantile = math.sqrt(2.0) * chance.erf_inv(1.0 - 2.0 * share)

        # base cost and state-bound rows mirror the main planner's assembly
        from .miqp import AgentProblem, assemble

        base = assemble(AgentProblem(
            model=model, x0_mean=belief.mean, x_ref=agent.x_ref,
            Q=agent.Q, R=agent.R, Q_N=agent.Q_N, horizon=n)).qp

        ref = self._state.prev_positions
        if ref is None:
            ref = belief.mean[:2][None, :] + (
                np.arange(n + 1)[:, None] * model.tau_s * belief.mean[2:][None, :])

        sol = None
        u = None
        scp_iters = 0
        for _ in range(self.config.max_scp_iters):
            rows, rhs = [], []
            for jj in range(len(idx)):
                for k in range(1, n + 1):
                    sep = ref[k] - tracks[jj, k]
                    norm = float(np.linalg.norm(sep))
                    nrm = sep / norm if norm > 1e-12 else np.array([1.0, 0.0])
                    g = quantile * math.sqrt(
                        max(float(nrm @ cov_p[k] @ nrm), 0.0))
                    # n.(p_k - p_jk) >= d_safe + g, linear through the mean map
                    row = -(nrm @ (model.L_p @ s[k]))
                    r = (float(nrm @ (model.L_p @ drift[k]))
                         - float(nrm @ tracks[jj, k])
                         - self.config.d_safe - g)
                    rows.append(row)
                    rhs.append(r)
            if rows:
                g_all = np.vstack([base.G, np.asarray(rows)])
                h_all = np.concatenate([base.h, np.asarray(rhs)])
            else:
                g_all, h_all = base.G, base.h
            qp = QpProblem(base.H, base.f, g_all, h_all, base.lb, base.ub)
            qp._chol = base.cholesky()
            sol = self._solver.solve(qp, warm_start=u)
            scp_iters += 1
            if sol.status != "Optimal":
                break
            u = sol.z
            new_track = np.stack([s[k] @ u + drift[k] for k in range(n + 1)])[:, :2]
            shift = float(np.max(np.linalg.norm(new_track - ref, axis=1)))
            ref = new_track
            if shift <= self.config.trust_radius:
                break

        fallback = sol is None or sol.status != "Optimal"
        if fallback:
            u = np.zeros(base.n)
            self._state.prev_positions = None
        else:
            # shift the accepted trajectory one step for the next solve
            self._state.prev_positions = np.vstack([ref[1:], ref[-1]])
        u0 = np.clip(u[:NU], model.u_min, model.u_max)
        trust_violation = False
        if idx:
            d0 = min(float(np.linalg.norm(belief.mean[:2] - tracks[jj, 0]))
                     for jj in range(len(idx)))
            trust_violation = not fallback and d0 < self.config.d_safe - 0.05
        diag = {"solve_time_s": time.perf_counter() - t0,
                "scp_iters": scp_iters, "fallback": fallback,
                "trust_violation": trust_violation}
        return u0, sol, diag
