"""Double-integrator agent model and Gaussian belief propagation.

State x = (px, py, vx, vy), input u = (ax, ay).  One simulation step is
x+ = A x + B u + w with w ~ N(0, W), so the mean and covariance of the
state k steps ahead have the closed forms

    mean_k = A^k mean_0 + sum_l A^(k-l-1) B u_l
    cov_k  = sum_l A^l W A'^l + A^k P0 A'^k

and the covariance does not depend on the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NX = 4
NU = 2

L_P = np.array([[1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0]])
L_V = np.array([[0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0]])


def double_integrator_matrices(tau_s: float) -> tuple[np.ndarray, np.ndarray]:
    """State transition and input matrices for sampling interval tau_s."""
    a = np.eye(NX)
    a[0, 2] = tau_s
    a[1, 3] = tau_s
    b = np.array([[0.5 * tau_s ** 2, 0.0],
                  [0.0, 0.5 * tau_s ** 2],
                  [tau_s, 0.0],
                  [0.0, tau_s]])
    return a, b


@dataclass(frozen=True)
class AgentModel:
    """Immutable double-integrator model with bounds and noise covariance."""

    tau_s: float
    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    r: float
    L_p: np.ndarray = field(default_factory=lambda: L_P.copy())
    L_v: np.ndarray = field(default_factory=lambda: L_V.copy())

    def __post_init__(self):
        a, b = double_integrator_matrices(self.tau_s)
        if not (np.allclose(self.A, a) and np.allclose(self.B, b)):
            raise ValueError("A/B do not match the double-integrator structure for tau_s")
        w = np.asarray(self.W)
        if w.shape != (NX, NX) or np.any(w - np.diag(np.diagonal(w))) or np.any(np.diagonal(w) < 0):
            raise ValueError("W must be diagonal with nonnegative entries")
        if not (np.all(self.x_min < self.x_max) and np.all(self.u_min < self.u_max)):
            raise ValueError("bounds must satisfy min < max componentwise")


def make_agent_model(tau_s: float = 0.05,
                     w_diag=(1e-4, 1e-4, 1e-2, 1e-2),
                     v_limit: float = 10.0,
                     u_limit: float = 10.0,
                     radius: float = 0.2) -> AgentModel:
    """Model with the default desk-scale parameter set."""
    a, b = double_integrator_matrices(tau_s)
    return AgentModel(
        tau_s=tau_s,
        A=a,
        B=b,
        W=np.diag(np.asarray(w_diag, dtype=float)),
        x_min=np.array([-np.inf, -np.inf, -v_limit, -v_limit]),
        x_max=np.array([np.inf, np.inf, v_limit, v_limit]),
        u_min=np.array([-u_limit, -u_limit]),
        u_max=np.array([u_limit, u_limit]),
        r=radius,
    )


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of one agent's state."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (NX, NX):
            raise ValueError(f"cov must be {NX}x{NX}")
        if np.max(np.abs(cov - cov.T)) > 1e-9:
            raise ValueError("cov must be symmetric within 1e-9")
        if np.min(np.linalg.eigvalsh(0.5 * (cov + cov.T))) < -1e-9:
            raise ValueError("cov must be PSD within 1e-9")

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[2:]


def discrete_step(model: AgentModel, x: np.ndarray, u: np.ndarray,
                  w: np.ndarray | None = None) -> np.ndarray:
    """One exact step A x + B u + w (w defaults to zero)."""
    out = model.A @ np.asarray(x, dtype=float) + model.B @ np.asarray(u, dtype=float)
    if w is not None:
        out = out + np.asarray(w, dtype=float)
    return out


def _a_powers(model: AgentModel, k: int) -> list[np.ndarray]:
    powers = [np.eye(NX)]
    for _ in range(k):
        powers.append(model.A @ powers[-1])
    return powers


def propagate_mean(model: AgentModel, x0_mean: np.ndarray, inputs) -> np.ndarray:
    """Closed-form mean k steps ahead: A^k x0 + sum_l A^(k-l-1) B u_l."""
    inputs = [np.asarray(u, dtype=float) for u in inputs]
    k = len(inputs)
    powers = _a_powers(model, k)
    x = powers[k] @ np.asarray(x0_mean, dtype=float)
    for l, u in enumerate(inputs):
        x = x + powers[k - l - 1] @ (model.B @ u)
    return x


def propagate_covariance(model: AgentModel, p0: np.ndarray, k: int) -> np.ndarray:
    """Closed-form covariance k steps ahead; independent of the inputs.

    cov_k = sum_{l<k} A^l W A'^l + A^k P0 A'^k, re-symmetrized.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    p0 = np.asarray(p0, dtype=float)
    powers = _a_powers(model, k)
    cov = powers[k] @ p0 @ powers[k].T
    for l in range(k):
        cov = cov + powers[l] @ model.W @ powers[l].T
    return 0.5 * (cov + cov.T)


def covariance_horizon(model: AgentModel, p0: np.ndarray, n: int) -> np.ndarray:
    """Stack of covariances for k = 0..n (shape (n+1, 4, 4))."""
    out = np.empty((n + 1, NX, NX))
    cov = np.asarray(p0, dtype=float).copy()
    out[0] = cov
    for k in range(1, n + 1):
        cov = model.A @ cov @ model.A.T + model.W
        cov = 0.5 * (cov + cov.T)
        out[k] = cov
    return out


def noise_rng(seed: int, trial: int, agent: int, step: int) -> np.random.Generator:
    """Independent substream for one (trial, agent, step) noise draw.

    Derived streams make simulations reproducible regardless of agent
    iteration order or worker count.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(trial, agent, step))
    return np.random.default_rng(ss)


def sample_noise(model: AgentModel, seed: int, trial: int, agent: int,
                 step: int) -> np.ndarray:
    """Draw one process-noise vector w ~ N(0, W) from the derived stream."""
    rng = noise_rng(seed, trial, agent, step)
    std = np.sqrt(np.diagonal(model.W))
    return rng.standard_normal(NX) * std
