"""Probabilistic constraint tightening.

Converts chance constraints on Gaussian states into deterministic linear
constraints on the mean: a half-space requirement that must hold with
probability 1-delta becomes the same half-space shifted inward by a margin
proportional to the standard deviation along the constraint normal.  The
error function and its inverse are implemented locally (series plus
continued fraction) so results are bit-reproducible across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NonPsdError, ZeroNeighborsError

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)

# Maximum per-constraint risk share fed to erf_inv by the allocation path;
# guards the g(delta) margin against a zero/negative sign flip when a
# caller configures delta_agent at or above the disjunct count.
MAX_RISK_SHARE = 0.4999


def _erf_series(x: float) -> float:
    # Maclaurin series; alternating, used for |x| <= 2.5 where cancellation
    # stays below ~1e-15.
    x2 = x * x
    term = x
    total = x
    n = 0
    while n < 200:
        n += 1
        term *= -x2 / n
        inc = term / (2 * n + 1)
        total += inc
        if abs(inc) < 1e-18 * abs(total):
            break
    return _TWO_OVER_SQRT_PI * total


def _erfc_cf(x: float) -> float:
    # Laplace continued fraction for sqrt(pi)*exp(x^2)*erfc(x), evaluated
    # with the modified Lentz scheme; accurate for x >= 2.5.
    tiny = 1e-300
    b = x
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for n in range(1, 400):
        a = n / 2.0
        d = 1.0 / (b + a * d)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-17:
            break
    return math.exp(-x * x) / math.sqrt(math.pi) * h


def _erfc_pos(x: float) -> float:
    """erfc(x) for x >= 0 with small relative error in the tail."""
    if x < 2.5:
        return 1.0 - _erf_series(x)
    return _erfc_cf(x)


def erf(x: float) -> float:
    """Error function, accurate to well below 1e-12 on [-6, 6]."""
    x = float(x)
    ax = abs(x)
    if ax <= 2.5:
        return _erf_series(x)
    return math.copysign(1.0 - _erfc_cf(ax), x)


def erf_inv(y: float) -> float:
    """Inverse error function on (-1, 1).

    Safeguarded Newton iteration on :func:`erf`, started from the Winitzki
    approximation.  In the tail the residual is computed as
    ``(1 - |y|) - erfc(|x|)`` (an exact subtraction for |y| >= 0.5 followed
    by a small-relative-error erfc), which makes the inversion exact to the
    information content of the double-precision argument.
    """
    y = float(y)
    if not -1.0 < y < 1.0:
        raise DomainError(f"erf_inv argument must be in (-1, 1), got {y}")
    if y == 0.0:
        return 0.0

    ay = abs(y)
    a = 0.147
    ln1my2 = math.log(max(1.0 - y * y, 5e-324))
    t1 = 2.0 / (math.pi * a) + 0.5 * ln1my2
    x = math.copysign(math.sqrt(max(math.sqrt(t1 * t1 - ln1my2 / a) - t1, 0.0)), y)

    lo, hi = -6.5, 6.5
    one_minus_ay = 1.0 - ay
    tail = ay > 0.9
    for _ in range(100):
        if tail and x * y > 0:
            f = one_minus_ay - _erfc_pos(abs(x))
            if y < 0.0:
                f = -f
        else:
            f = erf(x) - y
        if f > 0.0:
            hi = min(hi, x)
        elif f < 0.0:
            lo = max(lo, x)
        else:
            break
        xn = x - f / (_TWO_OVER_SQRT_PI * math.exp(-x * x))
        if not lo < xn < hi:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) < 1e-16 * (1.0 + abs(x)):
            x = xn
            break
        x = xn
    return x


def tighten_scalar(sigma: float, delta: float) -> float:
    """Margin eta = sqrt(2)*sigma*erf_inv(1-2*delta) for a scalar Gaussian.

    Requiring mean >= eta makes Pr(x < 0) <= delta when x ~ N(mean, sigma^2).
    """
    if sigma < 0.0:
        raise DomainError(f"sigma must be nonnegative, got {sigma}")
    if not 0.0 < delta <= 0.5:
        raise DomainError(f"delta must be in (0, 0.5], got {delta}")
    if sigma == 0.0 or delta == 0.5:
        return 0.0
    return math.sqrt(2.0) * sigma * erf_inv(1.0 - 2.0 * delta)


def tighten_halfspace(normal: np.ndarray, cov_block: np.ndarray, delta: float) -> float:
    """Margin g = sqrt(2 n' S n) * erf_inv(1-2*delta) for a half-space n'x >= c.

    ``cov_block`` is the 2x2 covariance of the constrained sub-vector
    (velocity or position block of the full state covariance).
    """
    if not 0.0 < delta <= 0.5:
        raise DomainError(f"delta must be in (0, 0.5], got {delta}")
    normal = np.asarray(normal, dtype=float)
    cov_block = np.asarray(cov_block, dtype=float)
    if np.min(np.linalg.eigvalsh(0.5 * (cov_block + cov_block.T))) < -1e-9:
        raise NonPsdError("covariance block has eigenvalue below -1e-9")
    var = float(normal @ cov_block @ normal)
    if var <= 0.0 or delta == 0.5:
        return 0.0
    return math.sqrt(2.0 * var) * erf_inv(1.0 - 2.0 * delta)


def allocate_risk(delta_agent: float, neighbor_count: int) -> float:
    """Fixed equal risk share delta_agent / (2 * neighbor_count).

    One share per linear member of each two-member velocity-obstacle
    disjunction; the shares sum exactly to delta_agent.
    """
    if neighbor_count < 1:
        raise ZeroNeighborsError("no neighbors: skip velocity-obstacle constraints")
    if not 0.0 < delta_agent < 1.0:
        raise DomainError(f"delta_agent must be in (0, 1), got {delta_agent}")
    return delta_agent / (2.0 * neighbor_count)


def allocate_static_risk(epsilon_agent: float, obstacle_count: int) -> float:
    """Uniform split of the static-obstacle risk bound across obstacles."""
    if obstacle_count < 1:
        raise DomainError("obstacle_count must be >= 1")
    if not 0.0 < epsilon_agent < 1.0:
        raise DomainError(f"epsilon_agent must be in (0, 1), got {epsilon_agent}")
    return epsilon_agent / obstacle_count


@dataclass(frozen=True)
class RiskBudget:
    """Per-agent risk bounds and their fixed per-constraint shares."""

    delta_agent: float
    epsilon_agent: float
    per_constraint_delta: float
    per_constraint_epsilon: float

    @classmethod
    def allocate(cls, delta_agent: float, epsilon_agent: float,
                 neighbor_count: int, obstacle_count: int) -> "RiskBudget":
        d = allocate_risk(delta_agent, neighbor_count) if neighbor_count else 0.0
        e = allocate_static_risk(epsilon_agent, obstacle_count) if obstacle_count else 0.0
        return cls(delta_agent, epsilon_agent,
                   min(d, MAX_RISK_SHARE), min(e, MAX_RISK_SHARE))


@dataclass(frozen=True)
class TightenedConstraint:
    """A deterministic half-space on the mean with its tightening margin.

    The underlying requirement is normal . y >= offset + margin, in either
    velocity or position space.
    """

    normal: np.ndarray
    offset: float
    margin: float
    space: str                    # "velocity" or "position"
    source: tuple                 # (i, j) agent pair or ("obstacle", index)
    timestep: int
