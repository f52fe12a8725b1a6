import math

import numpy as np
import pytest

from voplan.chance import (
    RiskBudget,
    allocate_risk,
    allocate_static_risk,
    erf,
    erf_inv,
    tighten_halfspace,
    tighten_scalar,
)
from voplan.errors import DomainError, NonPsdError, ZeroNeighborsError

Z90 = 1.2815515655446004  # standard-normal 90% quantile = sqrt(2)*erf_inv(0.8)


class TestErf:
    def test_odd_and_zero(self):
        assert erf(0.0) == 0.0
        assert erf_inv(0.0) == 0.0
        for x in np.linspace(0.1, 5.5, 23):
            assert erf(-x) == -erf(x)

    def test_against_stdlib(self):
        # math.erf is an independent platform implementation
        for x in np.linspace(-6, 6, 2001):
            assert abs(erf(float(x)) - math.erf(float(x))) < 1e-12

    def test_erf_inv_frozen_value(self):
        assert abs(erf_inv(0.8) - 0.9061938024368232) < 1e-12

    def test_roundtrip_core(self):
        # exact to the information content of the double argument
        for x in np.linspace(-3.5, 3.5, 1401):
            assert abs(erf_inv(erf(float(x))) - x) < 1e-10

    def test_roundtrip_tail(self):
        # beyond |x| ~ 3.7 the float64 rounding of erf(x) alone costs up to
        # 4.3e-10 of x; the implementation attains that bound
        for x in np.linspace(3.5, 4.0, 101):
            assert abs(erf_inv(erf(float(x))) - x) < 5e-10
            assert abs(erf_inv(erf(-float(x))) + x) < 5e-10

    def test_domain(self):
        for y in (1.0, -1.0, 1.5, -2.0):
            with pytest.raises(DomainError):
                erf_inv(y)


class TestTightenScalar:
    def test_boundary_delta(self):
        assert tighten_scalar(1.0, 0.5) == 0.0

    def test_zero_sigma(self):
        assert tighten_scalar(0.0, 0.1) == 0.0
        assert tighten_scalar(0.0, 0.4) == 0.0

    def test_ninety_percent_quantile(self):
        assert abs(tighten_scalar(1.0, 0.1) - Z90) < 1e-9

    def test_monte_carlo_tail(self):
        # placing the mean at eta makes Pr(x < 0) ~= delta
        rng = np.random.default_rng(2024)
        sigma, delta = 1.7, 0.07
        eta = tighten_scalar(sigma, delta)
        n = 400_000
        freq = np.mean(rng.normal(eta, sigma, size=n) < 0.0)
        se = math.sqrt(delta * (1 - delta) / n)
        assert abs(freq - delta) < 3 * se

    def test_domain(self):
        with pytest.raises(DomainError):
            tighten_scalar(1.0, 0.0)
        with pytest.raises(DomainError):
            tighten_scalar(1.0, 0.6)
        with pytest.raises(DomainError):
            tighten_scalar(-1.0, 0.1)


class TestTightenHalfspace:
    def test_zero_covariance(self):
        assert tighten_halfspace(np.array([1.0, 0.0]), np.zeros((2, 2)), 0.1) == 0.0

    def test_isotropic_rotation_invariance(self):
        for th in np.linspace(0, 2 * math.pi, 17):
            n = np.array([math.cos(th), math.sin(th)])
            g = tighten_halfspace(n, np.eye(2), 0.1)
            assert abs(g - Z90) < 1e-9

    def test_sigma_scales_linearly(self):
        g = tighten_halfspace(np.array([1.0, 0.0]), np.diag([4.0, 0.0]), 0.1)
        assert abs(g - 2 * Z90) < 1e-9

    def test_reduces_to_scalar_form(self):
        # Sigma = sigma^2 n n' reproduces the single-variable margin exactly
        rng = np.random.default_rng(5)
        for _ in range(50):
            th = rng.uniform(0, 2 * math.pi)
            n = np.array([math.cos(th), math.sin(th)])
            sigma = rng.uniform(0.0, 3.0)
            delta = rng.uniform(1e-4, 0.5)
            cov = sigma ** 2 * np.outer(n, n)
            assert np.isclose(tighten_halfspace(n, cov, delta),
                              tighten_scalar(sigma, delta), atol=1e-12)

    def test_monotone_in_delta_and_covariance(self):
        n = np.array([0.6, 0.8])
        deltas = np.linspace(0.01, 0.49, 25)
        margins = [tighten_halfspace(n, np.eye(2), d) for d in deltas]
        assert all(a > b for a, b in zip(margins, margins[1:]))
        scales = [tighten_halfspace(n, s * np.eye(2), 0.1) for s in (0.5, 1.0, 2.0)]
        assert scales[0] < scales[1] < scales[2]

    def test_rejects_non_psd(self):
        with pytest.raises(NonPsdError):
            tighten_halfspace(np.array([1.0, 0.0]), np.diag([1.0, -1e-3]), 0.1)

    def test_violation_frequency_calibrated(self):
        # mean exactly on the tightened boundary -> violation frequency = delta
        rng = np.random.default_rng(77)
        n = np.array([3.0, -1.0]) / math.sqrt(10.0)
        cov = np.array([[0.5, 0.2], [0.2, 0.9]])
        delta = 0.08
        g = tighten_halfspace(n, cov, delta)
        offset = 0.3
        mu_scale = (offset + g) / 1.0
        mu = n * mu_scale  # n . mu = offset + g
        samples = rng.multivariate_normal(mu, cov, size=300_000)
        freq = np.mean(samples @ n < offset)
        se = math.sqrt(delta * (1 - delta) / len(samples))
        assert abs(freq - delta) < 3 * se


class TestAllocation:
    def test_paper_setup(self):
        assert allocate_risk(0.1, 5) == pytest.approx(0.01)

    def test_single_neighbor(self):
        assert allocate_risk(0.1, 1) == pytest.approx(0.05)

    def test_sum_identity(self):
        for nb in (1, 2, 7, 19):
            assert 2 * nb * allocate_risk(0.1, nb) == pytest.approx(0.1)

    def test_zero_neighbors(self):
        with pytest.raises(ZeroNeighborsError):
            allocate_risk(0.1, 0)

    def test_static_split(self):
        assert allocate_static_risk(0.01, 1) == pytest.approx(0.01)
        assert allocate_static_risk(0.01, 4) == pytest.approx(0.0025)
        for no in (1, 3, 9):
            assert no * allocate_static_risk(0.01, no) <= 0.01 + 1e-15

    def test_budget(self):
        b = RiskBudget.allocate(0.1, 0.01, neighbor_count=5, obstacle_count=2)
        assert b.per_constraint_delta == pytest.approx(0.01)
        assert b.per_constraint_epsilon == pytest.approx(0.005)
        assert 0 < b.per_constraint_delta < 0.5


class TestUnionBound:
    def test_union_risk_below_delta(self):
        # velocities satisfying every tightened member of the active side stay
        # out of the union of obstacles with frequency >= 1 - delta
        from voplan.geometry import build_collision_cone, build_velocity_obstacle, vo_contains

        rng = np.random.default_rng(31)
        delta_agent = 0.1
        neighbors = [
            (np.array([3.0, 0.0]), np.array([0.0, 0.0])),
            (np.array([0.0, 3.0]), np.array([0.5, 0.0])),
            (np.array([-2.5, 1.5]), np.array([0.0, -0.4])),
        ]
        share = allocate_risk(delta_agent, len(neighbors))
        cov_v = np.diag([0.04, 0.03])
        p_i = np.zeros(2)

        vos = []
        for p_j, v_j in neighbors:
            vos.append(build_velocity_obstacle(
                build_collision_cone(p_i, p_j, 0.3, 0.3), v_j))

        # pick one member per obstacle and a ray direction along which all
        # three tightened constraints can be activated; scale the mean down
        # the ray until the most binding boundary is exactly tight
        mu = None
        for bits in range(8):
            members = [(bits >> i) & 1 for i in range(3)]
            normals = [vos[i].halfspaces[members[i]].normal for i in range(3)]
            rhs = [vos[i].halfspaces[members[i]].offset
                   + tighten_halfspace(normals[i], cov_v, share)
                   for i in range(3)]
            for ang in np.linspace(0, 2 * math.pi, 32, endpoint=False):
                d = np.array([math.cos(ang), math.sin(ang)])
                dots = [float(n @ d) for n in normals]
                if min(dots) > 0.2:
                    t = max(r / dd for r, dd in zip(rhs, dots))
                    mu = t * d
                    chosen = list(zip(normals, rhs))
                    break
            if mu is not None:
                break
        assert mu is not None
        assert all(float(n @ mu) >= c - 1e-9 for n, c in chosen)
        assert any(abs(float(n @ mu) - c) < 1e-9 for n, c in chosen)

        n_samples = 100_000
        vels = rng.multivariate_normal(mu, cov_v, size=n_samples)
        inside_union = np.zeros(n_samples, dtype=bool)
        for vo in vos:
            h1, h2 = vo.halfspaces
            inside = ((vels @ h1.normal <= h1.offset)
                      & (vels @ h2.normal <= h2.offset))
            inside_union |= inside
        freq = float(np.mean(inside_union))
        se = math.sqrt(delta_agent * (1 - delta_agent) / n_samples)
        assert freq <= delta_agent + 3 * se

    def test_fixed_shares_satisfy_free_share_conditions(self):
        # the fixed allocation is a feasible point of the free-share risk
        # constraints: shares nonnegative and summing to at most delta
        for nb in (1, 2, 5, 19):
            share = allocate_risk(0.1, nb)
            assert share > 0
            assert 2 * nb * share <= 0.1 + 1e-15
