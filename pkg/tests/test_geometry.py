import math

import numpy as np
import pytest

from voplan.errors import DegenerateError, NonConvexError, OverlapError
from voplan.geometry import (
    build_collision_cone,
    build_velocity_obstacle,
    inflate_polygon,
    polygon_to_halfspaces,
    ray_hits_disc,
    rotate,
    vo_contains,
)


def vo_from_config(p_i, p_j, r_i, r_j, v_j, pair=(0, 1), k=0):
    return build_velocity_obstacle(
        build_collision_cone(p_i, p_j, r_i, r_j), v_j, pair, k)


def ray_oracle(p_i, p_j, r_i, r_j, v_i, v_j) -> bool:
    # Eqs-3-5 style membership: relative-velocity ray from p_i meets the
    # combined disc around p_j
    return ray_hits_disc(p_i, np.asarray(v_i, float) - np.asarray(v_j, float),
                         p_j, r_i + r_j)


class TestRotate:
    def test_identity(self):
        assert np.allclose(rotate(0.0, np.array([1.0, 0.0])), [1, 0])

    def test_quarter_turn(self):
        assert np.allclose(rotate(math.pi / 2, np.array([1.0, 0.0])), [0, 1])

    def test_thirty_degrees(self):
        assert np.allclose(rotate(math.pi / 6, np.array([2.0, 0.0])),
                           [math.sqrt(3.0), 1.0])

    def test_norm_preserved(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            y = rng.normal(size=2)
            th = rng.uniform(-10, 10)
            assert np.isclose(np.linalg.norm(rotate(th, y)), np.linalg.norm(y))


class TestCollisionCone:
    def test_half_angle(self):
        # sin(alpha) = 1/2 forced by the 0.5+0.5 radius over distance 2
        n1, n2 = build_collision_cone([0, 0], [2, 0], 0.5, 0.5)
        # normals derived by hand from the +/-30 degree tangents
        assert np.allclose(n1, np.array([-1.0, math.sqrt(3.0)]) / 2.0)
        assert np.allclose(n2, np.array([-1.0, -math.sqrt(3.0)]) / 2.0)

    def test_unit_normals(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            p_i = rng.normal(size=2) * 5
            p_j = rng.normal(size=2) * 5
            r = rng.uniform(0.05, 0.4)
            if np.linalg.norm(p_i - p_j) <= 2 * r:
                continue
            n1, n2 = build_collision_cone(p_i, p_j, r, r)
            assert np.isclose(np.linalg.norm(n1), 1.0)
            assert np.isclose(np.linalg.norm(n2), 1.0)

    def test_overlap_raises(self):
        with pytest.raises(OverlapError):
            build_collision_cone([0, 0], [1, 0], 0.5, 0.5)

    def test_reflection_swaps_normals(self):
        # mirror the configuration about the line through p_i, p_j (x-axis)
        n1, n2 = build_collision_cone([0, 0], [3, 1e-9], 0.4, 0.3)
        m1, m2 = build_collision_cone([0, 0], [3, -1e-9], 0.4, 0.3)
        flip = np.array([1.0, -1.0])
        assert np.allclose(n1 * flip, m2, atol=1e-6)
        assert np.allclose(n2 * flip, m1, atol=1e-6)


class TestVelocityObstacle:
    def test_offsets_are_apex_products(self):
        cone = build_collision_cone([0, 0], [2, 0], 0.5, 0.5)
        vo = vo_from_config([0, 0], [2, 0], 0.5, 0.5, v_j=[1.0, 1.0])
        for n, h in zip(cone, vo.halfspaces):
            assert np.isclose(h.offset, float(n @ np.array([1.0, 1.0])))

    def test_zero_apex_zero_offsets(self):
        vo = vo_from_config([0, 0], [2, 0], 0.5, 0.5, v_j=[0.0, 0.0])
        assert vo.halfspaces[0].offset == 0.0
        assert vo.halfspaces[1].offset == 0.0

    def test_membership_examples(self):
        vo = vo_from_config([0, 0], [2, 0], 0.5, 0.5, v_j=[0.0, 0.0])
        assert vo_contains(vo, [1.0, 0.0])       # straight at the neighbor
        assert not vo_contains(vo, [0.0, 1.0])   # perpendicular escape
        assert not vo_contains(vo, [-5.0, 0.0])  # pointing away
        assert vo_contains(vo, [0.0, 0.0])       # apex counts as inside

    def test_agrees_with_ray_oracle(self):
        rng = np.random.default_rng(42)
        checked = 0
        for _ in range(10_000):
            p_i = rng.uniform(-5, 5, size=2)
            p_j = rng.uniform(-5, 5, size=2)
            r_i, r_j = rng.uniform(0.05, 0.6, size=2)
            if np.linalg.norm(p_i - p_j) <= r_i + r_j:
                continue
            v_i = rng.uniform(-3, 3, size=2)
            v_j = rng.uniform(-3, 3, size=2)
            if np.linalg.norm(v_i - v_j) < 1e-9:
                continue
            vo = vo_from_config(p_i, p_j, r_i, r_j, v_j)
            margins = [float(h.normal @ v_i) - h.offset for h in vo.halfspaces]
            if min(abs(m) for m in margins) < 1e-9:
                continue  # boundary band
            assert vo_contains(vo, v_i) == ray_oracle(p_i, p_j, r_i, r_j, v_i, v_j)
            checked += 1
        assert checked > 9000

    def test_scale_invariance(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            p_i = rng.uniform(-4, 4, size=2)
            p_j = rng.uniform(-4, 4, size=2)
            r = rng.uniform(0.1, 0.5)
            if np.linalg.norm(p_i - p_j) <= 2 * r:
                continue
            v_i = rng.uniform(-2, 2, size=2)
            v_j = rng.uniform(-2, 2, size=2)
            s = rng.uniform(0.5, 10.0)
            a = vo_contains(vo_from_config(p_i, p_j, r, r, v_j), v_i)
            b = vo_contains(vo_from_config(s * p_i, s * p_j, s * r, s * r, v_j), v_i)
            assert a == b


class TestPolygon:
    def test_unit_square(self):
        poly = polygon_to_halfspaces([(0, 0), (1, 0), (1, 1), (0, 1)])
        assert len(poly.halfspaces) == 4
        outside = np.array([2.0, 0.5])
        strict = sum(float(h.normal @ outside) > h.offset + 1e-12
                     for h in poly.halfspaces)
        assert strict == 1
        assert not poly.contains(outside)
        assert poly.contains(np.array([0.5, 0.5]))

    def test_triangle_centroid_violates_all(self):
        poly = polygon_to_halfspaces([(0, 0), (1, 0), (0, 1)])
        assert len(poly.halfspaces) == 3
        centroid = np.array([1 / 3, 1 / 3])
        assert all(float(h.normal @ centroid) < h.offset for h in poly.halfspaces)

    def test_collinear_raises(self):
        with pytest.raises(DegenerateError):
            polygon_to_halfspaces([(0, 0), (1, 0), (2, 0)])

    def test_nonconvex_raises(self):
        with pytest.raises(NonConvexError):
            polygon_to_halfspaces([(0, 0), (2, 0), (1, 0.5), (2, 2), (0, 2)])

    def test_clockwise_raises(self):
        with pytest.raises(NonConvexError):
            polygon_to_halfspaces([(0, 0), (0, 1), (1, 1), (1, 0)])

    def test_point_in_polygon_oracle(self):
        # membership via halfspaces vs matplotlib's path-based test
        from matplotlib.path import Path

        rng = np.random.default_rng(17)
        verts = [(0, 0), (2, 0), (3, 1.5), (1.5, 3), (-0.5, 1.5)]
        poly = polygon_to_halfspaces(verts)
        path = Path(np.asarray(verts, dtype=float))
        for _ in range(500):
            p = rng.uniform(-2, 4, size=2)
            assert poly.contains(p) == bool(path.contains_point(p, radius=1e-9))

    def test_distance(self):
        poly = polygon_to_halfspaces([(0, 0), (1, 0), (1, 1), (0, 1)])
        assert poly.distance(np.array([0.5, 0.5])) == 0.0
        assert np.isclose(poly.distance(np.array([2.0, 0.5])), 1.0)
        assert np.isclose(poly.distance(np.array([2.0, 2.0])), math.sqrt(2.0))


class TestInflate:
    def test_zero_radius_identity(self):
        poly = polygon_to_halfspaces([(0, 0), (1, 0), (1, 1), (0, 1)])
        inflated = inflate_polygon(poly, 0.0)
        for a, b in zip(poly.halfspaces, inflated.halfspaces):
            assert np.allclose(a.normal, b.normal)
            assert a.offset == b.offset

    def test_left_edge_pushed_out(self):
        poly = polygon_to_halfspaces([(0, 0), (1, 0), (1, 1), (0, 1)])
        inflated = inflate_polygon(poly, 0.2)
        p = np.array([-0.1, 0.5])
        # originally the left-edge disjunct held; after inflation none do
        assert not poly.contains(p)
        assert inflated.contains(p)

    def test_vertices_inside_inflated(self):
        poly = polygon_to_halfspaces([(0, 0), (1, 0), (1, 1), (0, 1)])
        inflated = inflate_polygon(poly, 0.2)
        for v in poly.vertices:
            assert inflated.contains(v)
