"""Collision cones, velocity obstacles, and polygonal obstacle half-spaces.

A velocity obstacle for an agent pair is the cone of velocities that
eventually close the gap between the two discs, translated by the
neighbor's velocity.  It is stored as two half-spaces with unit outward
normals; a velocity is inside the obstacle exactly when both half-space
constraints fail.  Convex polygons are stored edge-wise the same way: the
free space is the union of the per-edge outer half-spaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, NonConvexError, OverlapError

_BOUNDARY_TOL = 1e-12


def rotate(theta: float, y: np.ndarray) -> np.ndarray:
    """Counterclockwise rotation of a 2-vector by theta radians."""
    c, s = math.cos(theta), math.sin(theta)
    y = np.asarray(y, dtype=float)
    return np.array([c * y[0] - s * y[1], s * y[0] + c * y[1]])


@dataclass(frozen=True)
class HalfSpace:
    """Linear constraint normal . y >= offset with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("half-space normal must be unit length")

    def satisfied(self, y: np.ndarray, tol: float = 0.0) -> bool:
        return float(self.normal @ y) >= self.offset - tol


@dataclass(frozen=True)
class VelocityObstacle:
    """Two-half-space cone of colliding velocities for one agent pair."""

    halfspaces: tuple[HalfSpace, HalfSpace]
    apex_velocity: np.ndarray
    source_pair: tuple[int, int]
    timestep: int


@dataclass(frozen=True)
class PolygonObstacle:
    """Convex CCW polygon plus the outer half-space of each edge."""

    vertices: np.ndarray            # (n, 2)
    halfspaces: tuple[HalfSpace, ...]

    def contains(self, p: np.ndarray) -> bool:
        """True when every edge constraint fails (point inside or on edge)."""
        return all(float(h.normal @ p) <= h.offset + _BOUNDARY_TOL
                   for h in self.halfspaces)

    def distance(self, p: np.ndarray) -> float:
        """Euclidean distance from p to the polygon (0 inside)."""
        p = np.asarray(p, dtype=float)
        if self.contains(p):
            return 0.0
        best = math.inf
        verts = self.vertices
        n = len(verts)
        for i in range(n):
            a = verts[i]
            b = verts[(i + 1) % n]
            ab = b - a
            t = float(np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0))
            best = min(best, float(np.linalg.norm(p - (a + t * ab))))
        return best


def build_collision_cone(p_i: np.ndarray, p_j: np.ndarray,
                         r_i: float, r_j: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals of the two tangent lines of the collision cone.

    The cone is anchored on p_ij = p_i - p_j: with alpha the half-angle
    (sin alpha = (r_i + r_j)/|p_ij|), the tangents are p_ij rotated by
    +/-alpha and each normal is the tangent rotated a quarter turn toward
    the cone interior.  Velocities v with both normal . v <= 0 point from
    agent i into the combined disc around agent j.
    """
    p_ij = np.asarray(p_i, dtype=float) - np.asarray(p_j, dtype=float)
    dist = float(np.linalg.norm(p_ij))
    r = r_i + r_j
    if dist <= r:
        raise OverlapError(f"agent discs overlap: |p_ij|={dist:.6g} <= r={r:.6g}")
    alpha = math.asin(r / dist)
    t1 = rotate(alpha, p_ij)
    t2 = rotate(-alpha, p_ij)
    n1 = rotate(-math.pi / 2.0, t1)
    n2 = rotate(math.pi / 2.0, t2)
    return n1 / np.linalg.norm(n1), n2 / np.linalg.norm(n2)


def build_velocity_obstacle(cone_normals: tuple[np.ndarray, np.ndarray],
                            v_j: np.ndarray,
                            pair: tuple[int, int] = (0, 1),
                            k: int = 0) -> VelocityObstacle:
    """Translate a collision cone by the neighbor velocity v_j."""
    v_j = np.asarray(v_j, dtype=float)
    n1, n2 = cone_normals
    return VelocityObstacle(
        halfspaces=(HalfSpace(n1, float(n1 @ v_j)),
                    HalfSpace(n2, float(n2 @ v_j))),
        apex_velocity=v_j,
        source_pair=pair,
        timestep=k,
    )


def vo_contains(vo: VelocityObstacle, v: np.ndarray) -> bool:
    """True when v is inside the obstacle (both constraints fail).

    Boundary velocities count as inside: escaping the obstacle requires at
    least one constraint to hold, and the planner enforces it with >=, so
    the conservative reading keeps the two sides complementary.
    """
    v = np.asarray(v, dtype=float)
    h1, h2 = vo.halfspaces
    return (float(h1.normal @ v) <= h1.offset + _BOUNDARY_TOL
            and float(h2.normal @ v) <= h2.offset + _BOUNDARY_TOL)


def ray_hits_disc(origin: np.ndarray, direction: np.ndarray,
                  center: np.ndarray, radius: float) -> bool:
    """Whether the ray origin + t*direction (t >= 0) meets the closed disc.

    Independent membership oracle for velocity obstacles: agent i on
    velocity v collides with agent j exactly when the relative-velocity ray
    from p_i hits the disc of radius r_i + r_j around p_j.
    """
    d = np.asarray(direction, dtype=float)
    rel = np.asarray(center, dtype=float) - np.asarray(origin, dtype=float)
    dd = float(d @ d)
    if dd == 0.0:
        return float(rel @ rel) <= radius * radius
    t = max(float(rel @ d) / dd, 0.0)
    closest = rel - t * d
    return float(closest @ closest) <= radius * radius


def polygon_to_halfspaces(vertices) -> PolygonObstacle:
    """Edge half-spaces of a convex CCW polygon.

    Each edge contributes its outward normal n and offset b = n . vertex;
    free space satisfies n . p >= b for at least one edge, and a point is
    inside the polygon exactly when every edge constraint fails.
    """
    verts = np.asarray(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
        raise DegenerateError("polygon needs at least 3 two-dimensional vertices")
    n = len(verts)
    for i in range(n):
        if np.linalg.norm(verts[i] - verts[(i + 1) % n]) < 1e-9:
            raise DegenerateError(f"repeated vertex at index {i}")
    crosses = []
    for i in range(n):
        e1 = verts[(i + 1) % n] - verts[i]
        e2 = verts[(i + 2) % n] - verts[(i + 1) % n]
        crosses.append(float(e1[0] * e2[1] - e1[1] * e2[0]))
    if any(abs(c) < 1e-9 for c in crosses):
        raise DegenerateError("collinear vertex triple")
    if any(c < 0 for c in crosses):
        raise NonConvexError("vertices must wind counterclockwise and be convex")

    halfspaces = []
    for i in range(n):
        edge = verts[(i + 1) % n] - verts[i]
        normal = np.array([edge[1], -edge[0]])    # outward for CCW winding
        normal = normal / np.linalg.norm(normal)
        halfspaces.append(HalfSpace(normal, float(normal @ verts[i])))
    return PolygonObstacle(vertices=verts, halfspaces=tuple(halfspaces))


def inflate_polygon(obstacle: PolygonObstacle, r: float) -> PolygonObstacle:
    """Shift every edge outward by r (mitred offset of the blocked region).

    Constraining an agent's center against the inflated region keeps the
    full disc of radius r out of the original polygon.
    """
    if r < 0:
        raise ValueError("inflation radius must be nonnegative")
    shifted = tuple(HalfSpace(h.normal, h.offset + r) for h in obstacle.halfspaces)
    # vertices of the inflated region: intersection of adjacent shifted edges
    n = len(shifted)
    verts = []
    for i in range(n):
        h1 = shifted[(i - 1) % n]
        h2 = shifted[i]
        mat = np.vstack([h1.normal, h2.normal])
        verts.append(np.linalg.solve(mat, np.array([h1.offset, h2.offset])))
    return PolygonObstacle(vertices=np.asarray(verts), halfspaces=shifted)
