"""Small planar and mesh geometry helpers shared by the generators."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull, QhullError


def triangle_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    if len(faces) == 0:
        return np.zeros(0)
    v = vertices[faces]
    return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def hull_vertices_2d(points: np.ndarray) -> np.ndarray:
    """Convex hull corners of a 2D point set; falls back to the input for degenerate sets."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 3:
        return points
    try:
        hull = ConvexHull(points)
    except QhullError:
        return points
    return points[hull.vertices]


def convex_hull_area(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 3:
        return 0.0
    try:
        return float(ConvexHull(points).volume)
    except QhullError:
        return 0.0


def _circle_two(a, b):
    c = 0.5 * (a + b)
    return c, float(np.hypot(*(a - c)))


def _circle_three(a, b, c):
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    if d == 0.0:
        # collinear: the widest pair bounds all three
        pairs = [(a, b), (a, c), (b, c)]
        return max((_circle_two(p, q) for p, q in pairs), key=lambda cr: cr[1])
    a2 = ax * ax + ay * ay
    b2 = bx * bx + by * by
    c2 = cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    centre = np.array([ux, uy])
    return centre, float(np.hypot(*(a - centre)))


def min_enclosing_circle(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Smallest circle containing all 2D points (randomised incremental, Welzl style).

    Runs on the convex hull corners, which define the same circle. The shuffle uses a fixed
    seed so results are reproducible.
    """
    pts = hull_vertices_2d(np.asarray(points, dtype=np.float64).reshape(-1, 2))
    if len(pts) == 0:
        return np.zeros(2), 0.0
    if len(pts) == 1:
        return pts[0].copy(), 0.0
    pts = pts[np.random.default_rng(0).permutation(len(pts))]
    tol = 1e-12

    def inside(c, r, p):
        return np.hypot(*(p - c)) <= r * (1 + tol) + tol

    c, r = pts[0].copy(), 0.0
    for i in range(1, len(pts)):
        if inside(c, r, pts[i]):
            continue
        c, r = pts[i].copy(), 0.0
        for j in range(i):
            if inside(c, r, pts[j]):
                continue
            c, r = _circle_two(pts[i], pts[j])
            for k in range(j):
                if not inside(c, r, pts[k]):
                    c, r = _circle_three(pts[i], pts[j], pts[k])
    return c, r


def circle_intersection_area(d: float, r1: float, r2: float) -> float:
    """Area of the lens shared by two circles with centre distance ``d``."""
    if d >= r1 + r2:
        return 0.0
    small, large = min(r1, r2), max(r1, r2)
    if d <= large - small:
        return float(np.pi * small * small)
    tiny = np.finfo(np.float64).tiny
    a1 = np.arccos(np.clip((d * d + r1 * r1 - r2 * r2) / max(2 * d * r1, tiny), -1.0, 1.0))
    a2 = np.arccos(np.clip((d * d + r2 * r2 - r1 * r1) / max(2 * d * r2, tiny), -1.0, 1.0))
    tri = 0.5 * np.sqrt(max(0.0, (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)))
    return float(r1 * r1 * a1 + r2 * r2 * a2 - tri)


def orthonormal_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors ``u, v`` with ``u x v = axis`` for each row of ``axis`` (unit vectors)."""
    axis = np.atleast_2d(axis)
    helper = np.where(np.abs(axis[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    u = np.cross(helper, axis)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(axis, u)
    return u, v
