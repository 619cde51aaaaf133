"""Small 2D predicates used by event detection and hole reconnection.

All inputs are plain (2,) arrays or array-likes in a single flat chart
(no wrap handling here).  Crossing tests reject proper crossings using
orientation signs; a tolerance eps widens the test to catch grazing
contacts when requested.
"""

from __future__ import annotations

import numpy as np


def cross2(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def orient(p, q, r) -> float:
    """Twice the signed area of triangle (p, q, r); >0 for a left turn."""
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def rot90(v):
    """Counter-clockwise quarter turn."""
    return np.array([-v[1], v[0]])


def segments_cross(p1, q1, p2, q2, eps: float = 0.0) -> bool:
    """True if closed segments [p1,q1] and [p2,q2] intersect.

    Shared endpoints within eps are NOT counted as a crossing, so chains of
    segments meeting at junctions test clean.
    """
    for a, b in ((p1, p2), (p1, q2), (q1, p2), (q1, q2)):
        if abs(a[0] - b[0]) <= eps and abs(a[1] - b[1]) <= eps:
            return False
    o1 = orient(p1, q1, p2)
    o2 = orient(p1, q1, q2)
    o3 = orient(p2, q2, p1)
    o4 = orient(p2, q2, q1)
    if ((o1 > eps and o2 < -eps) or (o1 < -eps and o2 > eps)) and \
       ((o3 > eps and o4 < -eps) or (o3 < -eps and o4 > eps)):
        return True
    # collinear / grazing overlaps
    if abs(o1) <= eps and _on_segment(p1, q1, p2, eps):
        return True
    if abs(o2) <= eps and _on_segment(p1, q1, q2, eps):
        return True
    if abs(o3) <= eps and _on_segment(p2, q2, p1, eps):
        return True
    if abs(o4) <= eps and _on_segment(p2, q2, q1, eps):
        return True
    return False


def _on_segment(a, b, p, eps) -> bool:
    """p collinear with [a,b]: does it lie within the segment's box?"""
    return (min(a[0], b[0]) - eps <= p[0] <= max(a[0], b[0]) + eps and
            min(a[1], b[1]) - eps <= p[1] <= max(a[1], b[1]) + eps)


def point_segment_distance(p, a, b) -> float:
    """Distance from p to segment [a, b], with the foot clamped inside."""
    ab = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    ap = np.asarray(p, dtype=float) - np.asarray(a, dtype=float)
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.hypot(*ap))
    t = float(np.clip((ap @ ab) / denom, 0.0, 1.0))
    d = ap - t * ab
    return float(np.hypot(d[0], d[1]))


def polygon_is_simple(xy: np.ndarray, eps: float = 0.0) -> bool:
    """True if the closed polygon with vertex rows xy is simple.

    Adjacent sides share a vertex and are exempt; all other side pairs must
    not intersect.  O(m^2), intended for single facets.
    """
    m = len(xy)
    for i in range(m):
        p1, q1 = xy[i], xy[(i + 1) % m]
        for j in range(i + 1, m):
            if j == i or (j + 1) % m == i or (i + 1) % m == j:
                continue
            p2, q2 = xy[j], xy[(j + 1) % m]
            if segments_cross(p1, q1, p2, q2, eps):
                return False
    return True


def polygon_area2(xy: np.ndarray) -> float:
    """Twice the signed (shoelace) area; positive for CCW."""
    x, y = xy[:, 0], xy[:, 1]
    return float(x @ np.roll(y, -1) - y @ np.roll(x, -1))


def polygon_is_convex(xy: np.ndarray, eps: float = 0.0) -> bool:
    """Strict convexity of a CCW polygon: every turn is a left turn."""
    m = len(xy)
    for i in range(m):
        if orient(xy[i], xy[(i + 1) % m], xy[(i + 2) % m]) <= eps:
            return False
    return True
