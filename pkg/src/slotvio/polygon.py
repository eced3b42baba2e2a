"""Planar convex-polygon helpers: shoelace area, Sutherland-Hodgman clipping."""

from __future__ import annotations

import numpy as np


def signed_area(poly) -> float:
    p = np.asarray(poly, dtype=float)[:, :2]
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def area(poly) -> float:
    return abs(signed_area(poly))


def ccw(poly):
    p = np.asarray(poly, dtype=float)[:, :2]
    return p if signed_area(p) >= 0 else p[::-1]


def is_convex(poly, eps: float = 1e-12) -> bool:
    p = np.asarray(poly, dtype=float)[:, :2]
    d1 = np.roll(p, -1, axis=0) - p
    d2 = np.roll(d1, -1, axis=0)
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    return bool(np.all(cross > eps) or np.all(cross < -eps))


def clip(subject, clipper):
    """Intersection of two convex polygons (Sutherland-Hodgman)."""
    out = [tuple(v) for v in ccw(subject)]
    c = ccw(clipper)
    n = len(c)
    for i in range(n):
        if not out:
            break
        a, b = c[i], c[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]

        def inside(pt):
            return ex * (pt[1] - a[1]) - ey * (pt[0] - a[0]) >= 0.0

        def cut(p, q):
            px, py = p
            qx, qy = q
            dx, dy = qx - px, qy - py
            den = ex * dy - ey * dx
            if den == 0.0:
                return p
            s = (ex * (a[1] - py) - ey * (a[0] - px)) / den
            return (px + s * dx, py + s * dy)

        inp = out
        out = []
        prev = inp[-1]
        for cur in inp:
            if inside(cur):
                if not inside(prev):
                    out.append(cut(prev, cur))
                out.append(cur)
            elif inside(prev):
                out.append(cut(prev, cur))
            prev = cur
    return np.array(out, dtype=float).reshape(-1, 2)


def intersection_area(a, b) -> float:
    inter = clip(a, b)
    if len(inter) < 3:
        return 0.0
    return area(inter)


def point_distance(points, poly):
    """Euclidean distance from each point to a convex polygon (0 inside)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))[:, :2]
    p = ccw(poly)
    a = p
    b = np.roll(p, -1, axis=0)
    ab = b - a
    rel = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("nkj,kj->nk", rel, ab) / np.einsum("kj,kj->k", ab, ab), 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    dist = np.linalg.norm(pts[:, None, :] - closest, axis=-1).min(axis=1)
    cross = ab[None, :, 0] * rel[..., 1] - ab[None, :, 1] * rel[..., 0]
    inside = np.all(cross >= 0.0, axis=1)
    return np.where(inside, 0.0, dist)


def rectangle(center, heading, width, length):
    """Corners of a slot rectangle, entrance edge first, counter-clockwise.

    ``heading`` is the direction of the slot's depth axis (entrance to back).
    """
    c = np.asarray(center, dtype=float)[:2]
    d = np.array([np.cos(heading), np.sin(heading)])
    w = np.array([d[1], -d[0]])
    hw, hl = 0.5 * width, 0.5 * length
    return np.array([c - hl * d - hw * w,
                     c - hl * d + hw * w,
                     c + hl * d + hw * w,
                     c + hl * d - hw * w])


def rectangle_params(corners):
    """Inverse of :func:`rectangle` for an (approximately) rectangular quad."""
    q = np.asarray(corners, dtype=float)[:, :2]
    center = q.mean(axis=0)
    entrance_mid = 0.5 * (q[0] + q[1])
    back_mid = 0.5 * (q[2] + q[3])
    depth = back_mid - entrance_mid
    heading = float(np.arctan2(depth[1], depth[0]))
    width = 0.5 * (np.linalg.norm(q[1] - q[0]) + np.linalg.norm(q[2] - q[3]))
    length = float(np.linalg.norm(depth))
    return center, heading, float(width), length
