"""Closed contours, crossing detection and Douglas-Peucker crossing repair."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class RepairError(RuntimeError):
    """Self-intersections survived every simplification tolerance."""


@dataclass(frozen=True)
class Contour:
    """Implicitly closed polygon; the last point connects back to the first."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def area(self) -> float:
        return abs(signed_area(self.points))

    def deduplicated(self, tol=1e-12) -> "Contour":
        pts = self.points
        if len(pts) < 2:
            return self
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.hypot(*np.diff(pts, axis=0).T) > tol
        pts = pts[keep]
        while len(pts) > 1 and np.hypot(*(pts[-1] - pts[0])) <= tol:
            pts = pts[:-1]
        return Contour(pts)


def signed_area(pts) -> float:
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def find_crossings(points) -> list:
    """Pairs ``(i, j)``, ``i < j``, of non-adjacent edges that properly cross.

    Edge ``k`` joins point ``k`` to point ``k + 1`` (wrapping). Touching at a
    vertex or collinear overlap is not a crossing.
    """
    p = np.asarray(points, dtype=float)
    n = len(p)
    if n < 4:
        return []
    a = p
    b = np.roll(p, -1, axis=0)
    ax, ay, bx, by = (v[:, None] for v in (a[:, 0], a[:, 1], b[:, 0], b[:, 1]))
    cx, cy, dx, dy = (v[None, :] for v in (a[:, 0], a[:, 1], b[:, 0], b[:, 1]))
    o1 = np.sign(_orient(ax, ay, bx, by, cx, cy))
    o2 = np.sign(_orient(ax, ay, bx, by, dx, dy))
    o3 = np.sign(_orient(cx, cy, dx, dy, ax, ay))
    o4 = np.sign(_orient(cx, cy, dx, dy, bx, by))
    cross = (o1 * o2 < 0) & (o3 * o4 < 0)
    idx = np.arange(n)
    gap = idx[None, :] - idx[:, None]
    valid = (gap >= 2) & ~((idx[:, None] == 0) & (idx[None, :] == n - 1))
    i, j = np.nonzero(cross & valid)
    return list(zip(i.tolist(), j.tolist()))


def _intersection(p1, p2, p3, p4):
    d1 = p2 - p1
    d2 = p4 - p3
    den = d1[0] * d2[1] - d1[1] * d2[0]
    s = ((p3[0] - p1[0]) * d2[1] - (p3[1] - p1[1]) * d2[0]) / den
    return p1 + s * d1


def _point_segment_distance(pts, a, b):
    ab = b - a
    L2 = float(ab @ ab)
    if L2 == 0.0:
        return np.hypot(*(pts - a).T)
    s = np.clip((pts - a) @ ab / L2, 0.0, 1.0)
    proj = a + s[:, None] * ab
    return np.hypot(*(pts - proj).T)


def douglas_peucker(points, eta) -> np.ndarray:
    """Indices of the points kept when simplifying an open polyline to tolerance ``eta``.

    End points are always kept. A degenerate chord (identical end points)
    measures distance to that point.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n <= 2:
        return np.arange(n)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        d = _point_segment_distance(pts[lo + 1:hi], pts[lo], pts[hi])
        k = int(np.argmax(d))
        if d[k] > eta:
            mid = lo + 1 + k
            keep[mid] = True
            stack.append((lo, mid))
            stack.append((mid, hi))
    return np.flatnonzero(keep)


def _candidates(pts, i, j, eta):
    """Simplifications of the two sub-paths around the crossing of edges i and j."""
    n = len(pts)
    x = _intersection(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n])
    inner = list(range(i + 1, j + 1))                       # points between the crossing edges
    outer = list(range(j + 1, n)) + list(range(0, i + 1))   # the rest of the ring
    out = []
    # open sub-path anchored at the crossing edges' outer end points
    path = [i] + inner + [(j + 1) % n]
    kept = douglas_peucker(pts[path], eta)
    new_inner = [path[k] for k in kept[1:-1]]
    out.append(np.vstack([pts[:i + 1], pts[new_inner].reshape(-1, 2), pts[j + 1:]]))
    path = [j] + outer + [i + 1]
    kept = douglas_peucker(pts[path], eta)
    new_outer = [path[k] for k in kept[1:-1]]
    out.append(np.vstack([pts[new_outer].reshape(-1, 2), pts[i + 1:j + 1]]))
    # loops anchored at the crossing point; accepted only once fully collapsed
    loop = np.vstack([x, pts[inner], x])
    if len(douglas_peucker(loop, eta)) == 2:
        out.append(np.vstack([pts[:i + 1], x, pts[j + 1:]]))
    loop = np.vstack([x, pts[outer], x])
    if len(douglas_peucker(loop, eta)) == 2:
        out.append(np.vstack([x, pts[i + 1:j + 1]]))
    return out


def repair_self_intersections(contour: Contour, eta0: float, growth: float = 2.0,
                              max_eta: float = None) -> Contour:
    """Remove crossings by simplifying only the sub-paths that contain them.

    For each crossing, the tolerance starts at ``eta0`` and is multiplied by
    ``growth`` until some simplification reduces the crossing count; among
    the successful candidates the one changing the enclosed area least wins.
    """
    if eta0 <= 0 or growth <= 1:
        raise ValueError("need eta0 > 0 and growth > 1")
    pts = Contour(contour.points).deduplicated().points
    if max_eta is None:
        span = pts.max(axis=0) - pts.min(axis=0) if len(pts) else np.zeros(2)
        max_eta = max(float(np.hypot(*span)), eta0)
    crossings = find_crossings(pts)
    while crossings:
        i, j = crossings[0]
        eta = eta0
        base_area = abs(signed_area(pts))
        while True:
            best = None
            for cand in _candidates(pts, i, j, eta):
                cand = Contour(cand).deduplicated().points
                if len(cand) < 3:
                    continue
                remaining = find_crossings(cand)
                if len(remaining) >= len(crossings):
                    continue
                change = abs(abs(signed_area(cand)) - base_area)
                if best is None or change < best[0]:
                    best = (change, cand, remaining)
            if best is not None:
                _, pts, crossings = best
                break
            if eta >= max_eta:
                raise RepairError(f"crossing of edges {i} and {j} persists at tolerance {eta:.4g}")
            eta = min(eta * growth, max_eta)
    return Contour(pts)
