"""Planar polygon helpers: areas, window clipping, path outlines, rasterization.

Polygons are ``(k, 2)`` float arrays without a repeated closing vertex.
"""

from __future__ import annotations

import numpy as np


def signed_area(pts: np.ndarray) -> float:
    """Shoelace area; positive for counter-clockwise vertex order."""
    x = pts[:, 0]
    y = pts[:, 1]
    return 0.5 * float(np.dot(x[:-1], y[1:]) + x[-1] * y[0] - np.dot(x[1:], y[:-1]) - x[0] * y[-1])


def is_convex(pts: np.ndarray) -> bool:
    d = np.roll(pts, -1, axis=0) - pts
    cross = d[:, 0] * np.roll(d[:, 1], -1) - d[:, 1] * np.roll(d[:, 0], -1)
    return bool(np.all(cross >= 0) or np.all(cross <= 0))


def is_axis_rectangle(pts: np.ndarray) -> bool:
    if len(pts) != 4:
        return False
    p = pts.tolist()
    horiz = []
    for (x0, y0), (x1, y1) in zip(p, p[1:] + p[:1]):
        if (x0 == x1) == (y0 == y1):
            return False  # degenerate or slanted edge
        horiz.append(y0 == y1)
    return horiz[0] != horiz[1]


def dedupe(pts: np.ndarray) -> np.ndarray:
    """Drop consecutive duplicate vertices, including a trailing copy of the first."""
    keep = np.any(pts != np.roll(pts, 1, axis=0), axis=1)
    if not keep.any():
        return pts[:1]
    return pts[keep]


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = float((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        return (v > 0) - (v < 0)

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


def is_simple(pts) -> bool:
    """True when no two non-adjacent edges touch (O(n^2), fine for layout shapes)."""
    pts = [tuple(p) for p in pts]
    n = len(pts)
    if n < 3:
        return False
    if n == 3:
        return True
    edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def trapezoids(pts: np.ndarray) -> list[np.ndarray]:
    """Split a simple polygon into horizontal-slab trapezoids (convex, y-monotone).

    Slabs run between consecutive distinct vertex y values; inside a slab the
    crossing edges are paired left to right by the even-odd rule.
    """
    ys = np.unique(pts[:, 1])
    a = pts
    b = np.roll(pts, -1, axis=0)
    sloped = a[:, 1] != b[:, 1]
    a, b = a[sloped], b[sloped]
    lo = np.minimum(a[:, 1], b[:, 1])
    hi = np.maximum(a[:, 1], b[:, 1])
    out = []
    for y0, y1 in zip(ys[:-1], ys[1:]):
        span = (lo <= y0) & (hi >= y1)
        if not span.any():
            continue
        ea, eb = a[span], b[span]
        t0 = (y0 - ea[:, 1]) / (eb[:, 1] - ea[:, 1])
        t1 = (y1 - ea[:, 1]) / (eb[:, 1] - ea[:, 1])
        x0 = ea[:, 0] + t0 * (eb[:, 0] - ea[:, 0])
        x1 = ea[:, 0] + t1 * (eb[:, 0] - ea[:, 0])
        order = np.argsort(0.5 * (x0 + x1), kind="stable")
        x0, x1 = x0[order], x1[order]
        for k in range(0, len(order) - 1, 2):
            quad = np.array([[x0[k], y0], [x0[k + 1], y0], [x1[k + 1], y1], [x1[k], y1]])
            quad = dedupe(quad)
            if len(quad) >= 3:
                out.append(quad)
    return out


def _clip_half_plane(pts: np.ndarray, axis: int, value: float, keep_below: bool) -> np.ndarray:
    if len(pts) == 0:
        return pts
    c = pts[:, axis]
    inside = c <= value if keep_below else c >= value
    out = []
    n = len(pts)
    for i in range(n):
        p, q = pts[i], pts[(i + 1) % n]
        pin, qin = inside[i], inside[(i + 1) % n]
        if pin:
            out.append(p)
        if pin != qin:
            t = (value - p[axis]) / (q[axis] - p[axis])
            r = p + t * (q - p)
            r[axis] = value
            out.append(r)
    return np.array(out) if out else np.empty((0, 2))


def clip_convex(pts: np.ndarray, window) -> np.ndarray:
    """Sutherland-Hodgman against the four window half-planes."""
    xmin, ymin, xmax, ymax = window
    for axis, value, below in ((0, xmin, False), (0, xmax, True), (1, ymin, False), (1, ymax, True)):
        pts = _clip_half_plane(pts, axis, value, below)
        if len(pts) == 0:
            break
    return pts


def clip_to_window(pts: np.ndarray, window) -> list[np.ndarray]:
    """Clip a simple polygon (possibly concave) to ``(xmin, ymin, xmax, ymax)``.

    Returns zero or more counter-clockwise pieces whose union is the
    intersection.
    """
    xmin, ymin, xmax, ymax = window
    bx0, by0 = pts.min(axis=0)
    bx1, by1 = pts.max(axis=0)
    if bx1 <= xmin or bx0 >= xmax or by1 <= ymin or by0 >= ymax:
        return []
    if bx0 >= xmin and bx1 <= xmax and by0 >= ymin and by1 <= ymax:
        pieces = [pts]
    elif is_convex(pts):
        pieces = [clip_convex(pts, window)]
    else:
        pieces = [clip_convex(t, window) for t in trapezoids(pts)]
    out = []
    for p in pieces:
        if len(p) < 3:
            continue
        p = dedupe(p)
        if len(p) < 3:
            continue
        area = signed_area(p)
        if area == 0.0:
            continue
        out.append(p if area > 0 else p[::-1].copy())
    return out


def path_outline(points: np.ndarray, width: float) -> np.ndarray:
    """Outline polygon of a path with flush (square) ends and mitred joints."""
    pts = dedupe(np.asarray(points, dtype=float))
    if len(pts) >= 2 and np.array_equal(pts[0], pts[-1]):
        pts = pts[:-1]
    # drop interior vertices on straight runs
    keep = [0]
    for i in range(1, len(pts) - 1):
        d0 = pts[i] - pts[keep[-1]]
        d1 = pts[i + 1] - pts[i]
        if d0[0] * d1[1] - d0[1] * d1[0] != 0:
            keep.append(i)
    keep.append(len(pts) - 1)
    pts = pts[keep]
    if len(pts) < 2:
        raise ValueError("path needs at least two distinct points")
    half = 0.5 * width
    d = np.diff(pts, axis=0)
    d = d / np.hypot(d[:, 0], d[:, 1])[:, None]
    nrm = np.column_stack([-d[:, 1], d[:, 0]])
    left, right = [pts[0] + half * nrm[0]], [pts[0] - half * nrm[0]]
    for i in range(1, len(pts) - 1):
        n0, n1 = nrm[i - 1], nrm[i]
        # miter vector m with m.n0 = m.n1 = half
        m = n0 + n1
        m = m * (half / np.dot(m, n0))
        left.append(pts[i] + m)
        right.append(pts[i] - m)
    left.append(pts[-1] + half * nrm[-1])
    right.append(pts[-1] - half * nrm[-1])
    outline = np.array(right + left[::-1])
    if signed_area(outline) < 0:
        outline = outline[::-1].copy()
    return outline


def rasterize(polygons, xc: np.ndarray, yc: np.ndarray) -> np.ndarray:
    """Boolean ``(len(xc), len(yc))`` mask of grid points lying inside any polygon.

    Membership is half-open: a point is inside ``[x0, x1) x [y0, y1)`` for an
    axis-aligned rectangle; general polygons use the even-odd crossing rule,
    which gives the same convention.
    """
    mask = np.zeros((len(xc), len(yc)), dtype=bool)
    X = Y = None
    for pts in polygons:
        if is_axis_rectangle(pts):
            x0, y0 = pts.min(axis=0)
            x1, y1 = pts.max(axis=0)
            i0, i1 = np.searchsorted(xc, [x0, x1], side="left")
            j0, j1 = np.searchsorted(yc, [y0, y1], side="left")
            mask[i0:i1, j0:j1] = True
            continue
        if X is None:
            X, Y = np.meshgrid(xc, yc, indexing="ij")
        a = pts
        b = np.roll(pts, -1, axis=0)
        inside = np.zeros(X.shape, dtype=bool)
        for (ax, ay), (bx, by) in zip(a, b):
            if ay == by:
                continue
            straddle = (ay > Y) != (by > Y)
            xint = ax + (Y - ay) * (bx - ax) / (by - ay)
            inside ^= straddle & (X < xint)
        mask |= inside
    return mask
