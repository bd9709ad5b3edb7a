"""Polygon helpers: area, bounding boxes, rectangle clipping.

Polygons are (m, 2) float arrays of (x, y) vertices in pixel coordinates,
implicitly closed (last vertex connects back to the first).
"""
from __future__ import annotations

import numpy as np


def polygon_area(polygon: np.ndarray) -> float:
    """Absolute shoelace area."""
    p = np.asarray(polygon, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def polygon_bbox(polygon: np.ndarray) -> tuple[float, float, float, float]:
    """(x_min, y_min, x_max, y_max)."""
    p = np.asarray(polygon, dtype=np.float64)
    return float(p[:, 0].min()), float(p[:, 1].min()), float(p[:, 0].max()), float(p[:, 1].max())


def clip_polygon_rect(polygon: np.ndarray, x0: float, y0: float,
                      x1: float, y1: float) -> np.ndarray | None:
    """Sutherland-Hodgman clip of a polygon against an axis-aligned rectangle.

    Returns the clipped vertex array, or None when nothing remains.  The
    rectangle is the closed region [x0, x1] x [y0, y1].
    """
    def clip_edge(points, inside, intersect):
        out = []
        m = len(points)
        for i in range(m):
            cur = points[i]
            prev = points[i - 1]
            cur_in = inside(cur)
            prev_in = inside(prev)
            if cur_in:
                if not prev_in:
                    out.append(intersect(prev, cur))
                out.append(cur)
            elif prev_in:
                out.append(intersect(prev, cur))
        return out

    def cross_x(bound):
        def f(a, b):
            t = (bound - a[0]) / (b[0] - a[0])
            return (bound, a[1] + t * (b[1] - a[1]))
        return f

    def cross_y(bound):
        def f(a, b):
            t = (bound - a[1]) / (b[1] - a[1])
            return (a[0] + t * (b[0] - a[0]), bound)
        return f

    pts = [tuple(v) for v in np.asarray(polygon, dtype=np.float64)]
    for inside, intersect in (
        (lambda p: p[0] >= x0, cross_x(x0)),
        (lambda p: p[0] <= x1, cross_x(x1)),
        (lambda p: p[1] >= y0, cross_y(y0)),
        (lambda p: p[1] <= y1, cross_y(y1)),
    ):
        pts = clip_edge(pts, inside, intersect)
        if not pts:
            return None
    result = np.array(pts, dtype=np.float64)
    if len(result) < 3 or polygon_area(result) == 0.0:
        return None
    return result
