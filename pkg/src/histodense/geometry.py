"""Planar polygon helpers: shoelace area, bounding box, rectangle clipping.

Polygons are sequences of (x, y) vertex pairs, implicitly closed. Clip
windows are axis-aligned rectangles, so Sutherland-Hodgman clipping is
exact: the window is convex and every output region is a single polygon.
"""

from __future__ import annotations

from typing import Sequence

Point = tuple[float, float]
Polygon = Sequence[Point]


def shoelace_area(polygon: Polygon) -> float:
    """Unsigned area of a polygon via the shoelace formula."""
    n = len(polygon)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = polygon[i]
        x1, y1 = polygon[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return abs(acc) / 2.0


def signed_area(polygon: Polygon) -> float:
    n = len(polygon)
    acc = 0.0
    for i in range(n):
        x0, y0 = polygon[i]
        x1, y1 = polygon[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return acc / 2.0


def bounding_box(polygon: Polygon) -> tuple[float, float, float, float]:
    """(min_x, min_y, max_x, max_y) over the vertices."""
    xs = [p[0] for p in polygon]
    ys = [p[1] for p in polygon]
    return min(xs), min(ys), max(xs), max(ys)


def clip_to_rect(
    polygon: Polygon, x0: float, y0: float, x1: float, y1: float
) -> list[Point]:
    """Clip a simple polygon against the rectangle [x0,x1] x [y0,y1].

    Sutherland-Hodgman against the four half-planes in turn. Points on a
    clip edge count as inside, so shared boundaries clip consistently.
    Returns the clipped vertex list; may be empty or degenerate (zero
    area) when the polygon only touches the window.
    """
    out = list(polygon)
    # (predicate, intersection-parameter) per window edge: left, right, bottom, top
    for inside, cross in (
        (lambda p: p[0] >= x0, lambda s, e: _cross_x(s, e, x0)),
        (lambda p: p[0] <= x1, lambda s, e: _cross_x(s, e, x1)),
        (lambda p: p[1] >= y0, lambda s, e: _cross_y(s, e, y0)),
        (lambda p: p[1] <= y1, lambda s, e: _cross_y(s, e, y1)),
    ):
        if not out:
            return []
        src = out
        out = []
        s = src[-1]
        s_in = inside(s)
        for e in src:
            e_in = inside(e)
            if e_in:
                if not s_in:
                    out.append(cross(s, e))
                out.append(e)
            elif s_in:
                out.append(cross(s, e))
            s, s_in = e, e_in
    return out


def _cross_x(s: Point, e: Point, x: float) -> Point:
    t = (x - s[0]) / (e[0] - s[0])
    return (x, s[1] + t * (e[1] - s[1]))


def _cross_y(s: Point, e: Point, y: float) -> Point:
    t = (y - s[1]) / (e[1] - s[1])
    return (s[0] + t * (e[0] - s[0]), y)


def clipped_area(polygon: Polygon, x0: float, y0: float, x1: float, y1: float) -> float:
    return shoelace_area(clip_to_rect(polygon, x0, y0, x1, y1))
