"""Planar geometry: oriented rectangles, separating-axis overlap, polylines."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def rect_corners(cx: float, cy: float, heading: float, half_len: float, half_wid: float):
    """Corners of an oriented rectangle, counter-clockwise."""
    c, s = math.cos(heading), math.sin(heading)
    ax, ay = c * half_len, s * half_len
    bx, by = -s * half_wid, c * half_wid
    return (
        (cx + ax + bx, cy + ay + by),
        (cx - ax + bx, cy - ay + by),
        (cx - ax - bx, cy - ay - by),
        (cx + ax - bx, cy + ay - by),
    )


def _project(corners, axis_x: float, axis_y: float):
    lo = hi = corners[0][0] * axis_x + corners[0][1] * axis_y
    for x, y in corners[1:]:
        d = x * axis_x + y * axis_y
        if d < lo:
            lo = d
        elif d > hi:
            hi = d
    return lo, hi


def obb_overlap(a, b) -> bool:
    """Separating-axis test for two oriented rectangles.

    ``a`` and ``b`` are ``(cx, cy, heading, half_len, half_wid)`` tuples.
    Touching edges count as overlap.
    """
    ax, ay, ah, al, aw = a
    bx, by, bh, bl, bw = b
    reach = math.hypot(al, aw) + math.hypot(bl, bw)
    dx, dy = bx - ax, by - ay
    if dx * dx + dy * dy > reach * reach:
        return False
    ca = rect_corners(*a)
    cb = rect_corners(*b)
    for h in (ah, bh):
        c, s = math.cos(h), math.sin(h)
        for axis_x, axis_y in ((c, s), (-s, c)):
            lo1, hi1 = _project(ca, axis_x, axis_y)
            lo2, hi2 = _project(cb, axis_x, axis_y)
            if hi1 < lo2 or hi2 < lo1:
                return False
    return True


def point_in_rect(px: float, py: float, rect) -> bool:
    cx, cy, h, hl, hw = rect
    dx, dy = px - cx, py - cy
    c, s = math.cos(h), math.sin(h)
    lx = dx * c + dy * s
    ly = -dx * s + dy * c
    return abs(lx) <= hl and abs(ly) <= hw


def segment_hits_rect(p0, p1, rect) -> bool:
    """True if the closed segment p0-p1 touches the oriented rectangle.

    Clips the segment against the rectangle in its local frame (Liang-Barsky).
    """
    cx, cy, h, hl, hw = rect
    c, s = math.cos(h), math.sin(h)

    def local(p):
        dx, dy = p[0] - cx, p[1] - cy
        return dx * c + dy * s, -dx * s + dy * c

    x0, y0 = local(p0)
    x1, y1 = local(p1)
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 + hl), (dx, hl - x0), (-dy, y0 + hw), (dy, hw - y0)):
        if p == 0.0:
            if q < 0.0:
                return False
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return False
            if r > t0:
                t0 = r
        else:
            if r < t0:
                return False
            if r < t1:
                t1 = r
    return t0 <= t1


@dataclass(frozen=True)
class Projection:
    s: float  # arclength of the closest point
    offset: float  # signed lateral offset, positive to the left of travel
    heading: float  # tangent heading at the closest point
    x: float
    y: float


class Polyline:
    """A 2D polyline parameterised by arclength."""

    def __init__(self, points):
        pts = [(float(x), float(y)) for x, y in points]
        if len(pts) < 2:
            raise ValueError("polyline needs at least 2 points")
        cum = [0.0]
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            seg = math.hypot(x1 - x0, y1 - y0)
            if seg <= 0.0:
                raise ValueError("polyline arclength must be strictly increasing")
            cum.append(cum[-1] + seg)
        self.points = pts
        self.cum = cum
        self.length = cum[-1]
        self._headings = [
            math.atan2(y1 - y0, x1 - x0) for (x0, y0), (x1, y1) in zip(pts, pts[1:])
        ]

    def __len__(self):
        return len(self.points)

    def heading_at(self, s: float) -> float:
        i = min(max(bisect.bisect_right(self.cum, s) - 1, 0), len(self._headings) - 1)
        return self._headings[i]

    def point_at(self, s: float):
        """Point and heading at arclength ``s``; extrapolates past both ends."""
        i = min(max(bisect.bisect_right(self.cum, s) - 1, 0), len(self._headings) - 1)
        h = self._headings[i]
        x0, y0 = self.points[i]
        d = s - self.cum[i]
        return x0 + d * math.cos(h), y0 + d * math.sin(h), h

    def project(self, x: float, y: float) -> Projection:
        best = None
        best_d2 = math.inf
        pts = self.points
        n = len(self._headings)
        for i in range(n):
            x0, y0 = pts[i]
            x1, y1 = pts[i + 1]
            sx, sy = x1 - x0, y1 - y0
            seg2 = sx * sx + sy * sy
            t = ((x - x0) * sx + (y - y0) * sy) / seg2
            # first and last segments extend to infinity so offsets stay signed past the ends
            if t < 0.0 and i > 0:
                t = 0.0
            elif t > 1.0 and i < n - 1:
                t = 1.0
            px, py = x0 + t * sx, y0 + t * sy
            d2 = (x - px) ** 2 + (y - py) ** 2
            if d2 < best_d2:
                best_d2 = d2
                best = (i, t, px, py)
        i, t, px, py = best
        h = self._headings[i]
        s = self.cum[i] + t * (self.cum[i + 1] - self.cum[i])
        offset = -(x - px) * math.sin(h) + (y - py) * math.cos(h)
        return Projection(s=s, offset=offset, heading=h, x=px, y=py)
