"""Independent reference implementations used only by the test suite.

These deliberately avoid the library's fast paths: the planner oracle
enumerates sequences one by one through the scalar step/feature code, the
overlap oracle decides contact through polygon distances instead of
separating axes, and the drivable oracle classifies points through its own
formulation. Tests compare library outputs against these.
"""

from __future__ import annotations

import math
from itertools import product

from roundsim.geometry import OrientedRect
from roundsim.kinematics import action_catalog, step
from roundsim.reward import TrafficState, cumulative_reward, features, stage_reward

_CATALOG = tuple(action_catalog())


def oracle_plan(X, route_id, opp_track, params, layout, w, zones):
    """Exhaustive scalar search. Returns (best digit tuple, best value, all values).

    Sequences enumerate lexicographically; ties keep the first maximum, which
    is exactly the planner's contract.
    """
    n = params.horizon_n
    values = []
    best_seq = None
    best_val = -math.inf
    for seq in product(range(6), repeat=n):
        cur = X.ego
        rewards = []
        for j, d in enumerate(seq):
            nxt = step(cur, _CATALOG[d], params.dt, params.v_max)
            Xj = TrafficState(nxt, opp_track[j + 1])
            phi = features(Xj, route_id, cur, layout, zones)
            rewards.append(stage_reward(phi, w))
            cur = nxt
        val = cumulative_reward(rewards, params.lam)
        values.append(val)
        if val > best_val:
            best_val = val
            best_seq = seq
    return best_seq, best_val, values


# --- independent overlap decision via polygon distance ---------------------


def _seg_seg_dist(p1, p2, q1, q2) -> float:
    """Minimum distance between two segments (0 when they intersect)."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return 0.0

    def pt_seg(p, a, b):
        ax, ay = a
        bx, by = b
        dx = bx - ax
        dy = by - ay
        L2 = dx * dx + dy * dy
        if L2 == 0.0:
            return math.hypot(p[0] - ax, p[1] - ay)
        t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / L2
        t = min(1.0, max(0.0, t))
        return math.hypot(p[0] - (ax + t * dx), p[1] - (ay + t * dy))

    return min(
        pt_seg(p1, q1, q2),
        pt_seg(p2, q1, q2),
        pt_seg(q1, p1, p2),
        pt_seg(q2, p1, p2),
    )


def _point_in_convex(p, poly) -> bool:
    sign = 0
    n = len(poly)
    for i in range(n):
        a = poly[i]
        b = poly[(i + 1) % n]
        cr = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        if cr > 0:
            if sign < 0:
                return False
            sign = 1
        elif cr < 0:
            if sign > 0:
                return False
            sign = -1
    return True


def polygon_distance(pa, pb) -> float:
    """Minimum distance between two convex polygons; 0 iff they touch/overlap."""
    if _point_in_convex(pa[0], pb) or _point_in_convex(pb[0], pa):
        return 0.0
    best = math.inf
    na = len(pa)
    nb = len(pb)
    for i in range(na):
        for j in range(nb):
            d = _seg_seg_dist(pa[i], pa[(i + 1) % na], pb[j], pb[(j + 1) % nb])
            if d < best:
                best = d
    return best


def oracle_rects_touch(a: OrientedRect, b: OrientedRect) -> bool:
    return polygon_distance(a.corners(), b.corners()) == 0.0


def oracle_rect_margin(a: OrientedRect, b: OrientedRect) -> float:
    """Positive gap between the rects, or 0 when they touch/overlap."""
    return polygon_distance(a.corners(), b.corners())


# --- independent drivable-point classification ------------------------------


def oracle_point_drivable(layout, px: float, py: float) -> bool:
    """Re-derivation of the drivable region: annulus by radial distance,
    road strips as explicit convex quadrilaterals."""
    r = math.hypot(px - layout.center_x, py - layout.center_y)
    if layout.island_radius <= r <= layout.outer_radius:
        return True
    for ap in layout.approaches:
        a0 = (
            layout.center_x + ap.ux * layout.island_radius + ap.wx * layout.lane_width,
            layout.center_y + ap.uy * layout.island_radius + ap.wy * layout.lane_width,
        )
        a1 = (
            layout.center_x + ap.ux * layout.approach_length + ap.wx * layout.lane_width,
            layout.center_y + ap.uy * layout.approach_length + ap.wy * layout.lane_width,
        )
        a2 = (
            layout.center_x + ap.ux * layout.approach_length - ap.wx * layout.lane_width,
            layout.center_y + ap.uy * layout.approach_length - ap.wy * layout.lane_width,
        )
        a3 = (
            layout.center_x + ap.ux * layout.island_radius - ap.wx * layout.lane_width,
            layout.center_y + ap.uy * layout.island_radius - ap.wy * layout.lane_width,
        )
        if _point_in_convex((px, py), (a0, a1, a2, a3)):
            return True
    return False


def oracle_rect_off_road(layout, rect: OrientedRect, grid: float = 0.1) -> bool:
    """Dense-grid off-road decision over the whole rectangle area."""
    c = math.cos(rect.heading)
    s = math.sin(rect.heading)
    hl = 0.5 * rect.length
    hw = 0.5 * rect.width
    nx = max(2, int(math.ceil(rect.length / grid)) + 1)
    ny = max(2, int(math.ceil(rect.width / grid)) + 1)
    for i in range(nx):
        dx = -hl + rect.length * i / (nx - 1)
        for k in range(ny):
            dy = -hw + rect.width * k / (ny - 1)
            px = rect.cx + dx * c - dy * s
            py = rect.cy + dx * s + dy * c
            if not oracle_point_drivable(layout, px, py):
                return True
    return False
