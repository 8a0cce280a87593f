"""Roundabout geometry: the parametric layout, vehicle zones, and the exact
geometric predicates that back the reward features and terminal checks.

Conventions used throughout:

* World frame: x east, y north, angles counterclockwise from +x.
* The circulating lane is one-way counterclockwise.
* Each approach road is a straight strip of two lanes; driving on the right,
  the entry lane sits at positive lateral offset and the exit lane at negative
  lateral offset (lateral axis = right of inbound travel).
* All predicates are closed: touching boundaries counts as contact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

from .kinematics import VehicleState

TWO_PI = 2.0 * math.pi

# Wrong-way motion threshold for the cross product test, in m^2 per step.
# Small enough to never excuse real clockwise motion, large enough to ignore
# rounding on radial or stationary moves.
CW_EPS = 1e-9

# Spacing of boundary sample points used by the off-road predicate, metres.
BOUNDARY_SPACING = 0.25


def _snap(value: float) -> float:
    """Snap values within 1e-12 of an integer to that integer.

    Approach direction vectors for axis-aligned roads come out of cos/sin
    with ~1e-16 dust; snapping keeps projections exact.
    """
    r = round(value)
    if abs(value - r) <= 1e-12:
        return float(r)
    return value


# ---------------------------------------------------------------------------
# Oriented rectangles and the separating-axis overlap test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrientedRect:
    """Rectangle centred at (cx, cy), long axis along `heading`."""

    cx: float
    cy: float
    length: float
    width: float
    heading: float

    def corners(self) -> tuple[tuple[float, float], ...]:
        """Corner coordinates in a fixed order: (+l,+w), (-l,+w), (-l,-w), (+l,-w)."""
        c = math.cos(self.heading)
        s = math.sin(self.heading)
        hl = 0.5 * self.length
        hw = 0.5 * self.width
        out = []
        for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
            out.append((self.cx + (dx * c - dy * s), self.cy + (dx * s + dy * c)))
        return tuple(out)


def _project_interval(corners, ax: float, ay: float) -> tuple[float, float]:
    lo = hi = corners[0][0] * ax + corners[0][1] * ay
    for px, py in corners[1:]:
        d = px * ax + py * ay
        if d < lo:
            lo = d
        elif d > hi:
            hi = d
    return lo, hi


def rects_overlap(a: OrientedRect, b: OrientedRect) -> bool:
    """Closed overlap test between two oriented rectangles (separating axes).

    Touching boundaries count as overlap: separation requires a strict gap.
    """
    ca = a.corners()
    cb = b.corners()
    cah = math.cos(a.heading)
    sah = math.sin(a.heading)
    cbh = math.cos(b.heading)
    sbh = math.sin(b.heading)
    for ax, ay in ((cah, sah), (-sah, cah), (cbh, sbh), (-sbh, cbh)):
        alo, ahi = _project_interval(ca, ax, ay)
        blo, bhi = _project_interval(cb, ax, ay)
        if ahi < blo or bhi < alo:
            return False
    return True


# ---------------------------------------------------------------------------
# Segment intersection (closed), used for marking crossings
# ---------------------------------------------------------------------------


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _on_segment(ax, ay, bx, by, px, py) -> bool:
    """Whether collinear point p lies within the bounding box of segment ab."""
    return (
        min(ax, bx) <= px <= max(ax, bx)
        and min(ay, by) <= py <= max(ay, by)
    )


def segments_intersect(p1, p2, q1, q2) -> bool:
    """Closed intersection test between segments p1p2 and q1q2.

    Endpoints touching, collinear overlap and degenerate (zero-length)
    segments are all handled; touching counts.
    """
    d1 = _orient(q1[0], q1[1], q2[0], q2[1], p1[0], p1[1])
    d2 = _orient(q1[0], q1[1], q2[0], q2[1], p2[0], p2[1])
    d3 = _orient(p1[0], p1[1], p2[0], p2[1], q1[0], q1[1])
    d4 = _orient(p1[0], p1[1], p2[0], p2[1], q2[0], q2[1])
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    if d1 == 0 and _on_segment(q1[0], q1[1], q2[0], q2[1], p1[0], p1[1]):
        return True
    if d2 == 0 and _on_segment(q1[0], q1[1], q2[0], q2[1], p2[0], p2[1]):
        return True
    if d3 == 0 and _on_segment(p1[0], p1[1], p2[0], p2[1], q1[0], q1[1]):
        return True
    if d4 == 0 and _on_segment(p1[0], p1[1], p2[0], p2[1], q2[0], q2[1]):
        return True
    return False


# ---------------------------------------------------------------------------
# Vehicle zones
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZoneSpec:
    """Collision-zone and safety-zone dimensions, metres.

    Both zones are concentric with the vehicle and share its heading; the
    safety zone must contain the collision zone.
    """

    c_length: float = 5.0
    c_width: float = 2.0
    s_length: float = 8.0
    s_width: float = 2.4

    def __post_init__(self):
        if self.c_length <= 0 or self.c_width <= 0:
            raise ValueError("collision zone dimensions must be positive")
        if self.s_length < self.c_length or self.s_width < self.c_width:
            raise ValueError("safety zone must contain the collision zone")


DEFAULT_ZONES = ZoneSpec()


def c_zone(state: VehicleState, zones: ZoneSpec = DEFAULT_ZONES) -> OrientedRect:
    """Collision zone: rectangle centred on the vehicle, aligned with heading."""
    return OrientedRect(state.x, state.y, zones.c_length, zones.c_width, state.theta)


def s_zone(state: VehicleState, zones: ZoneSpec = DEFAULT_ZONES) -> OrientedRect:
    """Safety zone: larger concentric rectangle used for spacing pressure."""
    return OrientedRect(state.x, state.y, zones.s_length, zones.s_width, state.theta)


@lru_cache(maxsize=32)
def boundary_offsets(length: float, width: float, spacing: float = BOUNDARY_SPACING):
    """Local-frame offsets sampling a rectangle's boundary at <= spacing apart.

    Walks the perimeter corner to corner; every corner is included. The same
    offset table drives both the scalar and the vectorized off-road tests, so
    the two paths agree bit for bit.
    """
    hl = 0.5 * length
    hw = 0.5 * width
    loop = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    pts = []
    for i in range(4):
        x0, y0 = loop[i]
        x1, y1 = loop[(i + 1) % 4]
        edge_len = abs(x1 - x0) + abs(y1 - y0)
        n = max(1, math.ceil(edge_len / spacing))
        for k in range(n):
            t = k / n
            pts.append((x0 + t * (x1 - x0), y0 + t * (y1 - y0)))
    return tuple(pts)


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Approach:
    """One straight approach road.

    ux, uy point outward from the circle centre along the road axis; wx, wy
    point to the right of inbound travel, so the entry lane occupies lateral
    offsets [0, lane_width] and the exit lane [-lane_width, 0].
    """

    name: str
    angle: float
    ux: float
    uy: float
    wx: float
    wy: float


@dataclass(frozen=True)
class Route:
    """A legal path through the roundabout: entry approach -> exit approach.

    ref_x, ref_y is the objective reference point on the exit lane that the
    progress feature pulls toward. The centreline path (entry segment,
    counterclockwise arc, exit segment) is precomputed for progress queries
    and state sampling.
    """

    id: str
    entry: str
    exit: str
    ref_x: float
    ref_y: float
    # entry segment, from far end of the approach to the entry mouth
    p0: tuple[float, float]
    p1: tuple[float, float]
    # circulating arc (radius = lane centre of the annulus)
    arc_phi0: float
    arc_sweep: float
    # exit segment, from the exit mouth outward
    q1: tuple[float, float]
    q0: tuple[float, float]
    len_entry: float
    len_arc: float
    len_exit: float

    @property
    def length(self) -> float:
        return self.len_entry + self.len_arc + self.len_exit


@dataclass(frozen=True)
class RoutePair:
    """Ego and opponent route ids, as seen from the ego's perspective."""

    ego: str
    opp: str

    @property
    def swapped(self) -> "RoutePair":
        return RoutePair(self.opp, self.ego)


@dataclass(frozen=True)
class RoundaboutLayout:
    """Single-lane roundabout with straight two-lane approach roads.

    The drivable region is exactly: the annulus between island_radius and
    outer_radius, union one rectangle per approach spanning radial distances
    [island_radius, approach_length] and lateral offsets [-lane_width,
    +lane_width]. Approach roads begin at the island radius so they meet the
    annulus without an undrivable wedge at the mouth.
    """

    center_x: float
    center_y: float
    island_radius: float
    outer_radius: float
    lane_width: float
    approach_length: float
    objective_offset: float
    marking_setback: float
    approaches: tuple[Approach, ...]
    routes: dict[str, Route] = field(repr=False)
    markings: tuple[tuple[tuple[float, float], tuple[float, float]], ...] = field(repr=False)

    # -- lookups ----------------------------------------------------------

    def approach(self, name: str) -> Approach:
        for ap in self.approaches:
            if ap.name == name:
                return ap
        raise KeyError(f"unknown approach {name!r}")

    def route(self, route_id: str) -> Route:
        try:
            return self.routes[route_id]
        except KeyError:
            raise KeyError(f"unknown route {route_id!r}") from None

    def legal_route_ids(self) -> list[str]:
        return sorted(self.routes)

    @property
    def ring_radius(self) -> float:
        """Centreline radius of the circulating lane."""
        return 0.5 * (self.island_radius + self.outer_radius)

    def bounds(self) -> tuple[float, float]:
        """Half-extent box that contains every drivable point, plus margin."""
        r = self.approach_length + 5.0
        return (-r, r)

    # -- drivable region ----------------------------------------------------

    def point_drivable(self, px: float, py: float) -> bool:
        rx = px - self.center_x
        ry = py - self.center_y
        d2 = rx * rx + ry * ry
        if self.island_radius * self.island_radius <= d2 <= self.outer_radius * self.outer_radius:
            return True
        for ap in self.approaches:
            proj = rx * ap.ux + ry * ap.uy
            if proj < self.island_radius or proj > self.approach_length:
                continue
            lat = rx * ap.wx + ry * ap.wy
            if -self.lane_width <= lat <= self.lane_width:
                return True
        return False

    def off_road(self, rect: OrientedRect) -> bool:
        """Whether any boundary sample of the rectangle leaves the road.

        For rectangles no larger than the safety zone on this layout, a rect
        with its whole boundary on-road is entirely on-road, so sampling the
        perimeter (corners included) decides the predicate.
        """
        offs = boundary_offsets(rect.length, rect.width)
        c = math.cos(rect.heading)
        s = math.sin(rect.heading)
        for dx, dy in offs:
            px = rect.cx + dx * c - dy * s
            py = rect.cy + dx * s + dy * c
            if not self.point_drivable(px, py):
                return True
        return False

    # -- approach frames ------------------------------------------------------

    def frame_coords(self, ap: Approach, px: float, py: float) -> tuple[float, float]:
        """(outward projection, lateral offset) of a point in an approach frame."""
        rx = px - self.center_x
        ry = py - self.center_y
        return (rx * ap.ux + ry * ap.uy, rx * ap.wx + ry * ap.wy)

    def exit_lane_rect(self, ap: Approach) -> OrientedRect:
        """The exit lane of an approach as an oriented rectangle."""
        mid = 0.5 * (self.outer_radius + self.approach_length)
        half = -0.5 * self.lane_width
        cx = self.center_x + ap.ux * mid + ap.wx * half
        cy = self.center_y + ap.uy * mid + ap.wy * half
        return OrientedRect(cx, cy, self.approach_length - self.outer_radius, self.lane_width, ap.angle)

    # -- rule predicates ------------------------------------------------------

    def marking_violation(
        self,
        prev: VehicleState,
        cur: VehicleState,
        route_id: str,
        zones: ZoneSpec = DEFAULT_ZONES,
    ) -> bool:
        """Road-marking violation on the move prev -> cur.

        True when the centre of the vehicle crosses an approach road's median
        marking, when the collision zone lies in a wrong exit lane while the
        vehicle is past that lane's mouth, or when the vehicle moves clockwise
        while inside the circle (the circulating lane is one-way).

        A vehicle whose centre sits inside its own route's entry or exit lane
        is exempt from the wrong-exit-lane test: on layouts with closely
        spaced arms the neighbouring arm's exit lane can overlap that legal
        space, and occupying one's own lane is never a violation.
        """
        route = self.route(route_id)
        motion_a = (prev.x, prev.y)
        motion_b = (cur.x, cur.y)
        for seg in self.markings:
            if segments_intersect(motion_a, motion_b, seg[0], seg[1]):
                return True

        if not self._in_own_lane(route, cur.x, cur.y):
            zone = c_zone(cur, zones)
            for ap in self.approaches:
                if ap.name == route.exit:
                    continue
                proj, _ = self.frame_coords(ap, cur.x, cur.y)
                if proj >= self.outer_radius and rects_overlap(zone, self.exit_lane_rect(ap)):
                    return True

        rxp = prev.x - self.center_x
        ryp = prev.y - self.center_y
        rxc = cur.x - self.center_x
        ryc = cur.y - self.center_y
        r2p = rxp * rxp + ryp * ryp
        r2c = rxc * rxc + ryc * ryc
        outer2 = self.outer_radius * self.outer_radius
        if min(r2p, r2c) < outer2:
            cross = rxp * ryc - ryp * rxc
            if cross < -CW_EPS:
                return True
        return False

    def _in_own_lane(self, route: Route, px: float, py: float) -> bool:
        """Whether a point lies in the route's entry lane or exit lane."""
        ap_in = self.approach(route.entry)
        proj, lat = self.frame_coords(ap_in, px, py)
        if self.outer_radius <= proj <= self.approach_length and 0.0 <= lat <= self.lane_width:
            return True
        ap_out = self.approach(route.exit)
        proj, lat = self.frame_coords(ap_out, px, py)
        if self.outer_radius <= proj <= self.approach_length and -self.lane_width <= lat <= 0.0:
            return True
        return False

    def in_objective_lane(
        self, state: VehicleState, route_id: str, zones: ZoneSpec = DEFAULT_ZONES
    ) -> bool:
        """Whether the collision zone lies fully inside the route's exit lane."""
        route = self.route(route_id)
        ap = self.approach(route.exit)
        for px, py in c_zone(state, zones).corners():
            proj, lat = self.frame_coords(ap, px, py)
            if not (self.outer_radius <= proj <= self.approach_length):
                return False
            if not (-self.lane_width <= lat <= 0.0):
                return False
        return True

    # -- route paths ----------------------------------------------------------

    def route_progress(self, route_id: str, px: float, py: float) -> float:
        """Arc length along the route centreline nearest to a point.

        Used for deadlock detection and state sampling; not part of the
        planner's reward, so it may use transcendentals freely.
        """
        route = self.route(route_id)
        rc = self.ring_radius
        cands: list[tuple[float, float]] = []

        for (a, b), base in (
            ((route.p0, route.p1), 0.0),
            ((route.q1, route.q0), route.len_entry + route.len_arc),
        ):
            dx = b[0] - a[0]
            dy = b[1] - a[1]
            seg_len2 = dx * dx + dy * dy
            if seg_len2 > 0.0:
                t = ((px - a[0]) * dx + (py - a[1]) * dy) / seg_len2
                t = min(1.0, max(0.0, t))
            else:
                t = 0.0
            qx = a[0] + t * dx
            qy = a[1] + t * dy
            d2 = (px - qx) * (px - qx) + (py - qy) * (py - qy)
            cands.append((d2, base + t * math.sqrt(seg_len2)))

        rx = px - self.center_x
        ry = py - self.center_y
        phi = math.atan2(ry, rx)
        delta = (phi - route.arc_phi0) % TWO_PI
        if delta <= route.arc_sweep:
            r = math.hypot(rx, ry)
            d2 = (r - rc) * (r - rc)
            cands.append((d2, route.len_entry + rc * delta))

        cands.sort(key=lambda c: c[0])
        return cands[0][1]

    def route_point(self, route_id: str, dist: float) -> tuple[float, float, float]:
        """Point and tangent heading at arc length `dist` along a route."""
        route = self.route(route_id)
        rc = self.ring_radius
        d = min(max(dist, 0.0), route.length)
        if d <= route.len_entry:
            a, b = route.p0, route.p1
            seg = route.len_entry
            t = d / seg if seg > 0 else 0.0
            hx = b[0] - a[0]
            hy = b[1] - a[1]
            return (a[0] + t * hx, a[1] + t * hy, math.atan2(hy, hx))
        d -= route.len_entry
        if d <= route.len_arc:
            phi = route.arc_phi0 + d / rc
            x = self.center_x + rc * math.cos(phi)
            y = self.center_y + rc * math.sin(phi)
            return (x, y, float(_wrap_pi(phi + 0.5 * math.pi)))
        d -= route.len_arc
        a, b = route.q1, route.q0
        seg = route.len_exit
        t = d / seg if seg > 0 else 0.0
        hx = b[0] - a[0]
        hy = b[1] - a[1]
        return (a[0] + t * hx, a[1] + t * hy, math.atan2(hy, hx))

    def spawn_state(self, approach_name: str, gap: float, speed: float) -> VehicleState:
        """Inbound entry-lane state `gap` metres before the circle mouth."""
        ap = self.approach(approach_name)
        proj = self.outer_radius + gap
        half = 0.5 * self.lane_width
        x = self.center_x + ap.ux * proj + ap.wx * half
        y = self.center_y + ap.uy * proj + ap.wy * half
        # atan2 can return exactly -pi (east approach); wrap restores (-pi, pi]
        theta = _wrap_pi(math.atan2(-ap.uy, -ap.ux))
        return VehicleState(x, y, speed, theta)


def _wrap_pi(theta: float) -> float:
    return theta - TWO_PI * math.ceil((theta - math.pi) / TWO_PI)


# ---------------------------------------------------------------------------
# Layout construction and serialization
# ---------------------------------------------------------------------------


def make_layout(
    center: tuple[float, float] = (0.0, 0.0),
    island_radius: float = 6.0,
    outer_radius: float = 13.0,
    lane_width: float = 4.0,
    approach_length: float = 100.0,
    objective_offset: float = 12.0,
    marking_setback: float = 8.0,
    approach_angles_deg: dict[str, float] | None = None,
) -> RoundaboutLayout:
    """Build a layout and derive approaches, routes, markings.

    Raises ValueError when the parameters cannot form a drivable layout.
    """
    if approach_angles_deg is None:
        approach_angles_deg = {"E": 0.0, "N": 90.0, "W": 180.0, "S": 270.0}

    if not (0.0 < island_radius < outer_radius):
        raise ValueError("need 0 < island_radius < outer_radius")
    if outer_radius - island_radius < 3.0:
        raise ValueError("circulating lane narrower than a vehicle plus margin")
    if lane_width < 3.0:
        raise ValueError("lane_width must be at least 3 m")
    if approach_length < outer_radius + 2.0 * objective_offset:
        raise ValueError("approach_length too short for objective points")
    if marking_setback < 0.0:
        raise ValueError("marking_setback must be nonnegative")
    if outer_radius + marking_setback >= approach_length:
        raise ValueError("marking_setback pushes the median past the road end")
    if len(approach_angles_deg) < 2:
        raise ValueError("need at least two approaches")
    if len(set(approach_angles_deg.values())) != len(approach_angles_deg):
        raise ValueError("approach angles must be distinct")

    cx, cy = float(center[0]), float(center[1])
    approaches = []
    for name, deg in approach_angles_deg.items():
        ang = math.radians(deg)
        ux = _snap(math.cos(ang))
        uy = _snap(math.sin(ang))
        # right of inbound travel (inbound direction is -u)
        wx = -uy
        wy = ux
        approaches.append(Approach(name, ang, ux, uy, wx, wy))
    approaches = tuple(sorted(approaches, key=lambda a: a.angle))

    half = 0.5 * lane_width
    rc = 0.5 * (island_radius + outer_radius)
    routes: dict[str, Route] = {}
    for ent in approaches:
        for ext in approaches:
            if ent.name == ext.name:
                continue
            rid = f"{ent.name}-{ext.name}"
            ref_x = cx + ext.ux * (outer_radius + objective_offset) - ext.wx * half
            ref_y = cy + ext.uy * (outer_radius + objective_offset) - ext.wy * half
            p0 = (cx + ent.ux * approach_length + ent.wx * half, cy + ent.uy * approach_length + ent.wy * half)
            p1 = (cx + ent.ux * outer_radius + ent.wx * half, cy + ent.uy * outer_radius + ent.wy * half)
            q1 = (cx + ext.ux * outer_radius - ext.wx * half, cy + ext.uy * outer_radius - ext.wy * half)
            q0 = (cx + ext.ux * approach_length - ext.wx * half, cy + ext.uy * approach_length - ext.wy * half)
            phi0 = math.atan2(p1[1] - cy, p1[0] - cx)
            phi1 = math.atan2(q1[1] - cy, q1[0] - cx)
            sweep = (phi1 - phi0) % TWO_PI
            routes[rid] = Route(
                id=rid,
                entry=ent.name,
                exit=ext.name,
                ref_x=ref_x,
                ref_y=ref_y,
                p0=p0,
                p1=p1,
                arc_phi0=phi0,
                arc_sweep=sweep,
                q1=q1,
                q0=q0,
                len_entry=math.dist(p0, p1),
                len_arc=rc * sweep,
                len_exit=math.dist(q1, q0),
            )

    # Median markings start a setback past the mouth, the way painted
    # medians end short of a yield line: vehicles sweeping between the ring
    # and a lane need the mouth region to straighten out in.
    markings = tuple(
        (
            (cx + ap.ux * (outer_radius + marking_setback), cy + ap.uy * (outer_radius + marking_setback)),
            (cx + ap.ux * approach_length, cy + ap.uy * approach_length),
        )
        for ap in approaches
    )

    return RoundaboutLayout(
        center_x=cx,
        center_y=cy,
        island_radius=island_radius,
        outer_radius=outer_radius,
        lane_width=lane_width,
        approach_length=approach_length,
        objective_offset=objective_offset,
        marking_setback=marking_setback,
        approaches=approaches,
        routes=routes,
        markings=markings,
    )


def default_layout() -> RoundaboutLayout:
    return make_layout()


def layout_to_dict(layout: RoundaboutLayout) -> dict:
    return {
        "version": 1,
        "center": [layout.center_x, layout.center_y],
        "island_radius": layout.island_radius,
        "outer_radius": layout.outer_radius,
        "lane_width": layout.lane_width,
        "approach_length": layout.approach_length,
        "objective_offset": layout.objective_offset,
        "marking_setback": layout.marking_setback,
        "approaches": [
            {"name": ap.name, "angle_deg": math.degrees(ap.angle)} for ap in layout.approaches
        ],
    }


def layout_from_dict(data: dict) -> RoundaboutLayout:
    if data.get("version") != 1:
        raise ValueError(f"unsupported layout version: {data.get('version')!r}")
    angles = {ap["name"]: float(ap["angle_deg"]) for ap in data["approaches"]}
    if len(angles) != len(data["approaches"]):
        raise ValueError("approach names must be unique")
    center = data.get("center", [0.0, 0.0])
    return make_layout(
        center=(float(center[0]), float(center[1])),
        island_radius=float(data["island_radius"]),
        outer_radius=float(data["outer_radius"]),
        lane_width=float(data["lane_width"]),
        approach_length=float(data["approach_length"]),
        objective_offset=float(data.get("objective_offset", 12.0)),
        marking_setback=float(data.get("marking_setback", 8.0)),
        approach_angles_deg=angles,
    )


# Module-level predicate aliases; layout-bound operations read better as
# functions at call sites that mix zone and layout tests.


def off_road(rect: OrientedRect, layout: RoundaboutLayout) -> bool:
    return layout.off_road(rect)


def marking_violation(
    prev: VehicleState,
    cur: VehicleState,
    route_id: str,
    layout: RoundaboutLayout,
    zones: ZoneSpec = DEFAULT_ZONES,
) -> bool:
    return layout.marking_violation(prev, cur, route_id, zones)
