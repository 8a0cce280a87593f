import math
import random

import pytest

from roundsim.geometry import (
    DEFAULT_ZONES,
    OrientedRect,
    ZoneSpec,
    boundary_offsets,
    c_zone,
    default_layout,
    layout_from_dict,
    layout_to_dict,
    make_layout,
    rects_overlap,
    s_zone,
    segments_intersect,
)
from roundsim.kinematics import VehicleState

from oracles import oracle_point_drivable, oracle_rect_margin, oracle_rect_off_road


# --- oriented rectangles ----------------------------------------------------


def test_corners_axis_aligned():
    r = OrientedRect(1.0, 2.0, 4.0, 2.0, 0.0)
    assert r.corners() == ((3.0, 3.0), (-1.0, 3.0), (-1.0, 1.0), (3.0, 1.0))


def test_corners_rotated_quarter_turn():
    r = OrientedRect(0.0, 0.0, 4.0, 2.0, math.pi / 2)
    cs = r.corners()
    expect = ((-1.0, 2.0), (-1.0, -2.0), (1.0, -2.0), (1.0, 2.0))
    for (gx, gy), (ex, ey) in zip(cs, expect):
        assert gx == pytest.approx(ex, abs=1e-12)
        assert gy == pytest.approx(ey, abs=1e-12)


def test_overlap_identical_and_disjoint():
    a = OrientedRect(0.0, 0.0, 5.0, 2.0, 0.3)
    assert rects_overlap(a, a)
    b = OrientedRect(30.0, 0.0, 5.0, 2.0, 1.2)
    assert not rects_overlap(a, b)


def test_overlap_exact_edge_touch_counts():
    a = OrientedRect(0.0, 0.0, 5.0, 2.0, 0.0)
    b = OrientedRect(5.0, 0.0, 5.0, 2.0, 0.0)
    assert rects_overlap(a, b)
    c = OrientedRect(5.0 + 1e-9, 0.0, 5.0, 2.0, 0.0)
    assert not rects_overlap(a, c)


def test_overlap_exact_corner_touch_counts():
    a = OrientedRect(0.0, 0.0, 4.0, 2.0, 0.0)
    b = OrientedRect(4.0, 2.0, 4.0, 2.0, 0.0)  # corners meet at (2, 1)
    assert rects_overlap(a, b)


def test_overlap_cross_shape():
    a = OrientedRect(0.0, 0.0, 8.0, 1.0, 0.0)
    b = OrientedRect(0.0, 0.0, 8.0, 1.0, math.pi / 2)
    assert rects_overlap(a, b)


def test_overlap_matches_distance_oracle():
    rng = random.Random(11)
    checked = 0
    for _ in range(3000):
        a = OrientedRect(rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(1, 8), rng.uniform(1, 3), rng.uniform(-math.pi, math.pi))
        b = OrientedRect(rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(1, 8), rng.uniform(1, 3), rng.uniform(-math.pi, math.pi))
        margin = oracle_rect_margin(a, b)
        if 0.0 < margin < 1e-9:
            continue  # knife edge: both answers defensible
        assert rects_overlap(a, b) == (margin == 0.0)
        checked += 1
    assert checked > 2900


# --- zones -------------------------------------------------------------------


def test_zone_shapes():
    s = VehicleState(3.0, -4.0, 7.0, 0.9)
    cz = c_zone(s)
    assert (cz.cx, cz.cy, cz.length, cz.width, cz.heading) == (3.0, -4.0, 5.0, 2.0, 0.9)
    sz = s_zone(s)
    assert (sz.length, sz.width) == (8.0, 2.4)


def test_zone_spec_validation():
    with pytest.raises(ValueError):
        ZoneSpec(c_length=0.0)
    with pytest.raises(ValueError):
        ZoneSpec(s_length=4.0)  # smaller than the collision zone
    z = ZoneSpec()
    assert (z.c_length, z.c_width, z.s_length, z.s_width) == (5.0, 2.0, 8.0, 2.4)


def test_boundary_offsets_spacing_and_corners():
    offs = boundary_offsets(5.0, 2.0)
    assert (2.5, 1.0) in offs and (-2.5, 1.0) in offs and (-2.5, -1.0) in offs and (2.5, -1.0) in offs
    # spacing along the perimeter never exceeds the target
    n = len(offs)
    for i in range(n):
        x0, y0 = offs[i]
        x1, y1 = offs[(i + 1) % n]
        assert math.hypot(x1 - x0, y1 - y0) <= 0.25 + 1e-12
    # all points on the boundary
    for x, y in offs:
        assert abs(x) <= 2.5 + 1e-12 and abs(y) <= 1.0 + 1e-12
        assert abs(abs(x) - 2.5) < 1e-12 or abs(abs(y) - 1.0) < 1e-12


# --- segments ----------------------------------------------------------------


def test_segments_basic():
    assert segments_intersect((0, -1), (0, 1), (-1, 0), (1, 0))
    assert not segments_intersect((0, -1), (0, 1), (1, 0), (2, 0))
    # endpoint touch counts
    assert segments_intersect((0, 0), (1, 0), (1, 0), (1, 5))
    # collinear overlap counts
    assert segments_intersect((0, 0), (2, 0), (1, 0), (3, 0))
    # degenerate point on segment
    assert segments_intersect((1, 0), (1, 0), (0, 0), (2, 0))
    assert not segments_intersect((1, 1), (1, 1), (0, 0), (2, 0))


# --- layout: drivable region --------------------------------------------------


def test_point_drivable_samples(layout):
    assert not layout.point_drivable(0.0, 0.0)  # island centre
    assert not layout.point_drivable(0.0, 5.9)  # inside island
    assert layout.point_drivable(0.0, 6.0)  # island edge (closed)
    assert layout.point_drivable(10.0, 0.0)  # annulus
    assert layout.point_drivable(13.0, 0.0)  # outer edge
    assert layout.point_drivable(2.0, -50.0)  # south approach entry lane
    assert layout.point_drivable(-2.0, -50.0)  # south approach exit lane
    assert not layout.point_drivable(4.4, -50.0)  # beside the road
    assert not layout.point_drivable(0.0, -101.0)  # past the road end
    assert not layout.point_drivable(4.2, -12.5)  # notch between road edge and circle
    assert not layout.point_drivable(30.0, 30.0)  # open field


def test_point_drivable_matches_oracle(layout):
    rng = random.Random(5)
    for _ in range(4000):
        x = rng.uniform(-105, 105)
        y = rng.uniform(-105, 105)
        assert layout.point_drivable(x, y) == oracle_point_drivable(layout, x, y), (x, y)


def test_off_road_examples(layout):
    on_lane = c_zone(VehicleState(2.0, -20.0, 5.0, math.pi / 2))
    assert not layout.off_road(on_lane)
    hugging_edge = c_zone(VehicleState(3.8, -20.0, 5.0, math.pi / 2))
    assert layout.off_road(hugging_edge)
    in_ring = c_zone(VehicleState(10.0, 0.0, 5.0, math.pi / 2))
    assert not layout.off_road(in_ring)
    # at a mouth the road flares to the island radius, so this stays on-road
    at_mouth = c_zone(VehicleState(11.9, 0.0, 5.0, math.pi / 2))
    assert not layout.off_road(at_mouth)
    # between approaches the ring edge is real: outer corners poke out
    poking_out = c_zone(VehicleState(9.0, 9.0, 5.0, math.radians(135)))
    assert layout.off_road(poking_out)
    over_island = c_zone(VehicleState(6.2, 0.0, 5.0, math.pi / 2))
    assert layout.off_road(over_island)
    open_field = c_zone(VehicleState(40.0, 40.0, 5.0, 0.7))
    assert layout.off_road(open_field)


def test_off_road_matches_dense_grid_oracle(layout):
    # The predicate samples the boundary at 0.25 m; excursions shallower than
    # that resolution are indeterminate by design. Deeper disagreements with a
    # dense area grid are real bugs.
    rng = random.Random(23)
    from helpers import sample_vehicle
    from roundsim.geometry import boundary_offsets

    deep_checked = 0
    for i in range(250):
        route = rng.choice(layout.legal_route_ids())
        s = sample_vehicle(rng, layout, route)
        rect = c_zone(s)
        lib = layout.off_road(rect)
        dense = oracle_rect_off_road(layout, rect)
        if lib:
            # a flagged rect must have a genuinely off-road boundary sample
            c, sn = math.cos(rect.heading), math.sin(rect.heading)
            samples_off = any(
                not oracle_point_drivable(layout, rect.cx + dx * c - dy * sn, rect.cy + dx * sn + dy * c)
                for dx, dy in boundary_offsets(rect.length, rect.width)
            )
            assert samples_off, s
        elif dense:
            # library said on-road but the dense grid found an off point: only
            # acceptable for slivers below the sampling resolution
            shrunk = OrientedRect(rect.cx, rect.cy, rect.length - 0.6, rect.width - 0.6, rect.heading)
            assert not oracle_rect_off_road(layout, shrunk), s
        else:
            deep_checked += 1
    assert deep_checked > 100


# --- layout: markings and lanes ------------------------------------------------


def test_marking_crossing_detected(layout):
    prev = VehicleState(1.0, -30.0, 5.0, math.pi)
    cur = VehicleState(-1.0, -30.0, 5.0, math.pi)
    assert layout.marking_violation(prev, cur, "S-N")
    # ending exactly on the marking counts (closed)
    cur_on = VehicleState(0.0, -30.0, 5.0, math.pi)
    assert layout.marking_violation(prev, cur_on, "S-N")
    # staying on one side does not (far enough that the collision zone
    # stays out of the opposing lane too)
    cur_same = VehicleState(1.5, -28.0, 5.0, math.pi / 2)
    assert not layout.marking_violation(prev, cur_same, "S-N")


def test_marking_inside_circle_not_crossed(layout):
    # the median markings start a setback past the mouth; circulating motion
    # across an approach axis is fine
    prev = VehicleState(1.5, 10.0, 5.0, math.pi)
    cur = VehicleState(-1.5, 10.0, 5.0, math.pi)
    assert not layout.marking_violation(prev, cur, "S-N")


def test_marking_span_leaves_mouth_clear(layout):
    # painted medians run from the setback point out to the road end; the
    # stretch next to the mouth is unpainted so entry and exit sweeps can
    # straighten out
    start = layout.outer_radius + layout.marking_setback
    for p, q in layout.markings:
        r0 = math.hypot(p[0] - layout.center_x, p[1] - layout.center_y)
        r1 = math.hypot(q[0] - layout.center_x, q[1] - layout.center_y)
        assert min(r0, r1) == pytest.approx(start)
        assert max(r0, r1) == pytest.approx(layout.approach_length)


def test_wrong_exit_lane(layout):
    prev = VehicleState(2.0, 13.0, 5.0, math.pi / 2)
    cur = VehicleState(2.0, 14.0, 5.0, math.pi / 2)
    # exiting north while the objective is east: wrong lane
    assert layout.marking_violation(prev, cur, "S-E")
    # same motion with the north objective is legitimate
    assert not layout.marking_violation(prev, cur, "S-N")


def test_own_entry_lane_is_not_wrong_exit(layout):
    # inbound on the south entry lane, route S-N: the south exit lane is a
    # wrong exit, but the entry lane does not overlap it
    prev = VehicleState(2.0, -30.0, 8.0, math.pi / 2)
    cur = VehicleState(2.0, -28.0, 8.0, math.pi / 2)
    assert not layout.marking_violation(prev, cur, "S-N")


def test_clockwise_motion_flagged(layout):
    prev = VehicleState(10.0, 0.0, 5.0, -math.pi / 2)
    cur = VehicleState(9.8, -1.99, 5.0, -math.pi / 2)
    assert layout.marking_violation(prev, cur, "S-N")
    # counterclockwise is fine
    ccw_cur = VehicleState(9.8, 1.99, 5.0, math.pi / 2)
    assert not layout.marking_violation(prev, ccw_cur, "S-N")
    # clockwise motion outside the circle is not the ring's business
    prev_out = VehicleState(20.0, 20.0, 5.0, 0.0)
    cur_out = VehicleState(19.8, 18.0, 5.0, 0.0)
    assert not layout.marking_violation(prev_out, cur_out, "S-N")


def test_in_objective_lane(layout):
    good = VehicleState(2.0, 20.0, 5.0, math.pi / 2)
    assert layout.in_objective_lane(good, "S-N")
    straddling_mouth = VehicleState(2.0, 12.5, 5.0, math.pi / 2)
    assert not layout.in_objective_lane(straddling_mouth, "S-N")
    wrong_side = VehicleState(-2.0, 20.0, 5.0, math.pi / 2)
    assert not layout.in_objective_lane(wrong_side, "S-N")
    angled = VehicleState(2.0, 20.0, 5.0, math.pi / 2 + 0.5)
    assert not layout.in_objective_lane(angled, "S-N")  # corners cross the median


# --- layout: routes and construction -------------------------------------------


def test_route_table(layout):
    ids = layout.legal_route_ids()
    assert len(ids) == 12
    assert "S-S" not in ids and "E-E" not in ids
    r = layout.route("S-N")
    assert (r.entry, r.exit) == ("S", "N")
    assert (r.ref_x, r.ref_y) == (2.0, 25.0)
    assert layout.route("S-E").ref_x == 25.0
    assert layout.route("S-E").ref_y == -2.0


def test_route_path_geometry(layout):
    r = layout.route("S-N")
    assert r.p0 == (2.0, -100.0)
    assert r.p1 == (2.0, -13.0)
    assert r.q1 == (2.0, 13.0)
    assert r.q0 == (2.0, 100.0)
    assert r.len_entry == 87.0
    assert r.len_exit == 87.0
    # straight-through sweep passes around the east side
    assert 0 < r.arc_sweep < math.pi
    # right turn is shorter than straight, left turn longer
    assert layout.route("S-E").arc_sweep < r.arc_sweep < layout.route("S-W").arc_sweep


def test_route_progress_monotonic(layout):
    for rid in ("S-N", "S-E", "S-W", "E-S"):
        route = layout.route(rid)
        last = -1.0
        k = 60
        for i in range(k + 1):
            d = route.length * i / k
            x, y, _ = layout.route_point(rid, d)
            p = layout.route_progress(rid, x, y)
            assert p >= last - 1e-6, (rid, d)
            last = p
        assert last == pytest.approx(route.length, abs=1e-6)


def test_spawn_state(layout):
    s = layout.spawn_state("S", 10.0, 6.0)
    assert (s.x, s.y, s.v, s.theta) == (2.0, -23.0, 6.0, math.pi / 2)
    e = layout.spawn_state("E", 10.0, 6.0)
    assert (e.x, e.y, e.v) == (23.0, 2.0, 6.0)
    assert e.theta == math.pi  # wrapped into (-pi, pi]
    n = layout.spawn_state("N", 0.0, 3.0)
    assert (n.x, n.y, n.theta) == (-2.0, 13.0, -math.pi / 2)


def test_layout_json_round_trip(layout):
    d = layout_to_dict(layout)
    back = layout_from_dict(d)
    assert back == layout


def test_layout_validation():
    with pytest.raises(ValueError):
        make_layout(island_radius=12.0, outer_radius=8.0)
    with pytest.raises(ValueError):
        make_layout(island_radius=10.0, outer_radius=12.0)  # ring too narrow
    with pytest.raises(ValueError):
        make_layout(lane_width=2.0)
    with pytest.raises(ValueError):
        make_layout(approach_length=20.0)
    with pytest.raises(ValueError):
        layout_from_dict({"version": 2})
    d = layout_to_dict(default_layout())
    d["approaches"].append({"name": "E", "angle_deg": 45.0})
    with pytest.raises(ValueError):
        layout_from_dict(d)


def test_translated_layout_predicates():
    base = default_layout()
    moved = make_layout(center=(7.0, -3.0))
    rng = random.Random(17)
    for _ in range(800):
        # keep away from region boundaries: translation changes float rounding
        x = rng.uniform(-20, 20)
        y = rng.uniform(-20, 20)
        r = math.hypot(x, y)
        if min(abs(r - 6), abs(r - 13), abs(abs(x) - 4), abs(abs(y) - 4)) < 0.05:
            continue
        assert base.point_drivable(x, y) == moved.point_drivable(x + 7.0, y - 3.0)
