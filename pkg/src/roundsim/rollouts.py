"""Vectorized exhaustive evaluation of discrete action sequences.

The planner explores every action sequence of length n (6^n of them) from a
root traffic state, scoring each with the discounted stage rewards of the
states it visits. This module evaluates all sequences level by level on numpy
arrays while reproducing, bit for bit, the floats that the scalar path
(kinematics.step + reward.features) would produce:

* trigonometry is evaluated once per unique wrapped heading through
  math.cos/math.sin and broadcast back (numpy's cos may differ by an ulp);
* every formula mirrors the scalar expression's association order;
* discount powers accumulate by the same iterated multiplication;
* prefilters skip work only where the answer is provably unaffected
  (bounding-circle separation, strict containment certificates with a 1e-9
  safety margin).

Sequences are enumerated so that the flat index's base-6 digits are the
action indices in temporal order; argmax's first-occurrence rule then breaks
value ties toward the lexicographically smallest sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    CW_EPS,
    DEFAULT_ZONES,
    OrientedRect,
    RoundaboutLayout,
    ZoneSpec,
    _project_interval,
    boundary_offsets,
    c_zone,
    s_zone,
)
from .kinematics import SimParams, VehicleState, action_catalog, wrap_angle
from .reward import DEFAULT_WEIGHTS

_CERT_EPS = 1e-9


@dataclass(frozen=True)
class FixedRect:
    """One rectangle prepared for many-vs-one overlap tests."""

    cx: float
    cy: float
    corners: tuple[tuple[float, float], ...]
    axes: tuple[tuple[float, float], tuple[float, float]]
    intervals: tuple[tuple[float, float], tuple[float, float]]
    circum: float
    cx_arr: np.ndarray
    cy_arr: np.ndarray


def _fixed_rect(rect: OrientedRect) -> FixedRect:
    corners = rect.corners()
    c = math.cos(rect.heading)
    s = math.sin(rect.heading)
    axes = ((c, s), (-s, c))
    intervals = tuple(_project_interval(corners, ax, ay) for ax, ay in axes)
    circum = math.hypot(0.5 * rect.length, 0.5 * rect.width)
    carr = np.array(corners)
    return FixedRect(
        rect.cx,
        rect.cy,
        corners,
        axes,
        intervals,
        circum,
        carr[:, 0],
        carr[:, 1],
    )


@dataclass
class SearchContext:
    """Layout- and parameter-derived constants shared by every search."""

    layout: RoundaboutLayout
    zones: ZoneSpec
    params: SimParams
    w: tuple[float, ...]
    # action catalog as arrays (index order = catalog order)
    acc: np.ndarray
    omg: np.ndarray
    # collision-zone corner offsets, corner order (+l,+w),(-l,+w),(-l,-w),(+l,-w)
    cdx: np.ndarray
    cdy: np.ndarray
    sdx: np.ndarray
    sdy: np.ndarray
    c_circum: float
    s_circum: float
    # boundary sample offsets of the collision zone
    offx: np.ndarray
    offy: np.ndarray
    # approaches
    ap_ux: np.ndarray
    ap_uy: np.ndarray
    ap_wx: np.ndarray
    ap_wy: np.ndarray
    ap_names: tuple[str, ...]
    exit_rects: tuple[FixedRect, ...]
    # markings
    mk_q1x: np.ndarray
    mk_q1y: np.ndarray
    mk_qdx: np.ndarray
    mk_qdy: np.ndarray
    mk_q2x: np.ndarray
    mk_q2y: np.ndarray
    mk_lox: np.ndarray
    mk_hix: np.ndarray
    mk_loy: np.ndarray
    mk_hiy: np.ndarray
    # actions grouped by turn rate: class of each action, one representative
    # action per class, and per-level child-row to (parent, class)-row maps
    om_cls: np.ndarray
    om_rep: np.ndarray
    ctp_levels: tuple[np.ndarray, ...]


def build_context(
    layout: RoundaboutLayout,
    zones: ZoneSpec = DEFAULT_ZONES,
    params: SimParams = SimParams(),
    w: tuple[float, ...] = DEFAULT_WEIGHTS,
) -> SearchContext:
    acts = action_catalog()
    chl = 0.5 * zones.c_length
    chw = 0.5 * zones.c_width
    shl = 0.5 * zones.s_length
    shw = 0.5 * zones.s_width
    offs = boundary_offsets(zones.c_length, zones.c_width)
    q1 = np.array([[m[0][0], m[0][1]] for m in layout.markings])
    q2 = np.array([[m[1][0], m[1][1]] for m in layout.markings])
    omg = np.array([a.omega for a in acts])
    om_vals, om_cls = np.unique(omg, return_inverse=True)
    om_rep = np.array([int(np.flatnonzero(om_cls == c)[0]) for c in range(om_vals.size)])
    ncls = int(om_vals.size)
    ctp_levels = tuple(
        ((np.arange(6**j) * ncls)[:, None] + om_cls[None, :]).ravel()
        for j in range(params.horizon_n)
    )
    return SearchContext(
        layout=layout,
        zones=zones,
        params=params,
        w=tuple(float(x) for x in w),
        acc=np.array([a.a for a in acts]),
        omg=np.array([a.omega for a in acts]),
        cdx=np.array([chl, -chl, -chl, chl]),
        cdy=np.array([chw, chw, -chw, -chw]),
        sdx=np.array([shl, -shl, -shl, shl]),
        sdy=np.array([shw, shw, -shw, -shw]),
        c_circum=math.hypot(chl, chw),
        s_circum=math.hypot(shl, shw),
        offx=np.array([p[0] for p in offs]),
        offy=np.array([p[1] for p in offs]),
        ap_ux=np.array([ap.ux for ap in layout.approaches]),
        ap_uy=np.array([ap.uy for ap in layout.approaches]),
        ap_wx=np.array([ap.wx for ap in layout.approaches]),
        ap_wy=np.array([ap.wy for ap in layout.approaches]),
        ap_names=tuple(ap.name for ap in layout.approaches),
        exit_rects=tuple(_fixed_rect(layout.exit_lane_rect(ap)) for ap in layout.approaches),
        mk_q1x=q1[:, 0].copy(),
        mk_q1y=q1[:, 1].copy(),
        mk_qdx=(q2 - q1)[:, 0].copy(),
        mk_qdy=(q2 - q1)[:, 1].copy(),
        mk_q2x=q2[:, 0].copy(),
        mk_q2y=q2[:, 1].copy(),
        mk_lox=np.minimum(q1[:, 0], q2[:, 0]),
        mk_hix=np.maximum(q1[:, 0], q2[:, 0]),
        mk_loy=np.minimum(q1[:, 1], q2[:, 1]),
        mk_hiy=np.maximum(q1[:, 1], q2[:, 1]),
        om_cls=om_cls,
        om_rep=om_rep,
        ctp_levels=ctp_levels,
    )


def _overlap_many(crx, cry, cos_t, sin_t, fr: FixedRect) -> np.ndarray:
    """Closed SAT overlap of per-row rectangles (given corner arrays and axis
    trig) against one fixed rectangle. Mirrors geometry.rects_overlap: the
    projections are the identical dot products; min/max reductions are exact,
    so the booleans cannot differ."""
    fbx = fr.cx_arr
    fby = fr.cy_arr
    sep = None
    for axx, axy in ((cos_t, sin_t), (-sin_t, cos_t)):
        ad = crx * axx[None, :] + cry * axy[None, :]
        bd = fbx[:, None] * axx[None, :] + fby[:, None] * axy[None, :]
        s = (ad.max(axis=0) < bd.min(axis=0)) | (bd.max(axis=0) < ad.min(axis=0))
        sep = s if sep is None else (sep | s)
    for (axx, axy), (blo, bhi) in zip(fr.axes, fr.intervals):
        d = crx * axx + cry * axy
        sep = sep | (d.min(axis=0) > bhi) | (d.max(axis=0) < blo)
    return ~sep


def evaluate_all(
    ctx: SearchContext,
    ego0: VehicleState,
    opp_track: list[VehicleState],
    route_id: str,
) -> np.ndarray:
    """Discounted cumulative reward of every action sequence of length n.

    opp_track holds the opponent's predicted states: index 0 is its state at
    the root, index j >= 1 its state after j steps (stepped simultaneously
    with the ego). Returns an array of 6^n values; the flat index's base-6
    digits are the 0-based action indices in temporal order.
    """
    n = ctx.params.horizon_n
    if len(opp_track) != n + 1:
        raise ValueError(f"opponent track must hold {n + 1} states, got {len(opp_track)}")
    layout = ctx.layout
    route = layout.route(route_id)
    dt = ctx.params.dt
    vmax = ctx.params.v_max
    lam = ctx.params.lam
    w1, w2, w3, w4, w5, w6 = ctx.w

    opp_c = [_fixed_rect(c_zone(s, ctx.zones)) for s in opp_track[1:]]
    opp_s = [_fixed_rect(s_zone(s, ctx.zones)) for s in opp_track[1:]]

    cx0 = layout.center_x
    cy0 = layout.center_y
    island_r = layout.island_radius
    outer_r = layout.outer_radius
    lane_w = layout.lane_width
    length = layout.approach_length
    island2 = island_r * island_r
    outer2 = outer_r * outer_r
    outer2_cert = (outer_r - _CERT_EPS) ** 2
    island2_cert = (island_r + _CERT_EPS) ** 2
    chl = 0.5 * ctx.zones.c_length
    chw = 0.5 * ctx.zones.c_width

    # which approaches count as wrong exit lanes for this route
    wrong_exits = [i for i, name in enumerate(ctx.ap_names) if name != route.exit]
    half_lane = 0.5 * lane_w

    x = np.array([ego0.x])
    y = np.array([ego0.y])
    v = np.array([ego0.v])
    cos_t = np.array([math.cos(ego0.theta)])
    sin_t = np.array([math.sin(ego0.theta)])
    # headings kept as (value table, per-row index); each level's table is
    # derived from the parent table, so no per-row sort is ever needed
    thv = [ego0.theta]
    thi = np.zeros(1, dtype=np.intp)
    total = np.zeros(1)
    lam_pow = 1.0

    ux = ctx.ap_ux[:, None]
    uy = ctx.ap_uy[:, None]
    wx = ctx.ap_wx[:, None]
    wy = ctx.ap_wy[:, None]
    cdx_c = ctx.cdx[:, None]
    cdy_c = ctx.cdy[:, None]
    sdx_c = ctx.sdx[:, None]
    sdy_c = ctx.sdy[:, None]
    offx_r = ctx.offx[None, :]
    offy_r = ctx.offy[None, :]
    mk_qdx_c = ctx.mk_qdx[:, None]
    mk_qdy_c = ctx.mk_qdy[:, None]
    mk_q1x_c = ctx.mk_q1x[:, None]
    mk_q1y_c = ctx.mk_q1y[:, None]
    mk_q2x_c = ctx.mk_q2x[:, None]
    mk_q2y_c = ctx.mk_q2y[:, None]
    mk_lox_c = ctx.mk_lox[:, None]
    mk_hix_c = ctx.mk_hix[:, None]
    mk_loy_c = ctx.mk_loy[:, None]
    mk_hiy_c = ctx.mk_hiy[:, None]
    omdt_list = (ctx.omg * dt).tolist()
    omdt_cls = [omdt_list[r] for r in ctx.om_rep]
    acdt = ctx.acc * dt
    ncls = int(ctx.om_rep.size)
    arange_cls = np.arange(ncls)
    wex = np.array(wrong_exits, dtype=np.intp)
    ux3 = ctx.ap_ux[:, None, None]
    uy3 = ctx.ap_uy[:, None, None]
    wx3 = ctx.ap_wx[:, None, None]
    wy3 = ctx.ap_wy[:, None, None]

    for j in range(n):
        m = x.shape[0]

        # The post-step position depends on the parent state only (actions
        # change speed and heading, not this step's displacement), so every
        # position-only quantity is computed once per parent and repeated
        # across its six children; the repeated values are bit-identical to
        # computing them per child.
        nxp = x + v * cos_t * dt
        nyp = y + v * sin_t * dt
        rxp = x - cx0
        ryp = y - cy0
        r2p = rxp * rxp + ryp * ryp
        projp = ux * rxp[None, :] + uy * ryp[None, :]
        latp = wx * rxp[None, :] + wy * ryp[None, :]
        rxq = nxp - cx0
        ryq = nyp - cy0
        r2q = rxq * rxq + ryq * ryq
        projq = ux * rxq[None, :] + uy * ryq[None, :]
        latq = wx * rxq[None, :] + wy * ryq[None, :]

        # phi5 clause a: centre path crosses a median marking. A marking lies
        # on its approach axis (lat 0) outward of proj outer_r. The lateral
        # offset is affine along the motion segment, so endpoints strictly on
        # one side of the axis line (lateral product clear of zero) rule out
        # any crossing or touch; endpoint projections both short of the mouth
        # rule it out as well.
        near5 = (latp * latq <= 1e-6) & ((projp >= outer_r - 1e-6) | (projq >= outer_r - 1e-6))
        crossedp = np.zeros(m, dtype=bool)
        cand5 = np.flatnonzero(near5.any(axis=0))
        if cand5.size:
            xs = x[cand5][None, :]
            ys = y[cand5][None, :]
            nxs = nxp[cand5][None, :]
            nys = nyp[cand5][None, :]
            d1o = mk_qdx_c * (ys - mk_q1y_c) - mk_qdy_c * (xs - mk_q1x_c)
            d2o = mk_qdx_c * (nys - mk_q1y_c) - mk_qdy_c * (nxs - mk_q1x_c)
            mdx = nxs - xs
            mdy = nys - ys
            d3o = mdx * (mk_q1y_c - ys) - mdy * (mk_q1x_c - xs)
            d4o = mdx * (mk_q2y_c - ys) - mdy * (mk_q2x_c - xs)
            proper = (((d1o > 0) & (d2o < 0)) | ((d1o < 0) & (d2o > 0))) & (
                ((d3o > 0) & (d4o < 0)) | ((d3o < 0) & (d4o > 0))
            )
            in_q_box_p = (
                (mk_lox_c <= xs) & (xs <= mk_hix_c) & (mk_loy_c <= ys) & (ys <= mk_hiy_c)
            )
            in_q_box_n = (
                (mk_lox_c <= nxs) & (nxs <= mk_hix_c) & (mk_loy_c <= nys) & (nys <= mk_hiy_c)
            )
            plox = np.minimum(xs, nxs)
            phix = np.maximum(xs, nxs)
            ploy = np.minimum(ys, nys)
            phiy = np.maximum(ys, nys)
            on_p_q1 = (
                (plox <= mk_q1x_c) & (mk_q1x_c <= phix) & (ploy <= mk_q1y_c) & (mk_q1y_c <= phiy)
            )
            on_p_q2 = (
                (plox <= mk_q2x_c) & (mk_q2x_c <= phix) & (ploy <= mk_q2y_c) & (mk_q2y_c <= phiy)
            )
            touch = (
                ((d1o == 0) & in_q_box_p)
                | ((d2o == 0) & in_q_box_n)
                | ((d3o == 0) & on_p_q1)
                | ((d4o == 0) & on_p_q2)
            )
            crossedp[cand5] = (proper | touch).any(axis=0)

        # phi5 clause c: clockwise motion while inside the circle
        crossq = rxp * ryq - ryp * rxq
        cwp = (np.minimum(r2p, r2q) < outer2) & (crossq < -CW_EPS)
        flag5p = crossedp | cwp

        # phi3: negative Manhattan distance to the route objective
        phi3p = -np.abs(route.ref_x - nxp) - np.abs(route.ref_y - nyp)

        # circle prefilters for the opponent overlaps, per parent
        oc = opp_c[j]
        os_ = opp_s[j]
        dox = nxp - oc.cx
        doy = nyp - oc.cy
        do2 = dox * dox + doy * doy
        thr = ctx.c_circum + oc.circum + _CERT_EPS
        pnear1 = np.flatnonzero(do2 <= thr * thr)
        dsx = nxp - os_.cx
        dsy = nyp - os_.cy
        ds2 = dsx * dsx + dsy * dsy
        thr4 = ctx.s_circum + os_.circum + _CERT_EPS
        pnear4 = np.flatnonzero(ds2 <= thr4 * thr4)

        # expand to the six children of each parent; the child headings are
        # wrapped sums of a parent table value and a turn-rate step, so the
        # new table comes from the small parent table (a handful of floats,
        # handled in plain Python), not the rows
        cand = [[wrap_angle(t + o) for o in omdt_cls] for t in thv]
        thv = sorted({c for row in cand for c in row})
        pos = {c: i for i, c in enumerate(thv)}
        cmap_cls = np.array([[pos[c] for c in row] for row in cand], dtype=np.intp)
        thi_cls = cmap_cls[thi]
        thi = thi_cls[:, ctx.om_cls].ravel()
        ct_u = np.array([math.cos(t) for t in thv])
        st_u = np.array([math.sin(t) for t in thv])
        cos_t = ct_u[thi]
        sin_t = st_u[thi]

        nx = np.repeat(nxp, 6)
        ny = np.repeat(nyp, 6)
        total = np.repeat(total, 6)
        nv = (v[:, None] + acdt[None, :]).ravel()
        nv = np.maximum(nv, 0.0)
        nv = np.minimum(nv, vmax)

        # Children of one parent that share a turn rate have identical
        # post-step rectangles, so the geometric feature tests run in a
        # reduced row space of one row per (parent, turn class) and the
        # results fan back out through ctp, the child-to-reduced-row map.
        tpi = thi_cls.ravel()
        npr = tpi.shape[0]
        cp = ct_u[tpi]
        sp = st_u[tpi]
        nxr = np.repeat(nxp, ncls)
        nyr = np.repeat(nyp, ncls)
        ctp = ctx.ctp_levels[j]

        # post-step collision-zone corners, same order as OrientedRect.corners;
        # the corner offsets depend only on the heading
        cof_u = np.stack(
            (cdx_c * ct_u[None, :] - cdy_c * st_u[None, :],
             cdx_c * st_u[None, :] + cdy_c * ct_u[None, :])
        )
        cof = cof_u[:, :, tpi]
        crx = nxr[None, :] + cof[0]
        cry = nyr[None, :] + cof[1]

        nzr = np.zeros(npr, dtype=bool)

        # phi1: collision-zone overlap with the opponent
        phi1r = np.zeros(npr)
        if pnear1.size:
            idx = (pnear1[:, None] * ncls + arange_cls[None, :]).ravel()
            hit = _overlap_many(crx[:, idx], cry[:, idx], cp[idx], sp[idx], oc)
            hidx = idx[hit]
            phi1r[hidx] = -1.0
            nzr[hidx] = True

        # phi4: safety-zone overlap with the opponent
        phi4r = np.zeros(npr)
        if pnear4.size:
            idx4 = (pnear4[:, None] * ncls + arange_cls[None, :]).ravel()
            sofx_u = sdx_c * ct_u[None, :] - sdy_c * st_u[None, :]
            sofy_u = sdx_c * st_u[None, :] + sdy_c * ct_u[None, :]
            ti4 = tpi[idx4]
            srx = nxr[idx4][None, :] + sofx_u[:, ti4]
            sry = nyr[idx4][None, :] + sofy_u[:, ti4]
            hit4 = _overlap_many(srx, sry, cp[idx4], sp[idx4], os_)
            hidx4 = idx4[hit4]
            phi4r[hidx4] = -1.0
            nzr[hidx4] = True

        # phi2: ego collision zone off the drivable region. The road
        # containment certificate needs the rectangle's support extents along
        # each approach frame; those depend only on the heading.
        du_u = ctx.ap_ux[:, None] * ct_u[None, :] + ctx.ap_uy[:, None] * st_u[None, :]
        tv_u = ctx.ap_ux[:, None] * st_u[None, :] - ctx.ap_uy[:, None] * ct_u[None, :]
        ext_tab = np.stack(
            (chl * np.abs(du_u) + chw * np.abs(tv_u),
             chl * np.abs(tv_u) + chw * np.abs(du_u))
        )
        extw_u = ext_tab[1]
        exts = ext_tab[:, :, thi_cls]
        ext_u3 = exts[0]
        ext_w3 = exts[1]
        proj3 = projq[:, :, None]
        lat3 = np.abs(latq)[:, :, None]
        road_ok = (
            (proj3 - ext_u3 >= island_r + _CERT_EPS)
            & (proj3 + ext_u3 <= length - _CERT_EPS)
            & (lat3 + ext_w3 <= lane_w - _CERT_EPS)
        ).any(axis=0)

        phi2r = np.zeros(npr)
        rem1 = np.flatnonzero(~road_ok.ravel())
        if rem1.size:
            # corners are themselves boundary sample points, so any corner off
            # the drivable region settles the feature without sampling
            crxr = crx[:, rem1] - cx0
            cryr = cry[:, rem1] - cy0
            cr2 = crxr * crxr + cryr * cryr
            ring_ok_c = (island2 <= cr2) & (cr2 <= outer2)
            pu_c = ux3 * crxr[None, :, :] + uy3 * cryr[None, :, :]
            pw_c = wx3 * crxr[None, :, :] + wy3 * cryr[None, :, :]
            arm_ok_c = (
                (pu_c >= island_r) & (pu_c <= length) & (-lane_w <= pw_c) & (pw_c <= lane_w)
            ).any(axis=0)
            coff = ~(ring_ok_c | arm_ok_c).all(axis=0)
            oidx = rem1[coff]
            phi2r[oidx] = -1.0
            nzr[oidx] = True

            keep = ~coff
            rem_a = rem1[keep]
            if rem_a.size:
                # annulus containment certificate on the undecided rows
                crxr = crxr[:, keep]
                cryr = cryr[:, keep]
                cr2 = cr2[:, keep]
                cr2max = cr2.max(axis=0)
                inside_outer = cr2max <= outer2_cert
                dex = crxr[(1, 2, 3, 0), :] - crxr
                dey = cryr[(1, 2, 3, 0), :] - cryr
                adotd = crxr * dex + cryr * dey
                el2 = dex * dex + dey * dey
                t = np.clip(-adotd / el2, 0.0, 1.0)
                epx = crxr + t * dex
                epy = cryr + t * dey
                ed2 = epx * epx + epy * epy
                ed2min = ed2.min(axis=0)
                island_clear = ed2min >= island2_cert
                # centre of the island inside the rect would defeat the edge test
                pidx1 = rem_a // ncls
                rx1 = rxq[pidx1]
                ry1 = ryq[pidx1]
                c1 = cp[rem_a]
                s1 = sp[rem_a]
                duo = (-rx1) * c1 + (-ry1) * s1
                dvo = rx1 * s1 - ry1 * c1
                centre_inside = (np.abs(duo) <= chl) & (np.abs(dvo) <= chw)
                annulus_ok = inside_outer & island_clear & ~centre_inside
                rem = rem_a[~annulus_ok]
            else:
                rem = rem_a
            if rem.size:
                # boundary-sample fallback for rows straddling a region edge
                sx = nxr[rem, None] + offx_r * cp[rem, None] - offy_r * sp[rem, None]
                sy = nyr[rem, None] + offx_r * sp[rem, None] + offy_r * cp[rem, None]
                rsx = sx - cx0
                rsy = sy - cy0
                d2 = rsx * rsx + rsy * rsy
                ok = (island2 <= d2) & (d2 <= outer2)
                # a sample can lie on road k only if the rect's centre is
                # within the zone circumradius of it
                pidx2 = rem // ncls
                pu2 = projq[:, pidx2]
                pw2 = latq[:, pidx2]
                maybe = (
                    (np.abs(pw2) <= lane_w + ctx.c_circum + _CERT_EPS)
                    & (pu2 >= island_r - ctx.c_circum - _CERT_EPS)
                    & (pu2 <= length + ctx.c_circum + _CERT_EPS)
                )
                for k in np.flatnonzero(maybe.any(axis=1)):
                    rows_k = np.flatnonzero(maybe[k])
                    pu = rsx[rows_k] * ctx.ap_ux[k] + rsy[rows_k] * ctx.ap_uy[k]
                    pw = rsx[rows_k] * ctx.ap_wx[k] + rsy[rows_k] * ctx.ap_wy[k]
                    ok[rows_k] |= (
                        (pu >= island_r) & (pu <= length) & (-lane_w <= pw) & (pw <= lane_w)
                    )
                bidx = rem[~ok.all(axis=1)]
                phi2r[bidx] = -1.0
                nzr[bidx] = True

        # phi5 clause b: collision zone in a wrong exit lane, centre past its
        # mouth. The exit lane spans lat in [-lane_w, 0]; a rect laterally
        # farther from the lane centre than half the lane plus the rect's own
        # lateral support extent cannot overlap it.
        wrongr = np.zeros(npr, dtype=bool)
        gate_all = (projq[wex] >= outer_r) & (
            np.abs(latq[wex] + half_lane) <= half_lane + ctx.c_circum + _CERT_EPS
        )
        if gate_all.any():
            for kk, k in enumerate(wrong_exits):
                gatep = np.flatnonzero(gate_all[kk])
                if not gatep.size:
                    continue
                cidx = (gatep[:, None] * ncls + arange_cls[None, :]).ravel()
                latr = np.repeat(latq[k][gatep], ncls)
                ewr = extw_u[k][tpi[cidx]]
                cand = cidx[np.abs(latr + half_lane) <= half_lane + ewr + _CERT_EPS]
                if cand.size:
                    fr = ctx.exit_rects[k]
                    hit5 = _overlap_many(crx[:, cand], cry[:, cand], cp[cand], sp[cand], fr)
                    wrongr[cand[hit5]] = True

        phi5m = np.repeat(flag5p, 6) | wrongr[ctp]
        nzmask = nzr[ctp] | phi5m

        phi3 = np.repeat(phi3p, 6)

        # On rows where phi1, phi2, phi4 and phi5 are all zero the stage
        # reward reduces to w3*phi3 + w6*v exactly; the full association-order
        # formula runs only on the remaining rows.
        r = w3 * phi3 + w6 * nv
        nzi = np.flatnonzero(nzmask)
        if nzi.size:
            nzr_idx = ctp[nzi]
            phi5v = np.where(phi5m[nzi], -1.0, 0.0)
            r[nzi] = (
                w1 * phi1r[nzr_idx]
                + w2 * phi2r[nzr_idx]
                + w3 * phi3[nzi]
                + w4 * phi4r[nzr_idx]
                + w5 * phi5v
                + w6 * nv[nzi]
            )
        total = total + lam_pow * r
        lam_pow = lam_pow * lam

        x = nx
        y = ny
        v = nv

    return total


def search_best(
    ctx: SearchContext,
    ego0: VehicleState,
    opp_track: list[VehicleState],
    route_id: str,
) -> tuple[tuple[int, ...], float]:
    """Best action sequence (0-based catalog indices) and its value.

    Ties break toward the lexicographically smallest index sequence.
    """
    totals = evaluate_all(ctx, ego0, opp_track, route_id)
    flat = int(np.argmax(totals))
    value = float(totals[flat])
    n = ctx.params.horizon_n
    digits = []
    for _ in range(n):
        flat, d = divmod(flat, 6)
        digits.append(d)
    return tuple(reversed(digits)), value
