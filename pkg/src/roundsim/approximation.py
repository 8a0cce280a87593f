"""Offline distillation of the exact planners into three classifiers.

NN_A maps (traffic state, assumed opponent type) to the ego's optimal first
action, NN_B flags critical states (the two type hypotheses disagree about
the opponent's next action), and NN_C maps (critical state, observed opponent
action) to a type label. Labels always come from the exact receding-horizon
planners; the networks only buy speed.

The feature encoding extends the raw eight state numbers with heading
sines/cosines, relative displacement, and each vehicle's route context (entry
direction and objective point), because the planners' outputs depend on the
routes, not on positions alone.

The planners' argmax labels are piecewise constant with thin chaotic cells
where neighbouring states flip labels. The sampler therefore builds
micro-clusters: every drawn state is emitted together with tightly perturbed
copies so each region in the sets is locally resolved, and a critical state
only enters the sets (and seeds type rows for setC) after micro probes
reproduce its criticality and action polarity; clusters that fail this check
are rolled back as unlearnable. Critical states are rare under random
sampling, so after the base pass close-range states keep being mined until
setC reaches its target size.

Networks are plain fully connected ReLU stacks trained by seeded minibatch
gradient descent in numpy; everything here is deterministic given its seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .estimator import DriverType
from .geometry import (
    DEFAULT_ZONES,
    RoundaboutLayout,
    RoutePair,
    ZoneSpec,
    layout_to_dict,
)
from .kinematics import ACTION_BY_ID, Action, SimParams, VehicleState
from .policy import PlanCache
from .reward import DEFAULT_WEIGHTS, TrafficState

NUM_ACTIONS = 6

_VEHICLE_FEATURES = (
    "x",
    "y",
    "v",
    "cos",
    "sin",
    "goal_dx",
    "goal_dy",
    "goal_l1",
    "goal_cos",
    "goal_sin",
    "r_center",
    "entry_ux",
    "entry_uy",
    "clear_fwd",
    "clear_left",
    "clear_right",
    "progress",
    "remaining",
)

FEATURE_NAMES_BASE = (
    tuple(f"ego_{f}" for f in _VEHICLE_FEATURES)
    + tuple(f"opp_{f}" for f in _VEHICLE_FEATURES)
    + ("dx", "dy", "dist", "fwd_e", "lat_e", "fwd_o", "lat_o", "dvx", "dvy", "closing")
)


class TrainingError(RuntimeError):
    """Raised when optimization produces a non-finite loss."""


# ---------------------------------------------------------------------------
# Feature encoding
# ---------------------------------------------------------------------------


_CLEAR_STEP = 0.75
_CLEAR_STEPS = 16


def _clearance(layout: RoundaboutLayout, x: float, y: float, heading: float) -> float:
    """Drivable distance marching from (x, y) along heading, capped at 12 m."""
    c, s = math.cos(heading), math.sin(heading)
    for k in range(1, _CLEAR_STEPS + 1):
        d = k * _CLEAR_STEP
        if not layout.point_drivable(x + d * c, y + d * s):
            return d
    return (_CLEAR_STEPS + 1) * _CLEAR_STEP


def _vehicle_block(
    s: VehicleState, route, approach, layout: RoundaboutLayout, route_id: str
) -> list[float]:
    gdx = route.ref_x - s.x
    gdy = route.ref_y - s.y
    bearing = math.atan2(gdy, gdx) if (gdx or gdy) else 0.0
    rel = bearing - s.theta
    progress = layout.route_progress(route_id, s.x, s.y)
    return [
        s.x,
        s.y,
        s.v,
        math.cos(s.theta),
        math.sin(s.theta),
        gdx,
        gdy,
        abs(gdx) + abs(gdy),
        math.cos(rel),
        math.sin(rel),
        math.hypot(s.x - layout.center_x, s.y - layout.center_y),
        approach.ux,
        approach.uy,
        _clearance(layout, s.x, s.y, s.theta),
        _clearance(layout, s.x, s.y, s.theta + math.pi / 8.0),
        _clearance(layout, s.x, s.y, s.theta - math.pi / 8.0),
        progress,
        route.length - progress,
    ]


def encode_base(X: TrafficState, routes: RoutePair, layout: RoundaboutLayout) -> np.ndarray:
    """Route-aware feature vector shared by all three networks.

    Besides the raw eight state numbers it carries the derived quantities the
    planners' reward terms key on: goal-relative displacement and bearing,
    distance to the circle center, the opponent's pose in the ego frame (and
    vice versa), and the closing speed.
    """
    e, o = X.ego, X.opp
    re = layout.route(routes.ego)
    ro = layout.route(routes.opp)
    dx = o.x - e.x
    dy = o.y - e.y
    dist = math.hypot(dx, dy)
    ce, se = math.cos(e.theta), math.sin(e.theta)
    co, so = math.cos(o.theta), math.sin(o.theta)
    dvx = o.v * co - e.v * ce
    dvy = o.v * so - e.v * se
    closing = -(dx * dvx + dy * dvy) / dist if dist > 0.0 else 0.0
    rel = (
        [dx, dy, dist]
        + [dx * ce + dy * se, -dx * se + dy * ce]
        + [-dx * co - dy * so, dx * so - dy * co]
        + [dvx, dvy, closing]
    )
    return np.array(
        _vehicle_block(e, re, layout.approach(re.entry), layout, routes.ego)
        + _vehicle_block(o, ro, layout.approach(ro.entry), layout, routes.opp)
        + rel,
        dtype=np.float64,
    )


def encode_policy(X: TrafficState, routes: RoutePair, layout: RoundaboutLayout, eta: int) -> np.ndarray:
    if eta not in (1, 2):
        raise ValueError(f"eta must be 1 or 2, got {eta}")
    return np.concatenate([encode_base(X, routes, layout), [float(eta)]])


def encode_critical(X: TrafficState, routes: RoutePair, layout: RoundaboutLayout) -> np.ndarray:
    return encode_base(X, routes, layout)


def encode_type(
    X: TrafficState, routes: RoutePair, layout: RoundaboutLayout, action: Action
) -> np.ndarray:
    onehot = np.zeros(NUM_ACTIONS)
    onehot[action.id - 1] = 1.0
    return np.concatenate([encode_base(X, routes, layout), onehot])


def feature_names(kind: str) -> tuple[str, ...]:
    if kind == "A":
        return FEATURE_NAMES_BASE + ("eta",)
    if kind == "B":
        return FEATURE_NAMES_BASE
    if kind == "C":
        return FEATURE_NAMES_BASE + tuple(f"act_{i}" for i in range(1, NUM_ACTIONS + 1))
    raise ValueError(f"unknown dataset kind {kind!r}")


LABEL_VALUES = {"A": tuple(range(1, NUM_ACTIONS + 1)), "B": (0, 1), "C": (1, 2)}


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Feature rows plus integer labels for one network kind."""

    kind: str
    features: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("A", "B", "C"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features and labels must be parallel 2-d/1-d arrays")

    def __len__(self) -> int:
        return len(self.labels)


def save_dataset(ds: Dataset, path) -> None:
    """Text form: a '#'-prefixed JSON header, then one CSV record per line.

    Floats render with repr precision so a load returns bit-identical arrays.
    """
    header = {"v": 1, "kind": ds.kind, "n": len(ds), "meta": ds.meta}
    with open(path, "w") as f:
        f.write("#" + json.dumps(header) + "\n")
        for row, lab in zip(ds.features, ds.labels):
            f.write(",".join(repr(float(x)) for x in row) + f",{int(lab)}\n")


def load_dataset(path) -> Dataset:
    with open(path) as f:
        first = f.readline()
        if not first.startswith("#"):
            raise ValueError("dataset file is missing its header line")
        header = json.loads(first[1:])
        if header.get("v") != 1:
            raise ValueError(f"unsupported dataset version: {header.get('v')!r}")
        rows = []
        labels = []
        for line in f:
            parts = line.rstrip("\n").split(",")
            rows.append([float(x) for x in parts[:-1]])
            labels.append(int(parts[-1]))
    feats = np.array(rows, dtype=np.float64) if rows else np.zeros((0, 0))
    return Dataset(header["kind"], feats, np.array(labels, dtype=np.int64), header.get("meta", {}))


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

# Sampling support, declared: a mixture of four seeded components.
#   field     - independent positions over drivable ground within manifest
#                bounds (outer radius + 30 m), v ~ U[0, v_max], theta uniform.
#   corridor  - each vehicle placed along its own route inside the
#                interaction window (from the far end of the spawn band to
#                just past the objective) with small lateral, heading, and
#                position noise, v ~ U[0, spawn cap].
#   episode   - pre-step states harvested from freshly sampled exact-mode
#                episodes: exactly the distribution the controller visits in
#                closed loop, including the correlated progress of the two
#                vehicles that independent draws cannot reproduce.
#   encounter - both vehicles on drivable ground near the circle (outer
#                radius + 6 m) and within 10 m of each other: the region
#                where the type hypotheses actually diverge.
# Every base draw also emits a few micro-perturbed copies. The planners'
# argmax landscape is piecewise constant with small cells, so classifiers
# generalize only where sampling density resolves the cells; the copies put
# every validation point inside a resolved cell.
# Routes come uniformly from the legal pool with circulating arcs <= pi,
# entries distinct, matching the batch sampler's envelope.
MIX_FIELD = 0.05
MIX_CORRIDOR = 0.15
MIX_EPISODE = 0.55
FIELD_MARGIN = 30.0
ENCOUNTER_MARGIN = 6.0
ENCOUNTER_DIST = 10.0
# Corridor window relative to the circle mouth, and the spawn-speed cap the
# scenario sampler uses (initial speeds may exceed v_max until clamped).
# The window runs past the objective because controllers keep acting on the
# exit leg until the episode ends.
CORRIDOR_BACK = 45.0
CORRIDOR_AHEAD = 25.0
SPAWN_V_MAX = 10.0
# Corridor scatter around the route centerline. Tight on purpose: the exact
# policy's "hold straight" ridge along the lane axis is only a few decimeters
# wide, and wider scatter buries it under steer-back-to-center labels.
CORRIDOR_POS_SD = 0.25
CORRIDOR_TH_SD = 0.05

# Micro-perturbation radii (meters, m/s, radians) and copies per base state.
MICRO_POS = 0.04
MICRO_V = 0.02
MICRO_TH = 0.008
BASE_COPIES = 2

# Critical states enter the type set only when the classification survives
# perturbation: an observed action can only reveal the driver type if the
# revelation is robust to sub-decimeter state noise. Near argmax ties the
# type-1/type-2 first actions swap chaotically, and those states carry no
# learnable signal. Verified seeds are densified with extra copies.
CRIT_VERIFY_PROBES = 2
CRIT_COPIES = 20
MINING_DRAW_CAP_FACTOR = 20

# setB majority class is capped at this multiple of the minority.
STRATIFY_RATIO = 4


def _route_pool(layout: RoundaboutLayout) -> list[str]:
    return sorted(
        r for r in layout.legal_route_ids() if layout.route(r).arc_sweep <= math.pi + 1e-12
    )


def _draw_drivable(rng, layout: RoundaboutLayout, margin: float) -> tuple[float, float]:
    R = layout.outer_radius + margin
    while True:
        x = layout.center_x + rng.uniform(-R, R)
        y = layout.center_y + rng.uniform(-R, R)
        dx = x - layout.center_x
        dy = y - layout.center_y
        if dx * dx + dy * dy <= R * R and layout.point_drivable(x, y):
            return float(x), float(y)


def _draw_routes(rng, pool: list[str]) -> RoutePair:
    while True:
        i = int(rng.integers(len(pool)))
        j = int(rng.integers(len(pool)))
        a, b = pool[i], pool[j]
        if a.split("-")[0] != b.split("-")[0]:
            return RoutePair(a, b)


def _draw_field(rng, layout, v_max) -> TrafficState:
    ex, ey = _draw_drivable(rng, layout, FIELD_MARGIN)
    ox, oy = _draw_drivable(rng, layout, FIELD_MARGIN)
    return TrafficState(
        VehicleState(ex, ey, float(rng.uniform(0, v_max)), float(rng.uniform(-math.pi, math.pi))),
        VehicleState(ox, oy, float(rng.uniform(0, v_max)), float(rng.uniform(-math.pi, math.pi))),
    )


def _draw_corridor(rng, layout, routes: RoutePair, v_max) -> TrafficState:
    states = []
    for rid in (routes.ego, routes.opp):
        route = layout.route(rid)
        lo = max(0.0, route.len_entry - CORRIDOR_BACK)
        hi = min(route.length, route.len_entry + route.len_arc + CORRIDOR_AHEAD
                 + layout.objective_offset)
        dist = float(rng.uniform(lo, hi))
        x, y, heading = layout.route_point(rid, dist)
        x += float(rng.normal(0.0, CORRIDOR_POS_SD))
        y += float(rng.normal(0.0, CORRIDOR_POS_SD))
        heading += float(rng.normal(0.0, CORRIDOR_TH_SD))
        heading = math.remainder(heading, 2.0 * math.pi)
        states.append(VehicleState(x, y, float(rng.uniform(0, SPAWN_V_MAX)), heading))
    return TrafficState(*states)


def _draw_encounter(rng, layout, v_max) -> TrafficState:
    ex, ey = _draw_drivable(rng, layout, ENCOUNTER_MARGIN)
    while True:
        ox, oy = _draw_drivable(rng, layout, ENCOUNTER_MARGIN)
        if math.hypot(ox - ex, oy - ey) <= ENCOUNTER_DIST:
            break
    return TrafficState(
        VehicleState(ex, ey, float(rng.uniform(0, v_max)), float(rng.uniform(-math.pi, math.pi))),
        VehicleState(ox, oy, float(rng.uniform(0, v_max)), float(rng.uniform(-math.pi, math.pi))),
    )


def _micro(rng, X: TrafficState, v_max) -> TrafficState:
    def bump(s: VehicleState) -> VehicleState:
        return VehicleState(
            s.x + float(rng.uniform(-MICRO_POS, MICRO_POS)),
            s.y + float(rng.uniform(-MICRO_POS, MICRO_POS)),
            min(v_max, max(0.0, s.v + float(rng.uniform(-MICRO_V, MICRO_V)))),
            math.remainder(s.theta + float(rng.uniform(-MICRO_TH, MICRO_TH)), 2.0 * math.pi),
        )

    return TrafficState(bump(X.ego), bump(X.opp))


def _label_state(cache: PlanCache, X: TrafficState, routes: RoutePair, clear: bool = True):
    """Exact-planner labels for one state.

    Returns (zeta, ego action id vs type-1, ego action id vs type-2,
    opponent type-1 first action id, opponent type-2 first action id).
    clear=False keeps the cache's memo, which makes labeling nearly free for
    states an episode controller has already planned from.
    """
    if clear:
        cache.clear()
    t1 = cache.type1(X.swapped, routes.swapped)
    t2 = cache.type2(X.swapped, routes.swapped)
    zeta = t1.first.id != t2.first.id
    a1 = cache.best_response(X, routes.ego, t1.actions).first.id
    a2 = cache.best_response(X, routes.ego, t2.actions).first.id
    return zeta, a1, a2, t1.first.id, t2.first.id


class _Emitter:
    """Accumulates labeled rows for the three sets during one generation run."""

    def __init__(self, rng, cache: PlanCache, layout: RoundaboutLayout, v_max: float):
        self.rng = rng
        self.cache = cache
        self.layout = layout
        self.v_max = v_max
        self.featsA, self.labsA = [], []
        self.featsB, self.labsB = [], []
        self.featsC, self.labsC = [], []
        self.states_labeled = 0
        self.stable_seeds = 0

    def mark(self) -> tuple[int, int]:
        return len(self.labsA), len(self.labsB)

    def rollback(self, mark: tuple[int, int]) -> None:
        """Discard rows recorded since mark (label chaos — see docstring)."""
        nA, nB = mark
        del self.featsA[nA:], self.labsA[nA:]
        del self.featsB[nB:], self.labsB[nB:]

    def emit(self, X: TrafficState, routes: RoutePair, cache=None, clear=True):
        """Label one state; its rows join setA and setB (never setC here)."""
        zeta, a1, a2, g1, g2 = _label_state(cache or self.cache, X, routes, clear)
        base = encode_base(X, routes, self.layout)
        self.featsA.append(np.concatenate([base, [1.0]]))
        self.labsA.append(a1)
        self.featsA.append(np.concatenate([base, [2.0]]))
        self.labsA.append(a2)
        self.featsB.append(base)
        self.labsB.append(int(zeta))
        self.states_labeled += 1
        return zeta, (g1, g2), base

    def emit_type_rows(self, base: np.ndarray, polarity: tuple[int, int]) -> None:
        for gid, eta in zip(polarity, (1, 2)):
            onehot = np.zeros(NUM_ACTIONS)
            onehot[gid - 1] = 1.0
            self.featsC.append(np.concatenate([base, onehot]))
            self.labsC.append(eta)

    def emit_with_copies(
        self,
        X: TrafficState,
        routes: RoutePair,
        n_copies: int = BASE_COPIES,
        cache=None,
        clear: bool = True,
    ) -> None:
        """One base state plus its micro copies; criticals may seed setC.

        A critical base whose micro probes disagree sits in a chaotic label
        cell; the whole cluster is rolled back so the sets carry only states
        whose labels are locally well defined. Episode-harvested states come
        through with n_copies=0: density along the visited manifold comes
        from neighbouring ticks and episodes rather than micro copies.
        """
        start = self.mark()
        zeta, polarity, base = self.emit(X, routes, cache=cache, clear=clear)
        copies = []
        for _ in range(n_copies):
            Xc = _micro(self.rng, X, self.v_max)
            copies.append(self.emit(Xc, routes))
        if zeta and not self.try_seed(X, routes, polarity, base, copies):
            self.rollback(start)

    def try_seed(self, X, routes, polarity, base, copies) -> bool:
        """Verify a critical state's robustness; densify setC if it holds."""
        probes = []
        for _ in range(CRIT_VERIFY_PROBES):
            Xp = _micro(self.rng, X, self.v_max)
            probes.append(self.emit(Xp, routes))
        if not all(z and pol == polarity for z, pol, _ in probes):
            return False
        self.stable_seeds += 1
        self.emit_type_rows(base, polarity)
        for z, pol, b in copies + probes:
            if z and pol == polarity:
                self.emit_type_rows(b, pol)
        for _ in range(CRIT_COPIES):
            Xc = _micro(self.rng, X, self.v_max)
            z, pol, b = self.emit(Xc, routes)
            if z and pol == polarity:
                self.emit_type_rows(b, pol)
        return True


def generate_dataset(
    num_states: int,
    seed: int,
    params: SimParams,
    layout: RoundaboutLayout,
    w: tuple[float, ...] = DEFAULT_WEIGHTS,
    zones: ZoneSpec = DEFAULT_ZONES,
    progress=None,
    c_target: int | None = None,
) -> tuple[Dataset, Dataset, Dataset]:
    """Sample states, label them with the exact planners, build all three sets.

    num_states counts base draws; each adds its micro copies, and robust
    critical states add densification copies, so the emitted sets are larger.
    After the base pass, encounter states keep being mined until setC holds
    at least c_target rows (default num_states) or a draw cap is reached.
    Deterministic given seed.
    """
    from .simulator import Episode, sample_scenario

    if num_states < 1:
        raise ValueError(f"num_states must be at least 1, got {num_states}")
    if c_target is None:
        c_target = num_states
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    cache = PlanCache(layout, params, w, zones)
    pool = _route_pool(layout)
    em = _Emitter(rng, cache, layout, params.v_max)

    episode_buf: list[tuple[TrafficState, RoutePair, PlanCache]] = []

    def harvest_episode() -> None:
        cfg = sample_scenario(
            rng, layout, params, seed=int(rng.integers(2**31)), estimator_mode="exact"
        )
        ep = Episode(cfg, layout, w=w, zones=zones)
        result = ep.run()
        states = [cfg.initial] + [
            TrafficState(r.ego, r.opp) for r in result.records[:-1]
        ]
        # The episode controller already planned from every pre-state, so its
        # cache makes labeling these states nearly free.
        episode_buf.extend((X, cfg.routes, ep.cache) for X in states)

    for i in range(num_states):
        u = rng.random()
        if u < MIX_FIELD:
            routes = _draw_routes(rng, pool)
            em.emit_with_copies(_draw_field(rng, layout, params.v_max), routes)
        elif u < MIX_FIELD + MIX_CORRIDOR:
            routes = _draw_routes(rng, pool)
            em.emit_with_copies(_draw_corridor(rng, layout, routes, params.v_max), routes)
        elif u < MIX_FIELD + MIX_CORRIDOR + MIX_EPISODE:
            if not episode_buf:
                harvest_episode()
            X, routes, ep_cache = episode_buf.pop(0)
            em.emit_with_copies(X, routes, n_copies=0, cache=ep_cache, clear=False)
        else:
            routes = _draw_routes(rng, pool)
            em.emit_with_copies(_draw_encounter(rng, layout, params.v_max), routes)
        if progress is not None:
            progress(i + 1, num_states)

    draws = 0
    cap = MINING_DRAW_CAP_FACTOR * num_states
    while len(em.labsC) < c_target and draws < cap:
        draws += 1
        routes = _draw_routes(rng, pool)
        X = _draw_encounter(rng, layout, params.v_max)
        start = em.mark()
        zeta, polarity, base = em.emit(X, routes)
        if not zeta or not em.try_seed(X, routes, polarity, base, []):
            em.rollback(start)

    labsB_arr = np.array(em.labsB, dtype=np.int64)
    keep = _stratify_indices(rng, labsB_arr, STRATIFY_RATIO)
    featsB = [em.featsB[k] for k in keep]
    labsB_arr = labsB_arr[keep]

    common = {
        "seed": seed,
        "num_states": num_states,
        "c_target": c_target,
        "states_labeled": em.states_labeled,
        "stable_seeds": em.stable_seeds,
        "params": {
            "dt": params.dt,
            "horizon_n": params.horizon_n,
            "lam": params.lam,
            "beta": params.beta,
            "v_max": params.v_max,
        },
        "w": list(w),
        "layout": layout_to_dict(layout),
        "support": "field/corridor/encounter mixture with micro copies; see module docstring",
    }
    setA = Dataset("A", np.array(em.featsA), np.array(em.labsA), {**common, "kind": "A"})
    setB = Dataset("B", np.array(featsB), labsB_arr, {**common, "kind": "B"})
    setC = Dataset(
        "C",
        np.array(em.featsC)
        if em.featsC
        else np.zeros((0, len(FEATURE_NAMES_BASE) + NUM_ACTIONS)),
        np.array(em.labsC, dtype=np.int64),
        {**common, "kind": "C"},
    )
    return setA, setB, setC


def _stratify_indices(rng, labels: np.ndarray, ratio: int) -> np.ndarray:
    """Indices keeping every minority row and at most ratio-for-1 majority."""
    if len(labels) == 0:
        return np.arange(0)
    values, counts = np.unique(labels, return_counts=True)
    if len(values) < 2:
        return np.arange(len(labels))
    minority = values[np.argmin(counts)]
    n_min = int(counts.min())
    keep = []
    for v in values:
        idx = np.flatnonzero(labels == v)
        cap = n_min * ratio if v != minority else len(idx)
        if len(idx) > cap:
            idx = rng.choice(idx, size=cap, replace=False)
        keep.append(idx)
    return np.sort(np.concatenate(keep))


def split(dataset: Dataset, ratio: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split into disjoint, exhaustive train/validation parts."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    perm = rng.permutation(n)
    n_train = int(round(n * ratio))
    tr, va = perm[:n_train], perm[n_train:]
    meta = dict(dataset.meta)
    train = Dataset(dataset.kind, dataset.features[tr], dataset.labels[tr], {**meta, "split": "train"})
    val = Dataset(dataset.kind, dataset.features[va], dataset.labels[va], {**meta, "split": "val"})
    return train, val


# ---------------------------------------------------------------------------
# The classifier
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Hyperparams:
    hidden: tuple[int, ...] = (64, 64, 64, 64, 64, 64)
    epochs: int = 40
    batch_size: int = 256
    lr: float = 0.05
    momentum: float = 0.9
    lr_decay: float = 0.97
    l2: float = 1e-6
    optimizer: str = "sgd"  # "sgd" (momentum) or "adam"

    def to_dict(self) -> dict:
        return {
            "hidden": list(self.hidden),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "momentum": self.momentum,
            "lr_decay": self.lr_decay,
            "l2": self.l2,
            "optimizer": self.optimizer,
        }


@dataclass
class Approximator:
    """A fitted ReLU stack plus everything needed to reproduce its outputs."""

    kind: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    mu: np.ndarray
    sigma: np.ndarray
    label_values: tuple[int, ...]
    metadata: dict = field(default_factory=dict)

    @property
    def val_accuracy(self) -> float:
        return float(self.metadata.get("val_accuracy", float("nan")))

    def logits(self, X: np.ndarray) -> np.ndarray:
        Z = (np.atleast_2d(X) - self.mu) / self.sigma
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            Z = np.maximum(Z @ W + b, 0.0)
        return Z @ self.weights[-1] + self.biases[-1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Label values for each row; argmax ties go to the smaller label."""
        idx = np.argmax(self.logits(X), axis=1)
        return np.asarray(self.label_values)[idx]

    def predict_one(self, x: np.ndarray) -> int:
        return int(self.predict(x[None, :])[0])

    def accuracy(self, ds: Dataset) -> float:
        return float(np.mean(self.predict(ds.features) == ds.labels))

    def save(self, path) -> None:
        arrays = {
            "version": np.array(1),
            "kind": np.array(self.kind),
            "mu": self.mu,
            "sigma": self.sigma,
            "label_values": np.array(self.label_values),
            "meta_json": np.array(json.dumps(self.metadata)),
            "n_layers": np.array(len(self.weights)),
        }
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"] = W
            arrays[f"b{i}"] = b
        np.savez(path, **arrays)


def load_approximator(path) -> Approximator:
    with np.load(path, allow_pickle=False) as data:
        if int(data["version"]) != 1:
            raise ValueError(f"unsupported model version: {int(data['version'])}")
        n = int(data["n_layers"])
        return Approximator(
            kind=str(data["kind"]),
            weights=[data[f"W{i}"].copy() for i in range(n)],
            biases=[data[f"b{i}"].copy() for i in range(n)],
            mu=data["mu"].copy(),
            sigma=data["sigma"].copy(),
            label_values=tuple(int(v) for v in data["label_values"]),
            metadata=json.loads(str(data["meta_json"])),
        )


def train(
    train_set: Dataset,
    val_set: Dataset,
    hyperparams: Hyperparams = Hyperparams(),
    seed: int = 0,
) -> Approximator:
    """Seeded minibatch gradient descent on softmax loss (momentum or Adam)."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be nonempty")
    if val_set.kind != train_set.kind:
        raise ValueError("train and validation sets are for different networks")
    hp = hyperparams
    if hp.optimizer not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {hp.optimizer!r}")
    label_values = LABEL_VALUES[train_set.kind]
    lut = {v: i for i, v in enumerate(label_values)}
    y = np.array([lut[int(v)] for v in train_set.labels])
    Xr = train_set.features
    n, d = Xr.shape
    k = len(label_values)

    mu = Xr.mean(axis=0)
    sigma = np.maximum(Xr.std(axis=0), 1e-8)
    X = (Xr - mu) / sigma

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    sizes = [d, *hp.hidden, k]
    Ws = [
        rng.normal(0.0, math.sqrt(2.0 / sizes[i]), size=(sizes[i], sizes[i + 1]))
        for i in range(len(sizes) - 1)
    ]
    bs = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
    vW = [np.zeros_like(W) for W in Ws]
    vb = [np.zeros_like(b) for b in bs]
    if hp.optimizer == "adam":
        mW = [np.zeros_like(W) for W in Ws]
        mb = [np.zeros_like(b) for b in bs]
        b1, b2, eps = 0.9, 0.999, 1e-8
        step = 0

    lr = hp.lr
    for epoch in range(hp.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hp.batch_size):
            idx = perm[start : start + hp.batch_size]
            xb, yb = X[idx], y[idx]
            m = len(idx)

            acts = [xb]
            Z = xb
            for W, b in zip(Ws[:-1], bs[:-1]):
                Z = np.maximum(Z @ W + b, 0.0)
                acts.append(Z)
            logits = Z @ Ws[-1] + bs[-1]

            shifted = logits - logits.max(axis=1, keepdims=True)
            expz = np.exp(shifted)
            probs = expz / expz.sum(axis=1, keepdims=True)
            loss = -np.mean(np.log(probs[np.arange(m), yb] + 1e-300))
            epoch_loss += loss * m

            grad = probs
            grad[np.arange(m), yb] -= 1.0
            grad /= m
            if hp.optimizer == "adam":
                step += 1
            for layer in range(len(Ws) - 1, -1, -1):
                gW = acts[layer].T @ grad + hp.l2 * Ws[layer]
                gb = grad.sum(axis=0)
                if layer > 0:
                    grad = (grad @ Ws[layer].T) * (acts[layer] > 0.0)
                if hp.optimizer == "adam":
                    mW[layer] = b1 * mW[layer] + (1 - b1) * gW
                    mb[layer] = b1 * mb[layer] + (1 - b1) * gb
                    vW[layer] = b2 * vW[layer] + (1 - b2) * gW**2
                    vb[layer] = b2 * vb[layer] + (1 - b2) * gb**2
                    c1, c2 = 1 - b1**step, 1 - b2**step
                    Ws[layer] -= lr * (mW[layer] / c1) / (np.sqrt(vW[layer] / c2) + eps)
                    bs[layer] -= lr * (mb[layer] / c1) / (np.sqrt(vb[layer] / c2) + eps)
                else:
                    vW[layer] = hp.momentum * vW[layer] - lr * gW
                    vb[layer] = hp.momentum * vb[layer] - lr * gb
                    Ws[layer] += vW[layer]
                    bs[layer] += vb[layer]
        if not math.isfinite(epoch_loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        lr *= hp.lr_decay

    model = Approximator(
        kind=train_set.kind,
        weights=Ws,
        biases=bs,
        mu=mu,
        sigma=sigma,
        label_values=label_values,
        metadata={},
    )
    val_acc = model.accuracy(val_set)
    model.metadata = {
        "val_accuracy": val_acc,
        "train_size": n,
        "val_size": len(val_set),
        "hyperparams": hp.to_dict(),
        "seed": seed,
        "feature_names": list(feature_names(train_set.kind)),
        "dataset_meta": train_set.meta,
    }
    return model


# ---------------------------------------------------------------------------
# Inference entry points
# ---------------------------------------------------------------------------


def predict_policy(
    A: Approximator, X: TrafficState, routes: RoutePair, layout: RoundaboutLayout, eta: int
) -> Action:
    if A.kind != "A":
        raise ValueError(f"expected an A-network, got kind {A.kind!r}")
    return ACTION_BY_ID[A.predict_one(encode_policy(X, routes, layout, eta))]


def predict_critical(
    B: Approximator, X: TrafficState, routes: RoutePair, layout: RoundaboutLayout
) -> bool:
    if B.kind != "B":
        raise ValueError(f"expected a B-network, got kind {B.kind!r}")
    return bool(B.predict_one(encode_critical(X, routes, layout)))


def predict_type(
    C: Approximator, X: TrafficState, routes: RoutePair, layout: RoundaboutLayout, action: Action
) -> DriverType:
    if C.kind != "C":
        raise ValueError(f"expected a C-network, got kind {C.kind!r}")
    return DriverType(C.predict_one(encode_type(X, routes, layout, action)))


class NNBundle:
    """The three fitted networks behind the adaptive controller's interface."""

    def __init__(self, A: Approximator, B: Approximator, C: Approximator, layout: RoundaboutLayout):
        for model, kind in ((A, "A"), (B, "B"), (C, "C")):
            if model.kind != kind:
                raise ValueError(f"model in the {kind} slot has kind {model.kind!r}")
        self.A = A
        self.B = B
        self.C = C
        self.layout = layout

    def critical(self, X: TrafficState, routes: RoutePair) -> bool:
        return predict_critical(self.B, X, routes, self.layout)

    def policy(self, X: TrafficState, routes: RoutePair, eta: int) -> Action:
        return predict_policy(self.A, X, routes, self.layout, eta)

    def classify(self, X: TrafficState, routes: RoutePair, action: Action) -> DriverType:
        return predict_type(self.C, X, routes, self.layout, action)

    def save(self, directory) -> None:
        import os

        os.makedirs(directory, exist_ok=True)
        self.A.save(os.path.join(directory, "nn_a.npz"))
        self.B.save(os.path.join(directory, "nn_b.npz"))
        self.C.save(os.path.join(directory, "nn_c.npz"))


def load_bundle(directory, layout: RoundaboutLayout) -> NNBundle:
    import os

    return NNBundle(
        load_approximator(os.path.join(directory, "nn_a.npz")),
        load_approximator(os.path.join(directory, "nn_b.npz")),
        load_approximator(os.path.join(directory, "nn_c.npz")),
        layout,
    )


# ---------------------------------------------------------------------------
# Distillation pipeline
# ---------------------------------------------------------------------------

# Training configuration the pipeline ships with; chosen on held-out episodes.
PRODUCTION_HYPERPARAMS = Hyperparams(
    hidden=(256, 256, 256, 256, 256, 256),
    epochs=60,
    lr=1e-3,
    batch_size=128,
    lr_decay=0.98,
    optimizer="adam",
)


def _extend_dataset(ds: Dataset, feats: list, labs: list, meta_extra: dict) -> Dataset:
    if not feats:
        return Dataset(ds.kind, ds.features, ds.labels, {**ds.meta, **meta_extra})
    return Dataset(
        ds.kind,
        np.concatenate([ds.features, np.array(feats)]),
        np.concatenate([ds.labels, np.array(labs, dtype=np.int64)]),
        {**ds.meta, **meta_extra},
    )


def _augment_on_policy(
    sets: tuple[Dataset, Dataset, Dataset],
    bundle: NNBundle,
    round_states: int,
    seed: int,
    round_index: int,
    params: SimParams,
    layout: RoundaboutLayout,
    w: tuple[float, ...],
    zones: ZoneSpec,
) -> tuple[Dataset, Dataset, Dataset]:
    """Label the states the current networks drive through, and append them.

    The networks' own trajectories include states reached through their
    mistakes; labeling those with the exact planners teaches recovery, which
    offline sampling alone cannot provide.
    """
    from .simulator import Episode, sample_scenario

    setA, setB, setC = sets
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1000 + round_index,)))
    cache = PlanCache(layout, params, w, zones)
    em = _Emitter(rng, cache, layout, params.v_max)
    harvested = 0
    while harvested < round_states:
        cfg = sample_scenario(
            rng, layout, params, seed=int(rng.integers(2**31)), estimator_mode="nn"
        )
        ep = Episode(cfg, layout, zones=zones, w=w, nn=bundle)
        result = ep.run()
        states = [cfg.initial] + [TrafficState(r.ego, r.opp) for r in result.records[:-1]]
        for X in states:
            em.emit_with_copies(X, cfg.routes, cache=ep.cache, clear=False)
        harvested += len(states)

    extra = {"on_policy_round": round_index + 1, "on_policy_states": harvested}
    newA = _extend_dataset(setA, em.featsA, em.labsA, extra)
    newC = _extend_dataset(setC, em.featsC, em.labsC, extra)
    newB = _extend_dataset(setB, em.featsB, em.labsB, extra)
    keep = _stratify_indices(rng, newB.labels, STRATIFY_RATIO)
    newB = Dataset(newB.kind, newB.features[keep], newB.labels[keep], newB.meta)
    return newA, newB, newC


def distill(
    num_states: int,
    seed: int,
    params: SimParams,
    layout: RoundaboutLayout,
    w: tuple[float, ...] = DEFAULT_WEIGHTS,
    zones: ZoneSpec = DEFAULT_ZONES,
    hyperparams: Hyperparams = PRODUCTION_HYPERPARAMS,
    c_target: int | None = None,
    rounds: int = 2,
    round_states: int | None = None,
    split_ratio: float = 0.8,
    progress=None,
) -> tuple[NNBundle, tuple[Dataset, Dataset, Dataset], dict]:
    """Sample, label, train, then refine on the networks' own trajectories.

    After the initial fit, each round runs the current networks in closed
    loop on fresh seeded scenarios, labels every visited state with the
    exact planners, appends those rows to the sets, and retrains from
    scratch. Returns the final bundle, the final sets, and a per-round
    report of sizes and accuracies. Deterministic given seed.
    """
    if rounds < 0:
        raise ValueError(f"rounds must be nonnegative, got {rounds}")
    if round_states is None:
        round_states = max(num_states // 4, 1)
    sets = generate_dataset(
        num_states, seed, params, layout, w, zones, progress=progress, c_target=c_target
    )
    report: dict = {"rounds": []}
    bundle = None
    for r in range(rounds + 1):
        entry = {"round": r, "sizes": {}, "val_accuracy": {}}
        nets = {}
        for ds in sets:
            tr, va = split(ds, split_ratio, seed=seed + 7919 * (r + 1))
            net = train(tr, va, hyperparams, seed=seed + 104729 * (r + 1))
            nets[ds.kind] = net
            entry["sizes"][ds.kind] = len(ds)
            entry["val_accuracy"][ds.kind] = net.metadata["val_accuracy"]
        bundle = NNBundle(nets["A"], nets["B"], nets["C"], layout)
        report["rounds"].append(entry)
        if r < rounds:
            sets = _augment_on_policy(
                sets, bundle, round_states, seed, r, params, layout, w, zones
            )
    return bundle, sets, report


# ---------------------------------------------------------------------------
# Closed-loop evaluation
# ---------------------------------------------------------------------------


def closed_loop_agreement(
    bundle: NNBundle,
    n_episodes: int,
    master_seed: int,
    layout: RoundaboutLayout,
    params: SimParams = SimParams(),
    w: tuple[float, ...] = DEFAULT_WEIGHTS,
    max_ticks: int = 120,
) -> tuple[float, list[dict]]:
    """Tick-level agreement between the networks and the exact pipeline.

    Runs fresh seeded scenarios with the network-driven controller, then asks
    the exact planners what they would have done at every visited pre-step
    state under the controller's own belief at that moment. Returns the
    pooled agreement rate and a per-episode table.
    """
    from .estimator import Belief, select_model
    from .simulator import Episode, sample_scenario

    if n_episodes < 1:
        raise ValueError(f"n_episodes must be at least 1, got {n_episodes}")
    total = 0
    matched = 0
    rows = []
    for i in range(n_episodes):
        rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(i,)))
        cfg = sample_scenario(
            rng, layout, params, seed=i, max_ticks=max_ticks, estimator_mode="nn"
        )
        ep = Episode(cfg, layout, w=w, nn=bundle)
        result = ep.run()
        pres = [cfg.initial] + [TrafficState(r.ego, r.opp) for r in result.records[:-1]]
        trace = result.belief_trace
        ep_total = 0
        ep_match = 0
        for pre, rec, p2 in zip(pres, result.records, trace):
            eta = select_model(Belief(p2))
            t1 = ep.cache.type1(pre.swapped, cfg.routes.swapped)
            t2 = ep.cache.type2(pre.swapped, cfg.routes.swapped)
            predicted = t2.actions if eta == DriverType.TYPE2 else t1.actions
            exact = ep.cache.best_response(pre, cfg.routes.ego, predicted).first.id
            ep_total += 1
            ep_match += int(exact == rec.ego_action)
        total += ep_total
        matched += ep_match
        rows.append(
            {
                "index": i,
                "outcome": result.outcome,
                "ticks": result.ticks,
                "agreement": ep_match / ep_total if ep_total else 1.0,
            }
        )
    return matched / total, rows
