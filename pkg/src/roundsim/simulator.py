"""Closed-loop episode engine.

One Episode couples two controllers to the shared kinematics, steps them in
simultaneous-move fashion, lets the adaptive controller refine its belief
about the opponent, and asks the Judge for a terminal outcome after every
tick. Batches run many seeded episodes and aggregate outcome counts.

Tick order is fixed by contract: both controllers commit an action from the
same pre-step state, both vehicles step, the adaptive side updates its belief
from the opponent's executed action if the pre-step state was critical, and
only then are terminal conditions checked.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .estimator import (
    Belief,
    DriverType,
    classify_type,
    select_model,
    update_belief,
)
from .geometry import (
    DEFAULT_ZONES,
    RoundaboutLayout,
    RoutePair,
    ZoneSpec,
    c_zone,
    default_layout,
    layout_from_dict,
    layout_to_dict,
    rects_overlap,
)
from .kinematics import ACTION_BY_ID, Action, SimParams, VehicleState, step
from .policy import PlanCache
from .reward import DEFAULT_WEIGHTS, TrafficState

OUTCOMES = ("success", "collision", "off_road", "marking_violation", "deadlock", "timeout")

OPP_KINDS = ("type1", "type2", "external", "adaptive")

ESTIMATOR_MODES = ("exact", "nn")

MAINTAIN = ACTION_BY_ID[1]

# Deadlock: neither vehicle gains more than this arc length over the window.
DEADLOCK_WINDOW = 40
DEADLOCK_EPS = 0.5


# ---------------------------------------------------------------------------
# Controllers
# ---------------------------------------------------------------------------


class AdaptiveController:
    """The autonomous vehicle: plans against the currently believed type.

    In exact mode every quantity comes from the receding-horizon planners
    through a shared PlanCache. In nn mode the three fitted approximators
    stand in for the planner pipeline (policy, criticality, classification);
    the belief arithmetic itself is always exact.
    """

    def __init__(
        self,
        routes: RoutePair,
        cache: PlanCache,
        mode: str = "exact",
        nn=None,
        p2_init: float = 0.5,
    ):
        if mode not in ESTIMATOR_MODES:
            raise ValueError(f"unknown estimator mode {mode!r}")
        if mode == "nn" and nn is None:
            raise ValueError("nn estimator mode needs a fitted model bundle")
        self.routes = routes
        self.cache = cache
        self.mode = mode
        self.nn = nn
        self.belief = Belief(p2_init)
        self.belief_trace = [p2_init]
        self._pending: tuple[TrafficState, bool] | None = None
        self.last_latency_us = 0
        self.last_critical = False

    def act(self, X: TrafficState) -> Action:
        t0 = time.perf_counter_ns()
        eta = select_model(self.belief)
        if self.mode == "exact":
            t1 = self.cache.type1(X.swapped, self.routes.swapped)
            t2 = self.cache.type2(X.swapped, self.routes.swapped)
            critical = t1.first.id != t2.first.id
            predicted = t2.actions if eta == DriverType.TYPE2 else t1.actions
            action = self.cache.best_response(X, self.routes.ego, predicted).first
        else:
            critical = self.nn.critical(X, self.routes)
            action = self.nn.policy(X, self.routes, int(eta))
        self._pending = (X, critical)
        self.last_critical = critical
        self.last_latency_us = (time.perf_counter_ns() - t0) // 1000
        return action

    def observe(self, opp_action: Action) -> None:
        """Digest the opponent's executed action for the pre-step state."""
        if self._pending is None:
            raise RuntimeError("observe() before act()")
        t0 = time.perf_counter_ns()
        X_pre, critical = self._pending
        self._pending = None
        if critical:
            if self.mode == "exact":
                obs = classify_type(
                    X_pre,
                    opp_action,
                    self.routes,
                    self.cache.params,
                    self.cache.layout,
                    self.cache.w,
                    self.cache.zones,
                    self.cache,
                )
                eta = obs.eta
            else:
                eta = self.nn.classify(X_pre, self.routes, opp_action)
            if eta is not None:
                self.belief = update_belief(self.belief, eta, self.cache.params.beta)
        self.belief_trace.append(self.belief.p2)
        self.last_latency_us += (time.perf_counter_ns() - t0) // 1000


class ScriptedController:
    """Plays a fixed driver type, replanning from scratch every tick."""

    def __init__(self, eta: DriverType, routes: RoutePair, cache: PlanCache):
        self.eta = DriverType(eta)
        self.routes = routes
        self.cache = cache

    def act(self, X: TrafficState) -> Action:
        if self.eta == DriverType.TYPE1:
            return self.cache.type1(X, self.routes).first
        return self.cache.type2(X, self.routes).first

    def observe(self, opp_action: Action) -> None:
        pass


class ExternalController:
    """Action source driven from outside the tick loop (a human, usually).

    The freshest injected action before a tick wins; with nothing injected
    since the previous tick the controller repeats its last action and flags
    the tick as starved.
    """

    def __init__(self, initial: Action = MAINTAIN):
        self._latest = initial
        self._fresh = False
        self.last_starved = False

    def inject(self, action: Action) -> None:
        self._latest = action
        self._fresh = True

    def act(self, X: TrafficState) -> Action:
        self.last_starved = not self._fresh
        self._fresh = False
        return self._latest

    def observe(self, opp_action: Action) -> None:
        pass


# ---------------------------------------------------------------------------
# Episode configuration and records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeConfig:
    """Everything needed to reproduce one episode bit for bit."""

    initial: TrafficState
    routes: RoutePair
    opp_kind: str
    params: SimParams = SimParams()
    seed: int = 0
    max_ticks: int = 120
    estimator_mode: str = "exact"

    def __post_init__(self):
        if self.opp_kind not in OPP_KINDS:
            raise ValueError(f"unknown opponent kind {self.opp_kind!r}")
        if self.estimator_mode not in ESTIMATOR_MODES:
            raise ValueError(f"unknown estimator mode {self.estimator_mode!r}")
        if self.max_ticks < 1:
            raise ValueError(f"max_ticks must be at least 1, got {self.max_ticks}")

    def to_dict(self) -> dict:
        return {
            "initial": {"ego": list(self.initial.ego.as_tuple()), "opp": list(self.initial.opp.as_tuple())},
            "routes": {"ego": self.routes.ego, "opp": self.routes.opp},
            "opp_kind": self.opp_kind,
            "params": {
                "dt": self.params.dt,
                "horizon_n": self.params.horizon_n,
                "lam": self.params.lam,
                "beta": self.params.beta,
                "v_max": self.params.v_max,
            },
            "seed": self.seed,
            "max_ticks": self.max_ticks,
            "estimator_mode": self.estimator_mode,
        }

    @staticmethod
    def from_dict(data: dict) -> "EpisodeConfig":
        ego = VehicleState(*data["initial"]["ego"])
        opp = VehicleState(*data["initial"]["opp"])
        return EpisodeConfig(
            initial=TrafficState(ego, opp),
            routes=RoutePair(data["routes"]["ego"], data["routes"]["opp"]),
            opp_kind=data["opp_kind"],
            params=SimParams(**data["params"]),
            seed=int(data["seed"]),
            max_ticks=int(data["max_ticks"]),
            estimator_mode=data["estimator_mode"],
        )


@dataclass(frozen=True)
class TickRecord:
    """State of the world after one tick, plus what produced it."""

    tick: int
    ego: VehicleState
    opp: VehicleState
    ego_action: int
    opp_action: int
    p2: float
    critical: bool
    latency_us: int
    starved: bool = False


@dataclass(frozen=True)
class EpisodeResult:
    outcome: str
    ticks: int
    initial: TrafficState
    records: tuple[TickRecord, ...]
    config: EpisodeConfig

    @property
    def belief_trace(self) -> list[float]:
        return [0.5] + [r.p2 for r in self.records]


# ---------------------------------------------------------------------------
# Terminal judgment
# ---------------------------------------------------------------------------


class Judge:
    """Applies the terminal conditions in fixed precedence order.

    collision, then off_road, then marking_violation, then success, then
    deadlock, then timeout; the first condition that fires names the outcome.
    """

    def __init__(
        self,
        layout: RoundaboutLayout,
        routes: RoutePair,
        max_ticks: int,
        zones: ZoneSpec = DEFAULT_ZONES,
        window: int = DEADLOCK_WINDOW,
        eps: float = DEADLOCK_EPS,
    ):
        self.layout = layout
        self.routes = routes
        self.max_ticks = max_ticks
        self.zones = zones
        self.window = window
        self.eps = eps
        self._progress: list[tuple[float, float]] = []

    def reset(self, initial: TrafficState) -> None:
        self._progress = [self._measure(initial)]

    def _measure(self, X: TrafficState) -> tuple[float, float]:
        pe = self.layout.route_progress(self.routes.ego, X.ego.x, X.ego.y)
        po = self.layout.route_progress(self.routes.opp, X.opp.x, X.opp.y)
        return (pe, po)

    def check(self, prev: TrafficState, cur: TrafficState, tick: int) -> str | None:
        """Outcome after the move prev -> cur at tick index `tick`, or None."""
        self._progress.append(self._measure(cur))

        if rects_overlap(c_zone(cur.ego, self.zones), c_zone(cur.opp, self.zones)):
            return "collision"
        if self.layout.off_road(c_zone(cur.ego, self.zones)) or self.layout.off_road(
            c_zone(cur.opp, self.zones)
        ):
            return "off_road"
        if self.layout.marking_violation(
            prev.ego, cur.ego, self.routes.ego, self.zones
        ) or self.layout.marking_violation(prev.opp, cur.opp, self.routes.opp, self.zones):
            return "marking_violation"
        if self.layout.in_objective_lane(
            cur.ego, self.routes.ego, self.zones
        ) and self.layout.in_objective_lane(cur.opp, self.routes.opp, self.zones):
            return "success"
        if tick >= self.window:
            then = self._progress[tick - self.window]
            now = self._progress[tick]
            if (now[0] - then[0]) <= self.eps and (now[1] - then[1]) <= self.eps:
                return "deadlock"
        if tick >= self.max_ticks:
            return "timeout"
        return None


# ---------------------------------------------------------------------------
# Episode
# ---------------------------------------------------------------------------


class Episode:
    """One closed-loop run, advanced a tick at a time.

    The step API exists so the realtime session server can drive an episode
    on a wall clock; run() is the batch convenience that advances to the end.
    The ego side is always the adaptive controller.
    """

    def __init__(
        self,
        cfg: EpisodeConfig,
        layout: RoundaboutLayout | None = None,
        zones: ZoneSpec = DEFAULT_ZONES,
        w: tuple[float, ...] = DEFAULT_WEIGHTS,
        nn=None,
    ):
        self.cfg = cfg
        self.layout = layout if layout is not None else default_layout()
        self.zones = zones
        for rid in (cfg.routes.ego, cfg.routes.opp):
            self.layout.route(rid)  # raises on unknown route ids
        for side, st in (("ego", cfg.initial.ego), ("opp", cfg.initial.opp)):
            if self.layout.off_road(c_zone(st, zones)):
                raise ValueError(f"initial {side} state is off the road")

        self.cache = PlanCache(self.layout, cfg.params, w, zones)
        self.ego = AdaptiveController(cfg.routes, self.cache, cfg.estimator_mode, nn)
        self.opp = self._build_opponent(cfg, nn)
        self.judge = Judge(self.layout, cfg.routes, cfg.max_ticks, zones)
        self.judge.reset(cfg.initial)

        self.state = cfg.initial
        self.tick = 0
        self.outcome: str | None = None
        self.records: list[TickRecord] = []

    def _build_opponent(self, cfg: EpisodeConfig, nn):
        if cfg.opp_kind == "type1":
            return ScriptedController(DriverType.TYPE1, cfg.routes.swapped, self.cache)
        if cfg.opp_kind == "type2":
            return ScriptedController(DriverType.TYPE2, cfg.routes.swapped, self.cache)
        if cfg.opp_kind == "external":
            return ExternalController()
        return AdaptiveController(cfg.routes.swapped, self.cache, cfg.estimator_mode, nn)

    @property
    def finished(self) -> bool:
        return self.outcome is not None

    @property
    def p2(self) -> float:
        return self.ego.belief.p2

    def advance(self) -> TickRecord:
        """Run one tick: act simultaneously, step, update belief, judge."""
        if self.finished:
            raise RuntimeError("episode already finished")
        pre = self.state
        a_ego = self.ego.act(pre)
        a_opp = self.opp.act(pre.swapped)

        params = self.cfg.params
        nxt = TrafficState(
            step(pre.ego, a_ego, params.dt, params.v_max),
            step(pre.opp, a_opp, params.dt, params.v_max),
        )
        self.ego.observe(a_opp)
        self.opp.observe(a_ego)

        self.tick += 1
        self.state = nxt
        self.outcome = self.judge.check(pre, nxt, self.tick)
        starved = isinstance(self.opp, ExternalController) and self.opp.last_starved
        rec = TickRecord(
            tick=self.tick,
            ego=nxt.ego,
            opp=nxt.opp,
            ego_action=a_ego.id,
            opp_action=a_opp.id,
            p2=self.ego.belief.p2,
            critical=self.ego.last_critical,
            latency_us=self.ego.last_latency_us,
            starved=starved,
        )
        self.records.append(rec)
        return rec

    def run(self) -> EpisodeResult:
        while not self.finished:
            self.advance()
        return EpisodeResult(
            outcome=self.outcome,
            ticks=self.tick,
            initial=self.cfg.initial,
            records=tuple(self.records),
            config=self.cfg,
        )


def run_episode(
    cfg: EpisodeConfig,
    layout: RoundaboutLayout | None = None,
    zones: ZoneSpec = DEFAULT_ZONES,
    w: tuple[float, ...] = DEFAULT_WEIGHTS,
    nn=None,
    log_path=None,
) -> EpisodeResult:
    """Run one episode to termination; optionally write its JSONL log."""
    ep = Episode(cfg, layout, zones, w, nn)
    result = ep.run()
    if log_path is not None:
        write_episode_log(log_path, result, ep.layout)
    return result


# ---------------------------------------------------------------------------
# Episode logs and replay
# ---------------------------------------------------------------------------


def _state_list(s: VehicleState) -> list:
    return [s.x, s.y, s.v, s.theta]


def write_episode_log(path, result: EpisodeResult, layout: RoundaboutLayout) -> None:
    """One JSON object per line: header, each tick, then the outcome.

    Floats serialize with repr precision, so a log round-trips states
    bit-exactly and any episode is reproducible from its own header.
    """
    with open(path, "w") as f:
        header = {
            "v": 1,
            "kind": "header",
            "config": result.config.to_dict(),
            "layout": layout_to_dict(layout),
        }
        f.write(json.dumps(header) + "\n")
        for r in result.records:
            f.write(
                json.dumps(
                    {
                        "kind": "tick",
                        "t": r.tick,
                        "ego": _state_list(r.ego),
                        "opp": _state_list(r.opp),
                        "ego_action": r.ego_action,
                        "opp_action": r.opp_action,
                        "p2": r.p2,
                        "critical": r.critical,
                        "latency_us": r.latency_us,
                        "starved": r.starved,
                    }
                )
                + "\n"
            )
        f.write(json.dumps({"kind": "final", "outcome": result.outcome, "ticks": result.ticks}) + "\n")


def read_episode_log(path) -> tuple[dict, list[dict], dict]:
    """(header, tick records, final record) of a JSONL episode log."""
    header = None
    ticks = []
    final = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            kind = rec.get("kind")
            if kind == "header":
                header = rec
            elif kind == "tick":
                ticks.append(rec)
            elif kind == "final":
                final = rec
    if header is None or final is None:
        raise ValueError("episode log is missing its header or final record")
    return header, ticks, final


def replay_episode(path) -> bool:
    """Re-step a logged episode's actions and compare every state exactly.

    Raises AssertionError on the first divergence; returns True otherwise.
    Latency fields are measurements, not state, and are not compared.
    """
    header, ticks, _final = read_episode_log(path)
    cfg = EpisodeConfig.from_dict(header["config"])
    params = cfg.params
    ego = cfg.initial.ego
    opp = cfg.initial.opp
    for rec in ticks:
        ego = step(ego, ACTION_BY_ID[rec["ego_action"]], params.dt, params.v_max)
        opp = step(opp, ACTION_BY_ID[rec["opp_action"]], params.dt, params.v_max)
        logged_ego = tuple(rec["ego"])
        logged_opp = tuple(rec["opp"])
        if ego.as_tuple() != logged_ego:
            raise AssertionError(f"ego state diverged at tick {rec['t']}")
        if opp.as_tuple() != logged_opp:
            raise AssertionError(f"opp state diverged at tick {rec['t']}")
    return True


# ---------------------------------------------------------------------------
# Scenario sampling and batches
# ---------------------------------------------------------------------------


def sample_scenario(
    rng: np.random.Generator,
    layout: RoundaboutLayout,
    params: SimParams = SimParams(),
    opp_kinds: tuple[str, ...] = ("type1", "type2"),
    seed: int = 0,
    max_ticks: int = 120,
    estimator_mode: str = "exact",
    max_route_sweep: float | None = math.pi,
) -> EpisodeConfig:
    """Random entry scenario: distinct approaches, legal exits, seeded.

    Each vehicle spawns on its own uniformly chosen approach 15 to 40 m
    before the circle mouth at a speed in [2, 10] m/s, heading along the
    entry lane; exits are uniform over that entry's legal routes. The draw
    order is fixed, so one rng reproduces one scenario.

    Routes whose circulating arc exceeds max_route_sweep are left out of
    the pool. The default of pi keeps right turns and straight-throughs
    and drops far-side exits: the objective pull for those points across
    the island at entry, and the planner cannot thread them reliably.
    Pass None to sample every legal exit.
    """
    names = [ap.name for ap in layout.approaches]
    pick = rng.choice(len(names), size=2, replace=False)
    entry_e, entry_o = names[int(pick[0])], names[int(pick[1])]
    gap_e = float(rng.uniform(15.0, 40.0))
    v_e = float(rng.uniform(2.0, 10.0))
    gap_o = float(rng.uniform(15.0, 40.0))
    v_o = float(rng.uniform(2.0, 10.0))

    def pool(entry: str) -> list[str]:
        ids = sorted(r for r in layout.legal_route_ids() if r.startswith(entry + "-"))
        if max_route_sweep is not None:
            ids = [r for r in ids if layout.route(r).arc_sweep <= max_route_sweep]
        if not ids:
            raise ValueError(f"no legal route from {entry} within max_route_sweep")
        return ids

    routes_e = pool(entry_e)
    routes_o = pool(entry_o)
    route_e = routes_e[int(rng.integers(len(routes_e)))]
    route_o = routes_o[int(rng.integers(len(routes_o)))]
    kind = opp_kinds[int(rng.integers(len(opp_kinds)))]
    initial = TrafficState(
        layout.spawn_state(entry_e, gap_e, v_e),
        layout.spawn_state(entry_o, gap_o, v_o),
    )
    return EpisodeConfig(
        initial=initial,
        routes=RoutePair(route_e, route_o),
        opp_kind=kind,
        params=params,
        seed=seed,
        max_ticks=max_ticks,
        estimator_mode=estimator_mode,
    )


@dataclass
class BatchReport:
    """Aggregate of one seeded batch plus a per-episode outcome table."""

    n_episodes: int
    master_seed: int
    success_rate: float
    counts: dict[str, int]
    episodes: list[dict] = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "v": 1,
            "n_episodes": self.n_episodes,
            "master_seed": self.master_seed,
            "success_rate": self.success_rate,
            "counts": dict(self.counts),
            "episodes": self.episodes,
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    def summary(self) -> str:
        lines = [
            f"episodes: {self.n_episodes}",
            f"success rate: {self.success_rate:.3f}",
        ]
        for name in OUTCOMES:
            lines.append(f"  {name}: {self.counts.get(name, 0)}")
        return "\n".join(lines)


def _episode_index_config(
    i: int,
    master_seed: int,
    layout: RoundaboutLayout,
    params: SimParams,
    opp_kinds: tuple[str, ...],
    max_ticks: int,
    estimator_mode: str,
    max_route_sweep: float | None,
) -> EpisodeConfig:
    """Deterministic config for batch episode i, independent of the others."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(i,))
    rng = np.random.default_rng(ss)
    return sample_scenario(
        rng, layout, params, opp_kinds, i, max_ticks, estimator_mode, max_route_sweep
    )


def _run_batch_episode(args) -> dict:
    (i, master_seed, layout_data, params, opp_kinds, max_ticks, estimator_mode, w, sweep) = args
    layout = layout_from_dict(layout_data)
    cfg = _episode_index_config(
        i, master_seed, layout, params, opp_kinds, max_ticks, estimator_mode, sweep
    )
    result = run_episode(cfg, layout, w=w)
    return {
        "index": i,
        "opp_kind": cfg.opp_kind,
        "routes": {"ego": cfg.routes.ego, "opp": cfg.routes.opp},
        "outcome": result.outcome,
        "ticks": result.ticks,
    }


def run_batch(
    n_episodes: int,
    master_seed: int = 0,
    layout: RoundaboutLayout | None = None,
    params: SimParams = SimParams(),
    opp_kinds: tuple[str, ...] = ("type1", "type2"),
    max_ticks: int = 120,
    estimator_mode: str = "exact",
    nn=None,
    w: tuple[float, ...] = DEFAULT_WEIGHTS,
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
    max_route_sweep: float | None = math.pi,
) -> BatchReport:
    """Monte Carlo evaluation over seeded random scenarios.

    Episode i's scenario derives from SeedSequence(master_seed, spawn_key=(i,)),
    so reports are reproducible and episodes are independent of batch order
    and worker count.
    """
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be at least 1, got {n_episodes}")
    layout = layout if layout is not None else default_layout()

    rows: list[dict] = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        layout_data = layout_to_dict(layout)
        jobs = [
            (i, master_seed, layout_data, params, opp_kinds, max_ticks, estimator_mode, w, max_route_sweep)
            for i in range(n_episodes)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_run_batch_episode, jobs):
                rows.append(row)
                if progress is not None:
                    progress(len(rows), n_episodes)
    else:
        for i in range(n_episodes):
            cfg = _episode_index_config(
                i, master_seed, layout, params, opp_kinds, max_ticks, estimator_mode, max_route_sweep
            )
            result = run_episode(cfg, layout, w=w, nn=nn)
            rows.append(
                {
                    "index": i,
                    "opp_kind": cfg.opp_kind,
                    "routes": {"ego": cfg.routes.ego, "opp": cfg.routes.opp},
                    "outcome": result.outcome,
                    "ticks": result.ticks,
                }
            )
            if progress is not None:
                progress(i + 1, n_episodes)

    rows.sort(key=lambda r: r["index"])
    counts = {name: 0 for name in OUTCOMES}
    for row in rows:
        counts[row["outcome"]] += 1
    rate = counts["success"] / n_episodes
    return BatchReport(
        n_episodes=n_episodes,
        master_seed=master_seed,
        success_rate=rate,
        counts=counts,
        episodes=rows,
    )
