"""Receding-horizon planners over the discrete action catalog.

All planners exhaustively score every action sequence of the horizon length
and keep the first action of the best sequence, with ties broken toward the
lexicographically smallest sequence (catalog order).

* level-0: treats the opponent as frozen at its current state.
* type-1 (conservative): best-responds to a level-0 model of the opponent.
* type-2 (aggressive): best-responds to a type-1 model of the opponent.
* best_response: best-responds to an explicit predicted opponent sequence.

The opponent prediction is computed once at the root and held open-loop for
the whole horizon.
"""

from __future__ import annotations

from dataclasses import dataclass

from .geometry import DEFAULT_ZONES, RoundaboutLayout, RoutePair, ZoneSpec
from .kinematics import Action, SimParams, VehicleState, action_catalog, rollout_states
from .reward import DEFAULT_WEIGHTS, TrafficState
from .rollouts import SearchContext, build_context, search_best

_CATALOG = tuple(action_catalog())


@dataclass(frozen=True)
class PlanResult:
    """Best sequence found by a planner and its discounted value."""

    actions: tuple[Action, ...]
    value: float

    @property
    def first(self) -> Action:
        return self.actions[0]

    def action_ids(self) -> tuple[int, ...]:
        return tuple(a.id for a in self.actions)


def _finish(digits: tuple[int, ...], value: float) -> PlanResult:
    return PlanResult(tuple(_CATALOG[d] for d in digits), value)


def level0_plan(
    X: TrafficState,
    route_id: str,
    params: SimParams,
    layout: RoundaboutLayout,
    w: tuple[float, ...] = DEFAULT_WEIGHTS,
    zones: ZoneSpec = DEFAULT_ZONES,
    ctx: SearchContext | None = None,
) -> PlanResult:
    """Plan for X.ego treating X.opp as a stationary obstacle."""
    if ctx is None:
        ctx = build_context(layout, zones, params, w)
    track = [X.opp] * (params.horizon_n + 1)
    digits, value = search_best(ctx, X.ego, track, route_id)
    return _finish(digits, value)


def best_response(
    X: TrafficState,
    route_id: str,
    params: SimParams,
    layout: RoundaboutLayout,
    w: tuple[float, ...],
    predicted_opp: tuple[Action, ...],
    zones: ZoneSpec = DEFAULT_ZONES,
    ctx: SearchContext | None = None,
) -> PlanResult:
    """Plan for X.ego against an explicit opponent action sequence.

    The predicted sequence must cover the whole horizon; anything else is a
    contract violation and raises ValueError.
    """
    if len(predicted_opp) != params.horizon_n:
        raise ValueError(
            f"predicted opponent sequence has length {len(predicted_opp)}, "
            f"horizon is {params.horizon_n}"
        )
    if ctx is None:
        ctx = build_context(layout, zones, params, w)
    track = rollout_states(X.opp, predicted_opp, params.dt, params.v_max)
    digits, value = search_best(ctx, X.ego, track, route_id)
    return _finish(digits, value)


def type1_plan(
    X: TrafficState,
    routes: RoutePair,
    params: SimParams,
    layout: RoundaboutLayout,
    w: tuple[float, ...] = DEFAULT_WEIGHTS,
    zones: ZoneSpec = DEFAULT_ZONES,
    ctx: SearchContext | None = None,
) -> PlanResult:
    """Conservative plan for X.ego: assumes the opponent plans at level 0."""
    if ctx is None:
        ctx = build_context(layout, zones, params, w)
    opp_l0 = level0_plan(X.swapped, routes.opp, params, layout, w, zones, ctx)
    return best_response(X, routes.ego, params, layout, w, opp_l0.actions, zones, ctx)


def type2_plan(
    X: TrafficState,
    routes: RoutePair,
    params: SimParams,
    layout: RoundaboutLayout,
    w: tuple[float, ...] = DEFAULT_WEIGHTS,
    zones: ZoneSpec = DEFAULT_ZONES,
    ctx: SearchContext | None = None,
) -> PlanResult:
    """Aggressive plan for X.ego: assumes the opponent plans like type 1."""
    if ctx is None:
        ctx = build_context(layout, zones, params, w)
    opp_t1 = type1_plan(X.swapped, routes.swapped, params, layout, w, zones, ctx)
    return best_response(X, routes.ego, params, layout, w, opp_t1.actions, zones, ctx)


class PlanCache:
    """Memoizing front end over the planners for one episode.

    Planner outputs are pure functions of (kind, traffic state, routes), so
    repeated queries, e.g. the estimator's opponent models and a scripted
    opponent's own plan in the same tick, or identical states while vehicles
    queue, are answered from the memo. The cache also owns the search context
    so layout preprocessing happens once.
    """

    def __init__(
        self,
        layout: RoundaboutLayout,
        params: SimParams,
        w: tuple[float, ...] = DEFAULT_WEIGHTS,
        zones: ZoneSpec = DEFAULT_ZONES,
    ):
        self.layout = layout
        self.params = params
        self.w = tuple(float(x) for x in w)
        self.zones = zones
        self.ctx = build_context(layout, zones, params, w)
        self._memo: dict = {}
        self.hits = 0
        self.misses = 0

    def _state_key(self, X: TrafficState):
        return (X.ego.as_tuple(), X.opp.as_tuple())

    def clear(self) -> None:
        """Drop memoized plans; the search context is kept.

        Callers that sweep many unrelated states (dataset labeling) clear
        between states so the memo only ever holds one state's plans.
        """
        self._memo.clear()

    def _get(self, key, compute):
        found = self._memo.get(key)
        if found is not None:
            self.hits += 1
            return found
        self.misses += 1
        result = compute()
        self._memo[key] = result
        return result

    def level0(self, X: TrafficState, route_id: str) -> PlanResult:
        key = ("l0", self._state_key(X), route_id)
        return self._get(
            key, lambda: level0_plan(X, route_id, self.params, self.layout, self.w, self.zones, self.ctx)
        )

    def type1(self, X: TrafficState, routes: RoutePair) -> PlanResult:
        key = ("t1", self._state_key(X), routes.ego, routes.opp)
        return self._get(key, lambda: self._type1(X, routes))

    def _type1(self, X: TrafficState, routes: RoutePair) -> PlanResult:
        opp_l0 = self.level0(X.swapped, routes.opp)
        return self.best_response(X, routes.ego, opp_l0.actions)

    def type2(self, X: TrafficState, routes: RoutePair) -> PlanResult:
        key = ("t2", self._state_key(X), routes.ego, routes.opp)
        return self._get(key, lambda: self._type2(X, routes))

    def _type2(self, X: TrafficState, routes: RoutePair) -> PlanResult:
        opp_t1 = self.type1(X.swapped, routes.swapped)
        return self.best_response(X, routes.ego, opp_t1.actions)

    def best_response(self, X: TrafficState, route_id: str, predicted_opp: tuple[Action, ...]) -> PlanResult:
        key = ("br", self._state_key(X), route_id, tuple(a.id for a in predicted_opp))
        return self._get(
            key,
            lambda: best_response(
                X, route_id, self.params, self.layout, self.w, predicted_opp, self.zones, self.ctx
            ),
        )
