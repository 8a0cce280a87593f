"""Online estimation of the opponent's driver type from observed actions.

A state is *critical* when the two driver-type hypotheses disagree about the
opponent's next action; only then does the observed action carry information.
At critical states the executed action is matched against the hypothesised
first actions and the aggressiveness belief p2 = P(type 2) moves by an
exponential update. Between critical states the belief carries over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

from .geometry import DEFAULT_ZONES, RoundaboutLayout, RoutePair, ZoneSpec
from .kinematics import Action, SimParams, action_catalog
from .policy import PlanCache, PlanResult, type1_plan, type2_plan
from .reward import DEFAULT_WEIGHTS, TrafficState


class DriverType(IntEnum):
    TYPE1 = 1  # conservative
    TYPE2 = 2  # aggressive


@dataclass(frozen=True)
class Belief:
    """Probability that the opponent is the aggressive type."""

    p2: float

    def __post_init__(self):
        if not (0.0 <= self.p2 <= 1.0):
            raise ValueError(f"p2 must lie in [0, 1], got {self.p2}")


@dataclass(frozen=True)
class TypeObservation:
    """Outcome of matching one observed action against the type hypotheses.

    eta is None when the action matches neither hypothesis; such observations
    leave the belief untouched.
    """

    eta: DriverType | None

    @property
    def matched(self) -> bool:
        return self.eta is not None


def opponent_type_plans(
    X: TrafficState,
    routes: RoutePair,
    params: SimParams,
    layout: RoundaboutLayout,
    w: tuple[float, ...] = DEFAULT_WEIGHTS,
    zones: ZoneSpec = DEFAULT_ZONES,
    cache: PlanCache | None = None,
) -> tuple[PlanResult, PlanResult]:
    """The opponent's plan under each type hypothesis (type-1, type-2).

    X and routes are given from the ego's perspective; planning happens from
    the opponent's seat.
    """
    if cache is not None:
        return (cache.type1(X.swapped, routes.swapped), cache.type2(X.swapped, routes.swapped))
    t1 = type1_plan(X.swapped, routes.swapped, params, layout, w, zones)
    t2 = type2_plan(X.swapped, routes.swapped, params, layout, w, zones)
    return (t1, t2)


def is_critical(
    X: TrafficState,
    routes: RoutePair,
    params: SimParams,
    layout: RoundaboutLayout,
    w: tuple[float, ...] = DEFAULT_WEIGHTS,
    zones: ZoneSpec = DEFAULT_ZONES,
    cache: PlanCache | None = None,
) -> bool:
    """Whether the type hypotheses disagree on the opponent's next action."""
    t1, t2 = opponent_type_plans(X, routes, params, layout, w, zones, cache)
    return t1.first.id != t2.first.id


def classify_type(
    X: TrafficState,
    observed: Action,
    routes: RoutePair,
    params: SimParams,
    layout: RoundaboutLayout,
    w: tuple[float, ...] = DEFAULT_WEIGHTS,
    zones: ZoneSpec = DEFAULT_ZONES,
    cache: PlanCache | None = None,
) -> TypeObservation:
    """Match an observed opponent action against the type hypotheses.

    Must only be called at a critical state (the hypotheses must disagree);
    calling it elsewhere raises ValueError. Returns an unmatched observation
    when the action equals neither hypothesis' first action.
    """
    t1, t2 = opponent_type_plans(X, routes, params, layout, w, zones, cache)
    if t1.first.id == t2.first.id:
        raise ValueError("classify_type called at a non-critical state")
    if observed.id == t1.first.id:
        return TypeObservation(DriverType.TYPE1)
    if observed.id == t2.first.id:
        return TypeObservation(DriverType.TYPE2)
    return TypeObservation(None)


def update_belief(belief: Belief, eta: DriverType, beta: float) -> Belief:
    """Exponential belief update toward the observed type."""
    target = 1.0 if eta == DriverType.TYPE2 else 0.0
    return Belief((1.0 - beta) * belief.p2 + beta * target)


def select_model(belief: Belief) -> DriverType:
    """Type hypothesis used for planning; exactly 0.5 counts as aggressive."""
    return DriverType.TYPE1 if belief.p2 < 0.5 else DriverType.TYPE2


# scales for the action-distance metric: the catalog's own magnitudes
_A_SCALE = 2.5
_W_SCALE = math.pi / 4.0


def quantize_action(a: float, omega: float) -> Action:
    """Nearest catalog action to a continuous (acceleration, yaw rate) input.

    Distance is |da|/2.5 + |domega|/(pi/4); ties go to the smaller id.
    """
    best = None
    best_d = math.inf
    for act in action_catalog():
        d = abs(a - act.a) / _A_SCALE + abs(omega - act.omega) / _W_SCALE
        if d < best_d:
            best_d = d
            best = act
    return best
