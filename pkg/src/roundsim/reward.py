"""Stage reward for one vehicle in a two-vehicle traffic state.

The reward is a weighted sum of six features, evaluated on the state reached
after each planning step: collision-zone overlap, off-road violation, progress
toward the route objective (negative Manhattan distance), safety-zone overlap,
road-marking violation on the step just taken, and speed.
"""

from __future__ import annotations

from dataclasses import dataclass

from .geometry import (
    DEFAULT_ZONES,
    RoundaboutLayout,
    ZoneSpec,
    c_zone,
    rects_overlap,
    s_zone,
)
from .kinematics import VehicleState


@dataclass(frozen=True)
class TrafficState:
    """Joint state of the ego vehicle and the one opponent."""

    ego: VehicleState
    opp: VehicleState

    @property
    def swapped(self) -> "TrafficState":
        """The same physical situation from the opponent's seat."""
        return TrafficState(ego=self.opp, opp=self.ego)

    def as_vector(self) -> tuple[float, ...]:
        return self.ego.as_tuple() + self.opp.as_tuple()


@dataclass(frozen=True)
class FeatureVector:
    """phi1..phi6 for one vehicle; see features() for definitions."""

    phi1: float
    phi2: float
    phi3: float
    phi4: float
    phi5: float
    phi6: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.phi1, self.phi2, self.phi3, self.phi4, self.phi5, self.phi6)


# w1..w6; collision dominates everything, then staying on the road, then
# spacing, markings, progress, speed.
DEFAULT_WEIGHTS = (1000.0, 500.0, 5.0, 100.0, 50.0, 1.0)


def features(
    X: TrafficState,
    route_id: str,
    prev: VehicleState | None,
    layout: RoundaboutLayout,
    zones: ZoneSpec = DEFAULT_ZONES,
) -> FeatureVector:
    """Feature vector for the ego vehicle of X.

    phi1: -1 if the two collision zones overlap, else 0.
    phi2: -1 if the ego collision zone leaves the drivable region, else 0.
    phi3: negative Manhattan distance from the ego to its route objective.
    phi4: -1 if the two safety zones overlap, else 0.
    phi5: -1 if the move prev -> ego violates road markings, else 0 (0 when
          prev is None, i.e. no move has been made).
    phi6: ego speed.
    """
    ego = X.ego
    ego_c = c_zone(ego, zones)
    opp_c = c_zone(X.opp, zones)
    phi1 = -1.0 if rects_overlap(ego_c, opp_c) else 0.0
    phi2 = -1.0 if layout.off_road(ego_c) else 0.0
    route = layout.route(route_id)
    phi3 = -abs(route.ref_x - ego.x) - abs(route.ref_y - ego.y)
    phi4 = -1.0 if rects_overlap(s_zone(ego, zones), s_zone(X.opp, zones)) else 0.0
    if prev is not None and layout.marking_violation(prev, ego, route_id, zones):
        phi5 = -1.0
    else:
        phi5 = 0.0
    phi6 = ego.v
    return FeatureVector(phi1, phi2, phi3, phi4, phi5, phi6)


def stage_reward(phi: FeatureVector, w: tuple[float, ...] = DEFAULT_WEIGHTS) -> float:
    """Weighted sum w . phi, accumulated left to right."""
    return (
        w[0] * phi.phi1
        + w[1] * phi.phi2
        + w[2] * phi.phi3
        + w[3] * phi.phi4
        + w[4] * phi.phi5
        + w[5] * phi.phi6
    )


def cumulative_reward(rewards, lam: float) -> float:
    """Discounted sum of per-step rewards: sum_j lam^j * r_j.

    Powers of lam are built by iterated multiplication; the vectorized
    planner accumulates its totals with the identical recurrence, which keeps
    the two paths bit-identical.
    """
    total = 0.0
    lam_pow = 1.0
    for r in rewards:
        total = total + lam_pow * r
        lam_pow = lam_pow * lam
    return total
