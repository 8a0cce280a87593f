"""Shared state samplers for tests: mixtures that cover lanes, the circle,
mouth transitions and open ground."""

from __future__ import annotations

import math
import random

from roundsim.geometry import RoutePair
from roundsim.kinematics import VehicleState
from roundsim.reward import TrafficState


def sample_route_pair(rng: random.Random, layout) -> RoutePair:
    ids = layout.legal_route_ids()
    ego = rng.choice(ids)
    opp = rng.choice(ids)
    return RoutePair(ego, opp)


def sample_vehicle(rng: random.Random, layout, route_id: str | None = None) -> VehicleState:
    """One vehicle state: on-route with jitter, or uniform in a central box."""
    if route_id is not None and rng.random() < 0.7:
        route = layout.route(route_id)
        d = rng.uniform(0.0, route.length)
        x, y, th = layout.route_point(route_id, d)
        lat = rng.uniform(-1.2, 1.2)
        x += -math.sin(th) * lat
        y += math.cos(th) * lat
        th = th + rng.uniform(-0.4, 0.4)
        return VehicleState(x, y, rng.uniform(0.0, 14.0), wrap(th))
    r = 30.0
    return VehicleState(
        rng.uniform(-r, r),
        rng.uniform(-r, r),
        rng.uniform(0.0, 16.0),
        rng.uniform(-math.pi, math.pi),
    )


def wrap(theta: float) -> float:
    return theta - 2.0 * math.pi * math.ceil((theta - math.pi) / (2.0 * math.pi))


def sample_traffic(rng: random.Random, layout) -> tuple[TrafficState, RoutePair]:
    routes = sample_route_pair(rng, layout)
    ego = sample_vehicle(rng, layout, routes.ego)
    opp = sample_vehicle(rng, layout, routes.opp)
    return TrafficState(ego, opp), routes
