"""Discrete-time vehicle motion model and the fixed action catalog.

Every module that advances a vehicle state, whether one state at a time or a
whole array of rollout candidates, funnels through the formulas in this file so
that logged trajectories replay exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Normalize an angle (or numpy array of angles) to the interval (-pi, pi].

    One shared formula, branch-free in the value domain: the scalar step
    function and the vectorized planner produce bit-identical headings.
    ceil is exact, so the math/np variants agree.
    """
    if isinstance(theta, float):
        return theta - TWO_PI * math.ceil((theta - math.pi) / TWO_PI)
    return theta - TWO_PI * np.ceil((theta - math.pi) / TWO_PI)


@dataclass(frozen=True)
class VehicleState:
    """Planar vehicle state: rear-axle position, speed and heading.

    theta is kept in (-pi, pi] by step(); v never goes negative.
    """

    x: float
    y: float
    v: float
    theta: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.v, self.theta)


@dataclass(frozen=True)
class Action:
    """One catalog entry: constant acceleration and yaw rate held for one dt."""

    id: int
    name: str
    a: float
    omega: float


_ACTIONS = (
    Action(1, "maintain", 0.0, 0.0),
    Action(2, "accelerate", 2.5, 0.0),
    Action(3, "decelerate", -2.5, 0.0),
    Action(4, "hard_brake", -5.0, 0.0),
    Action(5, "turn_left", 0.0, math.pi / 4.0),
    Action(6, "turn_right", 0.0, -math.pi / 4.0),
)

ACTION_BY_ID = {act.id: act for act in _ACTIONS}


def action_catalog() -> list[Action]:
    """The six discrete actions, in id order. Pure constant."""
    return list(_ACTIONS)


@dataclass(frozen=True)
class SimParams:
    """Simulation and planning constants shared by planner and simulator."""

    dt: float = 0.25
    horizon_n: int = 4
    lam: float = 0.8
    beta: float = 0.6
    v_max: float = 7.0

    def __post_init__(self):
        if not (self.dt > 0.0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (isinstance(self.horizon_n, int) and self.horizon_n >= 1):
            raise ValueError(f"horizon_n must be a positive int, got {self.horizon_n}")
        if not (0.0 < self.lam <= 1.0):
            raise ValueError(f"lam must be in (0, 1], got {self.lam}")
        if not (0.0 < self.beta <= 1.0):
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if not (self.v_max > 0.0):
            raise ValueError(f"v_max must be positive, got {self.v_max}")


def step(state: VehicleState, action: Action, dt: float, v_max: float | None = None) -> VehicleState:
    """Advance one vehicle by one action held for dt seconds.

    Position integrates at the pre-step speed and heading, then speed and
    heading update; speed clamps at zero (no reversing) and optionally caps
    at v_max. Heading is renormalized every step.
    """
    c = math.cos(state.theta)
    s = math.sin(state.theta)
    x = state.x + state.v * c * dt
    y = state.y + state.v * s * dt
    v = state.v + action.a * dt
    if v < 0.0:
        v = 0.0
    if v_max is not None and v > v_max:
        v = v_max
    theta = float(wrap_angle(state.theta + action.omega * dt))
    return VehicleState(x, y, v, theta)


def rollout_states(state: VehicleState, actions, dt: float, v_max: float | None = None) -> list[VehicleState]:
    """States visited applying a sequence of actions; index 0 is the input state."""
    out = [state]
    cur = state
    for act in actions:
        cur = step(cur, act, dt, v_max)
        out.append(cur)
    return out
