import math
import random

import pytest

from roundsim.kinematics import (
    ACTION_BY_ID,
    Action,
    SimParams,
    VehicleState,
    action_catalog,
    rollout_states,
    step,
    wrap_angle,
)


def test_action_catalog_order_and_values():
    acts = action_catalog()
    assert [a.id for a in acts] == [1, 2, 3, 4, 5, 6]
    assert [(a.a, a.omega) for a in acts] == [
        (0.0, 0.0),
        (2.5, 0.0),
        (-2.5, 0.0),
        (-5.0, 0.0),
        (0.0, math.pi / 4),
        (0.0, -math.pi / 4),
    ]
    assert [a.name for a in acts] == [
        "maintain",
        "accelerate",
        "decelerate",
        "hard_brake",
        "turn_left",
        "turn_right",
    ]
    # pure constant: a second call gives an equal catalog
    assert action_catalog() == acts


def test_step_accelerate_east():
    s = VehicleState(0.0, 0.0, 10.0, 0.0)
    out = step(s, ACTION_BY_ID[2], 0.25)
    assert out == VehicleState(2.5, 0.0, 10.625, 0.0)


def test_step_maintain_north():
    s = VehicleState(1.0, 1.0, 4.0, math.pi / 2)
    out = step(s, ACTION_BY_ID[1], 0.25)
    assert out == VehicleState(1.0, 2.0, 4.0, math.pi / 2)


def test_speed_clamps_at_zero():
    s = VehicleState(0.0, 0.0, 1.0, 0.0)
    out = step(s, ACTION_BY_ID[4], 0.25)  # hard brake: 1 - 1.25
    assert out.v == 0.0
    # and stays there
    out2 = step(out, ACTION_BY_ID[4], 0.25)
    assert out2.v == 0.0
    assert out2.x == out.x and out2.y == out.y


def test_speed_caps_at_v_max():
    s = VehicleState(0.0, 0.0, 19.9, 0.0)
    out = step(s, ACTION_BY_ID[2], 0.25, v_max=20.0)
    assert out.v == 20.0
    # without a cap it would exceed
    assert step(s, ACTION_BY_ID[2], 0.25).v == pytest.approx(20.525)


def test_turn_updates_heading_only_by_omega_dt():
    s = VehicleState(0.0, 0.0, 8.0, 0.0)
    out = step(s, ACTION_BY_ID[5], 0.25)
    assert out.theta == math.pi / 16
    out = step(s, ACTION_BY_ID[6], 0.25)
    assert out.theta == -math.pi / 16


def test_wrap_angle_interval():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(math.pi + 0.1) == pytest.approx(-math.pi + 0.1)
    rng = random.Random(7)
    for _ in range(2000):
        th = rng.uniform(-50.0, 50.0)
        w = wrap_angle(th)
        assert -math.pi < w <= math.pi
        # same angle modulo 2*pi
        assert math.isclose(math.sin(w), math.sin(th), abs_tol=1e-9)
        assert math.isclose(math.cos(w), math.cos(th), abs_tol=1e-9)


def test_heading_fixed_when_omega_zero():
    rng = random.Random(3)
    for _ in range(500):
        s = VehicleState(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(0, 20), rng.uniform(-math.pi, math.pi))
        for aid in (1, 2, 3, 4):
            assert step(s, ACTION_BY_ID[aid], 0.25).theta == s.theta


def test_step_deterministic():
    s = VehicleState(3.1, -2.2, 7.7, 1.9)
    a = ACTION_BY_ID[5]
    assert step(s, a, 0.25) == step(s, a, 0.25)


def test_rollout_states_length_and_chain():
    s = VehicleState(0.0, 0.0, 5.0, 0.0)
    seq = [ACTION_BY_ID[2], ACTION_BY_ID[5], ACTION_BY_ID[4]]
    states = rollout_states(s, seq, 0.25, 20.0)
    assert len(states) == 4
    assert states[0] == s
    cur = s
    for act, nxt in zip(seq, states[1:]):
        cur = step(cur, act, 0.25, 20.0)
        assert cur == nxt


def test_sim_params_validation():
    with pytest.raises(ValueError):
        SimParams(dt=0.0)
    with pytest.raises(ValueError):
        SimParams(horizon_n=0)
    with pytest.raises(ValueError):
        SimParams(lam=0.0)
    with pytest.raises(ValueError):
        SimParams(lam=1.5)
    with pytest.raises(ValueError):
        SimParams(beta=0.0)
    with pytest.raises(ValueError):
        SimParams(v_max=-1.0)
    # defaults are valid
    p = SimParams()
    assert (p.dt, p.horizon_n, p.lam, p.beta, p.v_max) == (0.25, 4, 0.8, 0.6, 7.0)
