import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nashvalue.game import (
    A,
    ALL_CONFIGS,
    NA,
    GameGeometry,
    JointState,
    PlayerType,
    TypeConfig,
    collision_indicator,
    dynamics,
    hamiltonian,
    load_config,
    optimal_control,
    penalty_product,
    running_reward,
    soft_collision_indicator,
    terminal_costate,
    terminal_reward,
)

GEOM = GameGeometry()
finite = st.floats(-200, 200, allow_nan=False)


def test_dynamics_examples():
    s = [20, 18, 20, 20]
    assert dynamics(s, 2, -1).tolist() == [18, 2, 20, -1]
    assert dynamics([1, 7, 2, 9], 0, 0).tolist() == [7, 0, 9, 0]
    assert dynamics([15, 25, 15, 25], 10, -5).tolist() == [25, 10, 25, -5]


def test_player_types():
    assert PlayerType.AGGRESSIVE.theta == 1 and NA.theta == 5
    assert PlayerType.from_tag("na") is NA
    assert [c.tag for c in ALL_CONFIGS] == ["a,a", "a,na", "na,a", "na,na"]
    assert TypeConfig.parse("a,na") == TypeConfig(A, NA)
    assert TypeConfig(A, NA).swapped() == TypeConfig(NA, A)
    with pytest.raises(ValueError):
        TypeConfig.parse("a,b")


def test_joint_state_layout():
    assert JointState(20, 18, 21, 19, 0.5).as_array().tolist() == [20, 18, 21, 19, 0.5]


def test_collision_intervals():
    assert GEOM.collision_interval(1) == pytest.approx((34.25, 38.75))
    assert GEOM.collision_interval(5) == pytest.approx((31.25, 38.75))


@pytest.mark.parametrize(
    "d,theta,expected",
    [(36, 1, 1), (33, 1, 0), (33, 5, 1), (34.25, 1, 1), (38.75, 5, 1), (38.76, 1, 0), (0, 5, 0)],
)
def test_collision_indicator(d, theta, expected):
    assert collision_indicator(d, theta, GEOM) == expected


def test_soft_indicator_limits():
    lo, hi = GEOM.collision_interval(1)
    mid = 0.5 * (lo + hi)
    assert soft_collision_indicator(mid, 1, GEOM, gamma=200) == pytest.approx(1.0)
    assert soft_collision_indicator(lo, 1, GEOM, gamma=200) == pytest.approx(0.5, abs=1e-6)
    assert soft_collision_indicator(0.0, 1, GEOM, gamma=5) < 1e-50


@given(st.floats(0, 80), st.sampled_from([1.0, 5.0]))
@settings(max_examples=200, deadline=None)
def test_soft_indicator_converges_to_hard(d, theta):
    lo, hi = GEOM.collision_interval(theta)
    if min(abs(d - lo), abs(d - hi)) < 0.05:
        return
    assert abs(soft_collision_indicator(d, theta, GEOM, gamma=500) - collision_indicator(d, theta, GEOM)) < 1e-9


def test_aggressive_region_nested_in_non_aggressive():
    d = np.linspace(0, 80, 4001)
    assert np.all(collision_indicator(d, 1, GEOM) <= collision_indicator(d, 5, GEOM))


def test_running_reward():
    assert running_reward([0, 18, 0, 18], 2.0, 0, 1, GEOM) == -4.0
    inside = [36, 18, 36, 18]
    assert running_reward(inside, 0.0, 0, 1, GEOM) == -1e4
    assert running_reward(inside, 1.0, 1, 5, GEOM) == -1e4 - 1
    # player 2's own region uses its theta; the other player's uses the aggressive box
    s = [33, 18, 36, 18]
    assert penalty_product(s, 0, 5, GEOM) == 1
    assert penalty_product(s, 1, 5, GEOM) == 0


def test_terminal_reward_and_costate():
    s = np.array([50.0, 20.0, 40.0, 18.0])
    assert terminal_reward(s, 0, GEOM) == pytest.approx(1e-6 * 50 - 4)
    assert terminal_reward(s, 1, GEOM) == pytest.approx(1e-6 * 40)
    lam = terminal_costate(s, 0, GEOM)
    eps = 1e-6
    fd = [(terminal_reward(s + eps * e, 0, GEOM) - terminal_reward(s - eps * e, 0, GEOM)) / (2 * eps)
          for e in np.eye(4)]
    assert np.allclose(lam, fd, atol=1e-7)


@given(finite)
@settings(max_examples=200)
def test_optimal_control_clamps_and_maximizes(lam_v):
    u = optimal_control(lam_v, GEOM)
    assert GEOM.u_min <= u <= GEOM.u_max
    s = [10, 18, 10, 18]
    lam = [0, lam_v, 0, 0]
    h_star = hamiltonian(s, lam, u, 0.0, 0, 1, GEOM)
    for w in np.linspace(GEOM.u_min, GEOM.u_max, 31):
        assert hamiltonian(s, lam, w, 0.0, 0, 1, GEOM) <= h_star + 1e-9


def test_optimal_control_examples():
    assert optimal_control(4.0, GEOM) == 2.0
    assert optimal_control(100.0, GEOM) == 10.0
    assert optimal_control(-100.0, GEOM) == -5.0


def test_geometry_validation_and_roundtrip(tmp_path):
    with pytest.raises(ValueError):
        GameGeometry(u_min=1, u_max=0)
    with pytest.raises(ValueError):
        GameGeometry(horizon=0)
    with pytest.raises(ValueError):
        GameGeometry.from_dict({"road_lenght": 70})
    g = GameGeometry(car_width=2.0)
    assert GameGeometry.from_dict(g.to_dict()) == g
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"game": g.to_dict()}))
    assert GameGeometry.from_file(path) == g
    yml = tmp_path / "cfg.yaml"
    yml.write_text("game:\n  horizon: 2.0\n")
    assert load_config(yml) == {"game": {"horizon": 2.0}}
    assert GameGeometry.from_file(yml).horizon == 2.0
