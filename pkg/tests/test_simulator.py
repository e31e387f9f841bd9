import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nashvalue.game import A, ALL_CONFIGS, NA, GameGeometry, TypeConfig
from nashvalue.pmp import DOMAINS, generate_trajectories, solve_bvp
from nashvalue.simulator import (
    BELIEF_CLAMP,
    BeliefState,
    PolicyBank,
    TrajectoryPolicy,
    advance,
    bayes_update,
    belief_update,
    checkpoint_name,
    closed_loop_step,
    hypothesis_controls,
    detect_collision,
    posterior,
    rollout,
    run_complete_info_suite,
    run_incomplete_info_episode,
)

GEOM = GameGeometry()
FREE = GameGeometry(collision_penalty=0.0)
X0 = np.array([15.0, 18.0, 20.0, 25.0])


class LinearValue:
    """Value with a constant input gradient."""

    def __init__(self, grad):
        self.grad = np.asarray(grad, dtype=float)

    def forward(self, x, with_grad=True):
        x = np.atleast_2d(x)
        v = x @ self.grad
        return v, (np.tile(self.grad, (len(x), 1)) if with_grad else None)


class DecoupledValue:
    """Exact value gradient of one player's penalty-free problem from any ``(x, t)``."""

    def __init__(self, player, geom):
        self.player, self.geom = player, geom

    def forward(self, x, with_grad=True):
        x = np.atleast_2d(x)
        a, vbar = self.geom.terminal_position_weight, self.geom.nominal_speed
        tau = self.geom.horizon - x[:, 4]
        v = x[:, 2 * self.player + 1]
        v_end = (v + vbar * tau + a * tau**2 / 4) / (1 + tau)
        grad = np.zeros((len(x), 5))
        grad[:, 2 * self.player] = a
        grad[:, 2 * self.player + 1] = -2 * (v_end - vbar) + a * tau
        return np.zeros(len(x)), grad


def test_control_from_value_gradient():
    pol = LinearValue([0.0, 4.0, 0.0, -30.0, 0.0])
    nxt, u = closed_loop_step(X0, 0.0, (pol, pol), GEOM, dt=0.1)
    assert u[0] == 2.0
    assert u[1] == GEOM.u_min
    assert np.allclose(nxt, advance(X0, u, 0.1))


def test_exact_step_and_horizon_guard():
    s = advance([1.0, 2.0, 3.0, 4.0], [1.0, -2.0], 0.5)
    assert np.allclose(s, [1 + 1 + 0.125, 2.5, 3 + 2 - 0.25, 3.0])
    pol = LinearValue(np.zeros(5))
    with pytest.raises(ValueError, match="horizon"):
        closed_loop_step(X0, GEOM.horizon - 0.05, (pol, pol), GEOM, dt=0.1)
    with pytest.raises(ValueError, match="divide"):
        rollout(X0, (pol, pol), GEOM, dt=0.07)


def test_detect_collision_cases():
    lo, hi = GEOM.collision_interval(1.0)
    mid = 0.5 * (lo + hi)
    assert not detect_collision([[0.0, 20, 0.0, 20], [10.0, 20, 10.0, 20]], GEOM)
    assert detect_collision([[0.0, 20, 0.0, 20], [mid, 20, mid, 20]], GEOM)
    # each is inside the box at a different sample only
    assert not detect_collision([[mid, 20, 0.0, 20], [60.0, 20, mid, 20]], GEOM)
    # the non-aggressive box is wider, but metrics use the aggressive one
    lo_na = GEOM.collision_interval(5.0)[0]
    assert not detect_collision([[0.5 * (lo_na + lo), 20, mid, 20]], GEOM)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 10), st.floats(-5, 10)), min_size=30, max_size=30),
       st.floats(15, 30), st.floats(15, 30), st.floats(15, 30), st.floats(15, 30))
def test_collision_detection_refines_monotonically(controls, d1, v1, d2, v2):
    coarse = [np.array([d1, v1, d2, v2])]
    fine = [coarse[0]]
    for u in controls:
        coarse.append(advance(coarse[-1], u, 0.1))
        for _ in range(2):
            fine.append(advance(fine[-1], u, 0.05))
    assert np.allclose(np.array(fine)[::2], coarse, atol=1e-9)
    if detect_collision(coarse, GEOM):
        assert detect_collision(fine, GEOM)


def test_exact_values_reproduce_bvp_controls():
    traj = solve_bvp(X0, TypeConfig(A, A), FREE)
    ep = rollout(X0, (DecoupledValue(0, FREE), DecoupledValue(1, FREE)), FREE)
    for i in range(2):
        ref = np.interp(ep.times, traj.times, traj.controls[:, i])
        assert np.max(np.abs(ep.controls[:, i] - ref)) < 0.1


@pytest.fixture(scope="module")
def ground_truth():
    trajs, _ = generate_trajectories(DOMAINS["GT"], 4, TypeConfig(A, A), seed=11, geom=GEOM)
    return trajs


def test_oracle_suite_has_no_error(ground_truth):
    metrics, episodes = run_complete_info_suite(
        lambda traj: (TrajectoryPolicy(traj, 0), TrajectoryPolicy(traj, 1)), ground_truth, GEOM)
    assert metrics.n_episodes + metrics.n_excluded == len(ground_truth)
    assert metrics.value_mae < 1e-9 and metrics.control_mae_mean < 1e-9
    assert metrics.collision_pct == 0.0
    assert all(not ep.collision for ep in episodes)


def test_colliding_ground_truth_is_excluded(ground_truth):
    traj = ground_truth[0]
    lo, hi = GEOM.collision_interval(1.0)
    mid = 0.5 * (lo + hi)
    hit = type(traj)(**{**traj.__dict__})
    hit.states = traj.states.copy()
    hit.states[5, [0, 2]] = mid
    metrics, _ = run_complete_info_suite(
        lambda t: (TrajectoryPolicy(t, 0), TrajectoryPolicy(t, 1)), [hit, traj], GEOM)
    assert metrics.n_excluded == 1 and metrics.n_episodes == 1


# --- beliefs ------------------------------------------------------------------


def test_posterior_examples():
    assert posterior(0.3, 1.0, 0.0, 2.0, 1.0) == pytest.approx(0.3)
    assert posterior(0.3, 2.0, 2.0, 0.0, 1.0) > 0.3
    assert posterior(0.3, 0.0, 2.0, 0.0, 1.0) < 0.3
    # the odds grow by exp(((u - u_na)^2 - (u - u_a)^2) / (2 sigma^2))
    p = posterior(0.2, 2.0, 2.0, 0.0, 1.0)
    assert p / (1 - p) == pytest.approx(0.25 * np.exp(2.0))
    with pytest.raises(ValueError):
        posterior(0.5, 0.0, 0.0, 1.0, 0.0)


def test_repeated_evidence_crosses_half():
    p, steps = 0.2, 0
    while p <= 0.5:
        p = posterior(p, 3.0, 3.0, 1.0, 1.0)
        steps += 1
    assert steps < 5


def test_posterior_is_clamped():
    p = 0.5
    for _ in range(50):
        p = posterior(p, 10.0, 10.0, -5.0, 1.0)
    assert p == 1.0 - BELIEF_CLAMP
    assert posterior(0.0, 0.0, 0.0, 0.0, 1.0) == BELIEF_CLAMP


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(-50, 50), st.floats(-50, 50), st.floats(-100, 100))
def test_bayes_update_invariant_to_common_likelihood_scale(prior, la, lna, shift):
    p = bayes_update(prior, la, lna)
    assert BELIEF_CLAMP <= p <= 1 - BELIEF_CLAMP
    assert bayes_update(prior, la + shift, lna + shift) == pytest.approx(p, rel=1e-9, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(-5, 10), st.floats(-5, 10), st.floats(-5, 10), st.floats(0.1, 5))
def test_posterior_stays_valid(prior, u, ua, una, sigma):
    p = posterior(prior, u, ua, una, sigma)
    assert np.isfinite(p) and BELIEF_CLAMP <= p <= 1 - BELIEF_CLAMP


def test_belief_state_validation_and_ties():
    with pytest.raises(ValueError):
        BeliefState(1.2, 0.5)
    with pytest.raises(ValueError):
        BeliefState(float("nan"), 0.5)
    bel = BeliefState(0.5, 0.51)
    assert bel.most_likely(0) is NA and bel.most_likely(1) is A
    assert bel.most_likely_config() == TypeConfig(NA, A)


@pytest.fixture(scope="module")
def oracle_bank():
    return PolicyBank.from_trajectories({c: solve_bvp(X0, c, GEOM) for c in ALL_CONFIGS})


def test_bank_completeness():
    bank = PolicyBank()
    bank[0, TypeConfig(A, A)] = LinearValue(np.zeros(5))
    assert TypeConfig(A, A) in bank.missing()
    with pytest.raises(ValueError, match="missing configs"):
        bank.require_complete()
    with pytest.raises(KeyError, match="player 2"):
        bank[1, TypeConfig(A, A)]
    assert checkpoint_name("hybrid", TypeConfig(A, NA), 1) == "hybrid_a-na_p2.npz"


def test_matched_beliefs_reproduce_complete_rollout(oracle_bank):
    truth = TypeConfig(A, A)
    ep = run_incomplete_info_episode(oracle_bank, BeliefState(0.9, 0.9), truth, X0, GEOM)
    ref = rollout(X0, oracle_bank.pair(truth), GEOM)
    assert np.array_equal(ep.states, ref.states)
    assert np.array_equal(ep.controls, ref.controls)
    assert np.all(ep.beliefs >= 0.9 - 1e-12)
    assert all(a == ("a", "a") for a in ep.acting)


def test_observing_aggressive_control_never_lowers_belief(oracle_bank):
    bel = BeliefState(0.2, 0.2)
    for t in (0.0, 0.5, 1.5):
        hyp = [hypothesis_controls(oracle_bank, bel, X0, t, j, GEOM) for j in range(2)]
        new = belief_update(bel, X0, t, [h[0] for h in hyp], oracle_bank, GEOM)
        for j in range(2):
            assert new[j] >= bel[j]
            if abs(hyp[j][0] - hyp[j][1]) > 0.1:
                assert new[j] > bel[j]
