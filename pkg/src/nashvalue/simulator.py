"""Closed-loop rollouts, collision metrics and common-belief type inference."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .game import A, ALL_CONFIGS, NA, GameGeometry, PlayerType, TypeConfig, collision_indicator, optimal_control
from .net import ValueNet
from .pmp import EquilibriumTrajectory

BELIEF_CLAMP = 1e-6
EPISODE_COLUMNS = ("t", "d1", "v1", "d2", "v2", "u1", "u2", "p1", "p2", "config1", "config2")


class TrajectoryPolicy:
    """Open-loop oracle reading one player's value and costate off a BVP solution.

    Queries are answered by linear interpolation in time; the state part of
    the query is ignored. The time component of the gradient is reported as 0.
    """

    def __init__(self, traj: EquilibriumTrajectory, player: int):
        self.traj = traj
        self.player = player

    def forward(self, x, with_grad: bool = True):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.clip(x[:, 4], self.traj.times[0], self.traj.times[-1])
        value = np.interp(t, self.traj.times, self.traj.values[:, self.player])
        if not with_grad:
            return value, None
        grad = np.zeros((len(x), 5))
        for k in range(4):
            grad[:, k] = np.interp(t, self.traj.times, self.traj.costates[:, self.player, k])
        return value, grad


class PolicyBank:
    """Value functions keyed by ``(player index, TypeConfig)``."""

    def __init__(self, entries: dict | None = None):
        self.entries = dict(entries or {})

    def __setitem__(self, key, policy):
        player, config = key
        self.entries[(int(player), config)] = policy

    def __getitem__(self, key):
        player, config = key
        try:
            return self.entries[(int(player), config)]
        except KeyError:
            raise KeyError(f"no value function for player {player + 1} in config {config.tag}") from None

    def pair(self, config: TypeConfig):
        return self[0, config], self[1, config]

    def missing(self) -> list[TypeConfig]:
        return [c for c in ALL_CONFIGS if any((i, c) not in self.entries for i in range(2))]

    def require_complete(self) -> None:
        missing = self.missing()
        if missing:
            raise ValueError("incomplete policy bank; missing configs: " + ", ".join(c.tag for c in missing))

    @classmethod
    def from_trajectories(cls, trajs: dict) -> "PolicyBank":
        """Oracle bank from one BVP solution per config."""
        bank = cls()
        for config, traj in trajs.items():
            for i in range(2):
                bank[i, config] = TrajectoryPolicy(traj, i)
        return bank

    @classmethod
    def from_dir(cls, directory, prefix: str, configs=ALL_CONFIGS) -> "PolicyBank":
        """Load ``{prefix}_{config}_p{1,2}.npz`` checkpoints; absent files are skipped."""
        bank = cls()
        for config in configs:
            for i in range(2):
                path = Path(directory) / checkpoint_name(prefix, config, i)
                if path.exists():
                    bank[i, config] = ValueNet.load(path)
        return bank


def checkpoint_name(prefix: str, config: TypeConfig, player: int) -> str:
    return f"{prefix}_{config.tag.replace(',', '-')}_p{player + 1}.npz"


def _gradient(policy, state4, t):
    x = np.append(np.asarray(state4, dtype=float), t)[None, :]
    return policy.forward(x)[1][0]


def policy_control(policy, state4, t, player: int, geom: GameGeometry) -> float:
    """Argmax-Hamiltonian control from a value function's speed derivative."""
    return optimal_control(_gradient(policy, state4, t)[2 * player + 1], geom)


def advance(state4, u, dt: float) -> np.ndarray:
    """Exact double-integrator step under constant controls."""
    s = np.asarray(state4, dtype=float)
    u = np.asarray(u, dtype=float)
    out = s.copy()
    out[0] = s[0] + s[1] * dt + 0.5 * u[0] * dt * dt
    out[1] = s[1] + u[0] * dt
    out[2] = s[2] + s[3] * dt + 0.5 * u[1] * dt * dt
    out[3] = s[3] + u[1] * dt
    return out


def closed_loop_step(state4, t: float, policies, geom: GameGeometry, dt: float = 0.1):
    """Both players apply their argmax controls for one step; returns ``(next_state, controls)``."""
    if t + dt > geom.horizon + 1e-9:
        raise ValueError("step would pass the horizon")
    u = np.array([policy_control(policies[i], state4, t, i, geom) for i in range(2)])
    return advance(state4, u, dt), u


def detect_collision(states, geom: GameGeometry) -> bool:
    """Simultaneous occupancy of the aggressive-type box at any sample."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    both = collision_indicator(states[:, 0], 1.0, geom) * collision_indicator(states[:, 2], 1.0, geom)
    return bool(np.any(both > 0))


@dataclass
class EpisodeResult:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    values: np.ndarray
    collision: bool
    unnecessary_collision: bool = False
    beliefs: np.ndarray | None = None
    acting: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def rows(self):
        out = []
        for k, t in enumerate(self.times):
            p = self.beliefs[k] if self.beliefs is not None else (np.nan, np.nan)
            c = self.acting[k] if self.acting else ("", "")
            out.append([t, *self.states[k], *self.controls[k], p[0], p[1], *c])
        return out


def _n_steps(geom: GameGeometry, dt: float) -> int:
    n = int(round(geom.horizon / dt))
    if abs(n * dt - geom.horizon) > 1e-9:
        raise ValueError("dt must divide the horizon")
    return n


def rollout(x0, policies, geom: GameGeometry, dt: float = 0.1) -> EpisodeResult:
    """Complete-information closed loop from ``x0`` over ``[0, T]``."""
    n = _n_steps(geom, dt)
    times = np.arange(n + 1) * dt
    states = np.empty((n + 1, 4))
    controls = np.empty((n + 1, 2))
    values = np.empty((n + 1, 2))
    states[0] = x0
    for k in range(n + 1):
        x = np.append(states[k], times[k])[None, :]
        for i in range(2):
            v, g = policies[i].forward(x)
            values[k, i] = v[0]
            controls[k, i] = optimal_control(g[0, 2 * i + 1], geom)
        if k < n:
            states[k + 1] = advance(states[k], controls[k], dt)
    return EpisodeResult(times, states, controls, values, detect_collision(states, geom))


@dataclass
class SuiteMetrics:
    value_mae: float
    control_mae_mean: float
    control_mae_sd: float
    collision_pct: float
    n_episodes: int
    n_excluded: int

    def as_row(self):
        return [self.value_mae, self.control_mae_mean, self.control_mae_sd, self.collision_pct,
                self.n_episodes, self.n_excluded]


SUITE_COLUMNS = ("value_mae", "control_mae_mean", "control_mae_sd", "collision_pct", "n_episodes", "n_excluded")


def run_complete_info_suite(policies, ground_truth, geom: GameGeometry, dt: float = 0.1):
    """Value, control and collision metrics of a policy pair against BVP ground truth.

    ``policies`` is either a pair of value functions or a callable mapping a
    ground-truth trajectory to such a pair (used for per-state oracles).
    Initial states whose ground truth collides are excluded.
    """
    value_err, control_err, unnecessary, episodes = [], [], 0, []
    excluded = 0
    for traj in ground_truth:
        pair = policies(traj) if callable(policies) else policies
        if detect_collision(traj.states, geom):
            excluded += 1
            continue
        x = np.concatenate([traj.states, traj.times[:, None]], axis=1)
        pred = np.stack([pair[i].forward(x, with_grad=False)[0] for i in range(2)], axis=1)
        value_err.append(np.mean(np.abs(pred - traj.values)))
        ep = rollout(traj.x0, pair, geom, dt)
        ref_u = np.stack([np.interp(ep.times[:-1], traj.times, traj.controls[:, i]) for i in range(2)], axis=1)
        control_err.append(np.mean(np.abs(ep.controls[:-1] - ref_u)))
        ep.unnecessary_collision = ep.collision
        unnecessary += ep.collision
        episodes.append(ep)
    n = len(value_err)
    if n == 0:
        metrics = SuiteMetrics(np.nan, np.nan, np.nan, np.nan, 0, excluded)
    else:
        metrics = SuiteMetrics(float(np.mean(value_err)), float(np.mean(control_err)),
                               float(np.std(control_err)), 100.0 * unnecessary / n, n, excluded)
    return metrics, episodes


# --- incomplete information ---------------------------------------------------


@dataclass(frozen=True)
class BeliefState:
    p1: float
    p2: float

    def __post_init__(self):
        for p in (self.p1, self.p2):
            if not 0.0 <= p <= 1.0 or not np.isfinite(p):
                raise ValueError(f"belief {p} outside [0, 1]")

    def __getitem__(self, j: int) -> float:
        return (self.p1, self.p2)[j]

    def most_likely(self, j: int) -> PlayerType:
        # ties go to the non-aggressive type
        return A if self[j] > 0.5 else NA

    def most_likely_config(self) -> TypeConfig:
        return TypeConfig(self.most_likely(0), self.most_likely(1))


def _config_with(j: int, theta: PlayerType, other: PlayerType) -> TypeConfig:
    return TypeConfig(theta, other) if j == 0 else TypeConfig(other, theta)


def hypothesis_controls(bank: PolicyBank, bel: BeliefState, state4, t: float, j: int, geom: GameGeometry):
    """Player ``j``'s prescribed control under the aggressive and non-aggressive hypotheses."""
    other = bel.most_likely(1 - j)
    return tuple(policy_control(bank[j, _config_with(j, theta, other)], state4, t, j, geom) for theta in (A, NA))


def bayes_update(prior: float, loglik_a: float, loglik_na: float) -> float:
    """Posterior ``Pr(aggressive)`` from log-likelihoods of both hypotheses, clamped away from 0 and 1."""
    prior = min(max(prior, BELIEF_CLAMP), 1.0 - BELIEF_CLAMP)
    log_odds = np.log(prior) - np.log1p(-prior) + (loglik_a - loglik_na)
    p = 0.5 * (1.0 + np.tanh(0.5 * log_odds))
    return float(min(max(p, BELIEF_CLAMP), 1.0 - BELIEF_CLAMP))


def posterior(prior: float, u: float, u_a: float, u_na: float, sigma: float) -> float:
    """Bayes update under independent Gaussian control likelihoods of width ``sigma``."""
    if sigma <= 0:
        raise ValueError("likelihood width must be positive")
    s2 = 2.0 * sigma * sigma
    return bayes_update(prior, -((u - u_a) ** 2) / s2, -((u - u_na) ** 2) / s2)


def belief_update(bel: BeliefState, state4, t: float, observed, bank: PolicyBank, geom: GameGeometry,
                  sigma: float = 1.0) -> BeliefState:
    new = []
    for j in range(2):
        u_a, u_na = hypothesis_controls(bank, bel, state4, t, j, geom)
        new.append(posterior(bel[j], float(observed[j]), u_a, u_na, sigma))
    return BeliefState(*new)


def run_incomplete_info_episode(bank: PolicyBank, belief: BeliefState, true_types: TypeConfig, x0,
                                geom: GameGeometry, sigma: float = 1.0, dt: float = 0.1) -> EpisodeResult:
    """Each player acts on its own true type and the other's most likely type."""
    bank.require_complete()
    n = _n_steps(geom, dt)
    times = np.arange(n + 1) * dt
    states = np.empty((n + 1, 4))
    controls = np.empty((n + 1, 2))
    values = np.empty((n + 1, 2))
    beliefs = np.empty((n + 1, 2))
    acting = []
    states[0] = x0
    bel = belief
    for k in range(n + 1):
        beliefs[k] = (bel.p1, bel.p2)
        ml = bel.most_likely_config()
        acting.append((ml[0].tag, ml[1].tag))
        x = np.append(states[k], times[k])[None, :]
        for i in range(2):
            config = _config_with(i, true_types[i], ml[1 - i])
            v, g = bank[i, config].forward(x)
            values[k, i] = v[0]
            controls[k, i] = optimal_control(g[0, 2 * i + 1], geom)
        if k < n:
            bel = belief_update(bel, states[k], times[k], controls[k], bank, geom, sigma)
            states[k + 1] = advance(states[k], controls[k], dt)
    return EpisodeResult(times, states, controls, values, detect_collision(states, geom), beliefs=beliefs,
                         acting=acting, meta={"tie_break": NA.tag, "sigma": sigma,
                                              "true_types": true_types.tag})


def run_incomplete_info_suite(bank: PolicyBank, belief: BeliefState, true_types: TypeConfig, initials,
                              geom: GameGeometry, sigma: float = 1.0, dt: float = 0.1):
    """Collision percentage over a set of initial states."""
    episodes = [run_incomplete_info_episode(bank, belief, true_types, x0, geom, sigma, dt) for x0 in initials]
    pct = 100.0 * sum(ep.collision for ep in episodes) / max(len(episodes), 1)
    return pct, episodes
