"""Open-loop Nash equilibria from the PMP boundary value problem.

Each solve integrates states and full joint-state costates for both players,
enforcing ``x(0) = x0`` and ``lam_i(T) = grad c_i(x(T))``. The discontinuous
collision penalty is replaced by a logistic box inside the solver; the sharpness
is raised along a continuation schedule and each solution warm-starts the next.
Values stored with a trajectory use the hard (true) indicator.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .game import (
    GameGeometry,
    TypeConfig,
    optimal_control,
    terminal_costate,
    terminal_reward,
)

log = logging.getLogger(__name__)

RECORD_COLUMNS = ("t", "d1", "v1", "d2", "v2", "player", "value", "g_d1", "g_v1", "g_d2", "g_v2")


class NonConvergence(RuntimeError):
    def __init__(self, residual: float, iterations: int, gamma: float | None = None):
        self.residual = residual
        self.iterations = iterations
        self.gamma = gamma
        super().__init__(f"BVP did not converge: residual {residual:.3e} after {iterations} iterations (gamma={gamma})")


class DatasetIncomplete(RuntimeError):
    def __init__(self, converged: int, requested: int, stats: dict):
        self.converged = converged
        self.requested = requested
        self.stats = stats
        super().__init__(f"only {converged}/{requested} trajectories converged: {stats}")


@dataclass(frozen=True)
class SamplingDomain:
    d_range: tuple[float, float]
    v_range: tuple[float, float]
    name: str = ""

    def __post_init__(self):
        if not (self.d_range[0] < self.d_range[1] and self.v_range[0] < self.v_range[1]):
            raise ValueError("sampling ranges must be nonempty")

    def lows(self) -> np.ndarray:
        return np.array([self.d_range[0], self.v_range[0], self.d_range[0], self.v_range[0]])

    def highs(self) -> np.ndarray:
        return np.array([self.d_range[1], self.v_range[1], self.d_range[1], self.v_range[1]])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lows(), self.highs(), size=(n, 4))


DOMAINS = {
    "GT": SamplingDomain((15.0, 20.0), (18.0, 25.0), "GT"),
    "HJ": SamplingDomain((15.0, 105.0), (15.0, 32.0), "HJ"),
    "XP": SamplingDomain((15.0, 30.0), (18.0, 25.0), "XP"),
}


@dataclass(frozen=True)
class SolverOptions:
    n_segments: int = 10
    sample_dt: float = 0.1
    substeps: int = 40  # RK4 steps per sample interval
    tol: float = 1e-6
    max_iter: int = 40
    gammas: tuple[float, ...] = (1.0, 2.5, 5.0)
    penalty_ramp: tuple[float, ...] = (0.01, 0.1, 1.0)  # penalty fractions at the first gamma
    max_splits: int = 4  # extra continuation stages allowed per seed
    strategy: str = "multistart"  # or "single": decoupled seed only

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EquilibriumTrajectory:
    """Samples of one equilibrium on the ``sample_dt`` grid.

    ``costates[k, i]`` is player ``i``'s 4-vector gradient over ``(d1, v1, d2, v2)``.
    The ``fine_*`` arrays hold the full RK4 grid used for value quadrature.
    """

    config: TypeConfig
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    costates: np.ndarray
    values: np.ndarray
    residual: float
    iterations: int
    fine_times: np.ndarray = field(repr=False)
    fine_states: np.ndarray = field(repr=False)
    fine_controls: np.ndarray = field(repr=False)

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    def records(self) -> np.ndarray:
        """Rows of ``RECORD_COLUMNS``, player 1 samples first, then player 2."""
        n = len(self.times)
        rows = []
        for i in range(2):
            block = np.empty((n, len(RECORD_COLUMNS)))
            block[:, 0] = self.times
            block[:, 1:5] = self.states
            block[:, 5] = i + 1
            block[:, 6] = self.values[:, i]
            block[:, 7:11] = self.costates[:, i]
            rows.append(block)
        return np.vstack(rows)

    def hard_overlap_time(self, geom: GameGeometry, i: int = 0) -> float:
        lo_own = geom.collision_interval(self.config[i].theta)[0]
        lo_a, hi = geom.collision_interval(1.0)
        d_own = self.fine_states[:, 2 * i]
        d_other = self.fine_states[:, 2 * (1 - i)]
        return float(kernels.overlap_durations(d_own, d_other, self.fine_times, lo_own, lo_a, hi).sum())


def kernel_params(config: TypeConfig, geom: GameGeometry, gamma: float, penalty_scale: float = 1.0) -> np.ndarray:
    lo1 = geom.collision_interval(config.theta1.theta)[0]
    lo2 = geom.collision_interval(config.theta2.theta)[0]
    loa, hi = geom.collision_interval(1.0)
    b = geom.collision_penalty * penalty_scale
    return np.array([b, gamma, geom.u_min, geom.u_max, lo1, lo2, loa, hi])


def bvp_rhs(state, lam1, lam2, config: TypeConfig, geom: GameGeometry, gamma: float | None = None) -> np.ndarray:
    """Time derivative of ``(x, lam1, lam2)`` with the argmax controls substituted."""
    gamma = geom.softening_sharpness if gamma is None else gamma
    y = np.concatenate([np.asarray(state, float)[:4], np.asarray(lam1, float), np.asarray(lam2, float)])
    out = np.empty(kernels.NY)
    kernels.pmp_rhs(y, kernel_params(config, geom, gamma), out)
    return out


# (player, fraction of the control bound) biased seeds tried after the decoupled one
SEEDS = (
    ("decoupled", None, 0.0),
    ("p1_yields", 0, -1.0), ("p2_yields", 1, -1.0),
    ("p1_leads", 0, 0.8), ("p2_leads", 1, 0.8),
    ("p1_slows", 0, -0.5), ("p2_slows", 1, -0.5),
    ("p1_hurries", 0, 0.4), ("p2_hurries", 1, 0.4),
)


def _seed_guess(x0: np.ndarray, t: np.ndarray, geom: GameGeometry, seed=SEEDS[0]) -> np.ndarray:
    """Constant-control paths for both players stacked into 12-vector nodes.

    The decoupled seed uses each player's penalty-free optimum; the others
    push one player toward braking or accelerating (as a fraction of the
    corresponding control bound) so Newton can land on equilibria on either
    side of the collision box.
    """
    _, biased, frac = seed
    T = geom.horizon
    y = np.zeros((len(t), kernels.NY))
    for i in range(2):
        d0, v0 = x0[2 * i], x0[2 * i + 1]
        u = np.clip((geom.nominal_speed - v0) / (1.0 + T), geom.u_min, geom.u_max)
        if biased == i:
            u = frac * (geom.u_max if frac > 0 else -geom.u_min)
        y[:, 2 * i] = d0 + v0 * t + 0.5 * u * t**2
        y[:, 2 * i + 1] = v0 + u * t
        base = 4 + 4 * i
        y[:, base + 2 * i] = geom.terminal_position_weight
        y[:, base + 2 * i + 1] = 2 * u + geom.terminal_position_weight * (T - t)
    return y


class _Shooter:
    def __init__(self, x0, config, geom, opts):
        self.x0 = np.asarray(x0, dtype=float)
        self.geom = geom
        self.config = config
        self.opts = opts
        n_samples = int(round(geom.horizon / opts.sample_dt))
        if n_samples % opts.n_segments:
            raise ValueError("n_segments must divide the number of sample intervals")
        self.n_samples = n_samples
        self.samples_per_seg = n_samples // opts.n_segments
        self.nsteps = self.samples_per_seg * opts.substeps
        self.h = opts.sample_dt / opts.substeps
        self.node_times = np.arange(opts.n_segments) * self.samples_per_seg * opts.sample_dt
        m = opts.n_segments
        self.nz = 12 * m - 4

    def pack(self, nodes):
        return np.concatenate([nodes[0, 4:], nodes[1:].ravel()])

    def unpack(self, z):
        nodes = np.empty((self.opts.n_segments, 12))
        nodes[0, :4] = self.x0
        nodes[0, 4:] = z[:8]
        nodes[1:] = z[8:].reshape(-1, 12)
        return nodes

    def residual(self, z, p, jac=True):
        m = self.opts.n_segments
        nodes = self.unpack(z)
        ends, sens = kernels.shoot_segments(nodes, self.h, self.nsteps, p, jac)
        R = np.empty(self.nz)
        for k in range(m - 1):
            R[12 * k:12 * k + 12] = ends[k] - nodes[k + 1]
        yT = ends[-1]
        R[12 * (m - 1):] = np.concatenate([
            yT[4:8] - terminal_costate(yT[:4], 0, self.geom),
            yT[8:12] - terminal_costate(yT[:4], 1, self.geom),
        ])
        if not jac:
            return R, None
        Jm = np.zeros((self.nz, self.nz))

        def col(k):  # column slice of node k in z
            return slice(0, 8) if k == 0 else slice(8 + 12 * (k - 1), 8 + 12 * k)

        for k in range(m - 1):
            rows = slice(12 * k, 12 * k + 12)
            Jm[rows, col(k)] = sens[k][:, 4:] if k == 0 else sens[k]
            Jm[rows, col(k + 1)] = -np.eye(12)
        # d(lam(T) - grad c(x(T)))/d yT
        dT = np.zeros((8, 12))
        dT[:, 4:] = np.eye(8)
        dT[1, 1] += 2.0  # lam1_v1 - (-2 (v1 - vbar))
        dT[7, 3] += 2.0  # lam2_v2 - (-2 (v2 - vbar))
        Jm[12 * (m - 1):, col(m - 1)] = dT @ (sens[-1][:, 4:] if m == 1 else sens[-1])
        return R, Jm

    def continuation(self, z, ramp=True):
        """Walk the (sharpness, penalty) schedule, bisecting a stage that fails."""
        opts = self.opts
        first = [(opts.gammas[0], s) for s in opts.penalty_ramp] if ramp else [(opts.gammas[0], 1.0)]
        pending = first + [(g, 1.0) for g in opts.gammas[1:]]
        prev = None
        total = 0
        splits = 0
        while pending:
            gamma, scale = pending[0]
            p = kernel_params(self.config, self.geom, gamma, scale)
            try:
                z_new, norm, it = self.newton(z, p)
            except NonConvergence as exc:
                total += exc.iterations
                if prev is None or splits >= opts.max_splits:
                    raise NonConvergence(exc.residual, total, gamma) from None
                splits += 1
                mid = (float(np.sqrt(prev[0] * gamma)), float(np.sqrt(prev[1] * scale)))
                pending.insert(0, mid)
                continue
            total += it
            z = z_new
            prev = pending.pop(0)
        return z, norm, total, p

    def newton(self, z, p):
        R, Jm = self.residual(z, p)
        norm = np.max(np.abs(R))
        history = [norm]
        it = 0
        while norm > self.opts.tol and it < self.opts.max_iter:
            if len(history) > 8 and history[-1] > 0.5 * history[-9]:
                break  # stalled: no halving of the residual over 8 iterations
            it += 1
            try:
                step = np.linalg.solve(Jm, -R)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(Jm, -R, rcond=None)[0]
            merit = np.sum(R**2)
            alpha = 1.0
            while True:
                z_new = z + alpha * step
                R_new, _ = self.residual(z_new, p, jac=False)
                if np.all(np.isfinite(R_new)) and np.sum(R_new**2) <= (1 - 1e-4 * alpha) * merit:
                    break
                alpha *= 0.5
                if alpha < 1e-4:
                    break
            if not np.all(np.isfinite(R_new)):
                raise NonConvergence(float("inf"), it, p[1])
            z = z_new
            R, Jm = self.residual(z, p)
            norm = np.max(np.abs(R))
            history.append(norm)
        if not norm <= self.opts.tol:
            raise NonConvergence(float(norm), it, p[1])
        return z, norm, it

    def dense_path(self, z, p):
        nodes = self.unpack(z)
        m = self.opts.n_segments
        path = np.empty((m * self.nsteps + 1, 12))
        seg = np.empty((self.nsteps + 1, 12))
        for k in range(m):
            kernels.rk4_propagate(nodes[k], self.h, self.nsteps, p, False, seg)
            path[k * self.nsteps:(k + 1) * self.nsteps + 1] = seg
        return path


def trajectory_values(fine_t, fine_x, fine_u, config: TypeConfig, geom: GameGeometry) -> np.ndarray:
    """Reward-to-go of both players on the fine grid, hard collision indicator."""
    lo_a, hi = geom.collision_interval(1.0)
    h = np.diff(fine_t)
    out = np.empty((len(fine_t), 2))
    for i in range(2):
        lo_own = geom.collision_interval(config[i].theta)[0]
        overlap = kernels.overlap_durations(
            fine_x[:, 2 * i].copy(), fine_x[:, 2 * (1 - i)].copy(), fine_t, lo_own, lo_a, hi
        )
        u2 = fine_u[:, i] ** 2
        step_reward = -0.5 * h * (u2[:-1] + u2[1:]) - geom.collision_penalty * overlap
        tail = np.concatenate([np.cumsum(step_reward[::-1])[::-1], [0.0]])
        out[:, i] = terminal_reward(fine_x[-1], i, geom) + tail
    return out


def _finish(shooter, z, norm, iterations, p, config, geom, opts) -> EquilibriumTrajectory:
    path = shooter.dense_path(z, p)
    fine_t = np.arange(path.shape[0]) * shooter.h
    fine_u = np.stack([optimal_control(path[:, 5], geom), optimal_control(path[:, 11], geom)], axis=1)
    fine_x = path[:, :4]
    values = trajectory_values(fine_t, fine_x, fine_u, config, geom)
    idx = np.arange(shooter.n_samples + 1) * opts.substeps
    return EquilibriumTrajectory(
        config=config,
        times=np.round(fine_t[idx], 12),
        states=fine_x[idx].copy(),
        controls=fine_u[idx].copy(),
        costates=path[idx, 4:].reshape(-1, 2, 4),
        values=values[idx].copy(),
        residual=float(norm),
        iterations=iterations,
        fine_times=fine_t,
        fine_states=fine_x,
        fine_controls=fine_u,
    )


def solve_bvp(x0, config: TypeConfig, geom: GameGeometry, opts: SolverOptions | None = None,
              guess: np.ndarray | None = None) -> EquilibriumTrajectory:
    """Solve the two-player PMP boundary value problem from ``x0``.

    ``guess`` may be a ``(n_segments, 12)`` array of node values (for example
    from a neighboring solution) and is then the only seed.

    Without a guess the decoupled seed is continued from a weak penalty up to
    the full one. If that fails or its solution collides (hard indicator) and
    the strategy is ``multistart``, the biased seeds in ``SEEDS`` are solved
    at full penalty and the collision-free solution with the largest total
    value wins; failing that, the largest total value overall.
    """
    opts = opts or SolverOptions()
    shooter = _Shooter(x0, config, geom, opts)
    if guess is not None:
        nodes = np.array(guess, dtype=float)
        nodes[0, :4] = shooter.x0
        attempts = [(nodes, False)]
    else:
        attempts = [(_seed_guess(shooter.x0, shooter.node_times, geom, SEEDS[0]), True)]
        if opts.strategy == "multistart":
            attempts += [(_seed_guess(shooter.x0, shooter.node_times, geom, s), False) for s in SEEDS[1:]]
    solutions, failure, spent = [], None, 0
    for k, (nodes, ramp) in enumerate(attempts):
        try:
            z, norm, it, p = shooter.continuation(shooter.pack(nodes), ramp=ramp)
        except NonConvergence as exc:
            failure = exc
            spent += exc.iterations
            continue
        spent += it
        traj = _finish(shooter, z, norm, spent, p, config, geom, opts)
        clean = traj.hard_overlap_time(geom, 0) == 0.0 and traj.hard_overlap_time(geom, 1) == 0.0
        if k == 0 and clean:
            return traj
        solutions.append((clean, float(traj.values[0].sum()), -k, traj))
    if not solutions:
        raise NonConvergence(failure.residual, spent, failure.gamma)
    best = max(solutions, key=lambda s: s[:3])[3]
    best.iterations = spent
    return best


def solve_nodes(traj: EquilibriumTrajectory, opts: SolverOptions | None = None) -> np.ndarray:
    """Multiple-shooting node values of a solved trajectory, for warm starts."""
    opts = opts or SolverOptions()
    n_samples = len(traj.times) - 1
    idx = np.arange(opts.n_segments) * (n_samples // opts.n_segments)
    return np.concatenate([traj.states[idx], traj.costates[idx].reshape(len(idx), 8)], axis=1)


@dataclass
class SupervisedDataset:
    records: np.ndarray
    type_config: TypeConfig
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def inputs(self) -> np.ndarray:
        """``(d1, v1, d2, v2, t)`` per record."""
        return np.concatenate([self.records[:, 1:5], self.records[:, :1]], axis=1)

    def player_index(self) -> np.ndarray:
        return self.records[:, 5].astype(int) - 1

    def save(self, path, stamp: str | None = None) -> None:
        from .io import write_csv, write_json

        path = Path(path)
        write_csv(path, RECORD_COLUMNS, self.records, int_columns={"player"}, header_comment=stamp)
        meta = dict(self.metadata, type_config=self.type_config.tag, n_records=len(self))
        write_json(path.with_suffix(".meta.json"), meta)

    @classmethod
    def load(cls, path) -> "SupervisedDataset":
        from .io import read_csv

        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"dataset file not found: {path}")
        columns, records = read_csv(path)
        if tuple(columns) != RECORD_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {columns}")
        meta_path = path.with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        config = TypeConfig.parse(meta.get("type_config", "a,a"))
        return cls(records, config, meta)


    def trajectories(self, geom: GameGeometry) -> list[EquilibriumTrajectory]:
        """Rebuild per-trajectory samples, assuming the block layout written by :meth:`EquilibriumTrajectory.records`."""
        r = self.records
        starts = np.flatnonzero((r[:, 0] == 0.0) & (r[:, 5] == 1))
        out = []
        for k, s in enumerate(starts):
            end = starts[k + 1] if k + 1 < len(starts) else len(r)
            block = r[s:end]
            n = len(block) // 2
            p1, p2 = block[:n], block[n:]
            if len(block) != 2 * n or not np.all(p2[:, 5] == 2):
                raise ValueError("records are not in per-trajectory blocks")
            costates = np.stack([p1[:, 7:11], p2[:, 7:11]], axis=1)
            controls = optimal_control(costates[:, [0, 1], [1, 3]], geom)
            states = p1[:, 1:5]
            out.append(EquilibriumTrajectory(self.type_config, p1[:, 0], states, controls, costates,
                                             np.stack([p1[:, 6], p2[:, 6]], axis=1), np.nan, 0,
                                             p1[:, 0], states, controls))
        return out


def generate_trajectories(domain: SamplingDomain, n_traj: int, config: TypeConfig, seed: int,
                          geom: GameGeometry, opts: SolverOptions | None = None,
                          retry_budget: int | None = None, min_fraction: float = 0.9):
    """Solve ``n_traj`` equilibria from uniform initial states.

    Failed draws are replaced by fresh draws from the same stream, so the
    accepted initial states stay uniformly distributed. Returns the trajectories
    and convergence statistics.
    """
    if n_traj <= 0:
        raise ValueError("n_traj must be positive")
    opts = opts or SolverOptions()
    retry_budget = max(10, n_traj // 2) if retry_budget is None else retry_budget
    rng = np.random.default_rng(seed)
    pool = domain.sample(rng, n_traj + retry_budget)
    trajs = []
    failures = 0
    residuals = []
    for x0 in pool:
        if len(trajs) == n_traj:
            break
        try:
            traj = solve_bvp(x0, config, geom, opts)
        except NonConvergence as exc:
            failures += 1
            log.info("solve failed at x0=%s: %s", np.round(x0, 3).tolist(), exc)
            continue
        trajs.append(traj)
        residuals.append(traj.residual)
    stats = {
        "requested": n_traj,
        "converged": len(trajs),
        "failed": failures,
        "draws": len(trajs) + failures,
        "max_residual": float(max(residuals)) if residuals else None,
    }
    if len(trajs) < min_fraction * n_traj:
        raise DatasetIncomplete(len(trajs), n_traj, stats)
    return trajs, stats


def generate_dataset(domain: SamplingDomain, n_traj: int, config: TypeConfig, seed: int,
                     geom: GameGeometry, opts: SolverOptions | None = None,
                     retry_budget: int | None = None) -> SupervisedDataset:
    opts = opts or SolverOptions()
    trajs, stats = generate_trajectories(domain, n_traj, config, seed, geom, opts, retry_budget)
    records = np.vstack([t.records() for t in trajs])
    meta = {
        "seed": seed,
        "domain": {"name": domain.name, "d_range": list(domain.d_range), "v_range": list(domain.v_range)},
        "solver": opts.to_dict(),
        "geometry": geom.to_dict(),
        "convergence": stats,
    }
    return SupervisedDataset(records, config, meta)


def sample_pde_states(domain: SamplingDomain, n: int, seed, horizon: float,
                      t_window: tuple[float, float] | None = None) -> np.ndarray:
    """Uniform collocation points ``(d1, v1, d2, v2, t)``."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo_t, hi_t = (0.0, horizon) if t_window is None else t_window
    x = domain.sample(rng, n)
    t = rng.uniform(lo_t, hi_t, size=(n, 1))
    return np.concatenate([x, t], axis=1)
