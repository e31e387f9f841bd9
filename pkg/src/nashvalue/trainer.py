"""Supervised, self-supervised (HJI residual) and hybrid training of value-net pairs."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .game import GameGeometry, TypeConfig, optimal_control, penalty_product, terminal_reward
from .net import AdamState, ValueNet, adam_step
from .pmp import SamplingDomain, SupervisedDataset, sample_pde_states

log = logging.getLogger(__name__)

REGIMES = ("supervised", "self_supervised", "hybrid")
TRACE_COLUMNS = ("iteration", "phase", "total", "value", "gradient", "residual", "boundary")


class DivergenceDetected(RuntimeError):
    def __init__(self, iteration: int, trace: list):
        self.iteration = iteration
        self.trace = trace
        last = trace[-1] if trace else None
        super().__init__(f"non-finite loss at iteration {iteration}; last finite trace row: {last}")


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "hybrid"
    activation: str = "tanh"
    c1: float = 1.0
    c2: float = 1.0
    boundary_norm: str = "l1"
    pretrain_iters: int = 100_000
    refine_iters: int = 100_000
    boundary_warmup_iters: int = 10_000
    batch_size: int = 512
    collocation_batch: int = 512
    boundary_batch: int = 128
    n_collocation: int = 60_000
    n_boundary_states: int = 1_000
    lr: float = 1e-3
    lr_decay: float = 1.0
    out_scale: float = 10.0
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.boundary_norm not in ("l1", "l2"):
            raise ValueError("boundary_norm must be 'l1' or 'l2'")
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("loss weights must be non-negative")
        if not (self.lr > 0 and self.out_scale > 0):
            raise ValueError("lr and out_scale must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        for name in ("pretrain_iters", "refine_iters", "boundary_warmup_iters"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def full_budget(cls, regime: str, **overrides) -> "TrainConfig":
        """Full-scale budgets for one regime."""
        budgets = {
            "supervised": dict(pretrain_iters=100_000, refine_iters=0, boundary_warmup_iters=0, n_collocation=0),
            "self_supervised": dict(pretrain_iters=0, refine_iters=150_000, boundary_warmup_iters=10_000,
                                    n_collocation=122_000),
            "hybrid": dict(pretrain_iters=100_000, refine_iters=100_000, boundary_warmup_iters=0,
                           n_collocation=60_000),
        }[regime]
        return cls(regime=regime, **{**budgets, **overrides})

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**data)

    def scaled(self, scale: float) -> "TrainConfig":
        """Multiply iteration counts and collocation budgets by ``scale``."""
        if not 0 < scale <= 1:
            raise ValueError("scale must lie in (0, 1]")

        def s(n):
            return int(np.floor(n * scale + 1e-9)) if n else 0

        return replace(
            self,
            pretrain_iters=s(self.pretrain_iters),
            refine_iters=s(self.refine_iters),
            boundary_warmup_iters=s(self.boundary_warmup_iters),
            n_collocation=max(s(self.n_collocation), self.collocation_batch) if self.n_collocation else 0,
            n_boundary_states=max(s(self.n_boundary_states), self.boundary_batch),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    config: TrainConfig
    trace: list = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoints: list = field(default_factory=list)

    def rows(self):
        return [[r[c] for c in TRACE_COLUMNS] for r in self.trace]

    def final(self) -> dict | None:
        return self.trace[-1] if self.trace else None


# --- losses -----------------------------------------------------------------


def supervised_loss(nets, inputs, players, values, grads, c1: float, want_grad: bool = True):
    """Mean over records of ``|v_hat - v| + c1 * ||grad_x v_hat - grad_x v||``.

    Returns ``(total, parts, param_grads)`` with one gradient list per net
    (``None`` for a net that received no records).
    """
    n = len(values)
    if n == 0:
        raise ValueError("batch must be nonempty")
    total_v = 0.0
    total_g = 0.0
    out = [None, None]
    for i, net in enumerate(nets):
        sel = players == i
        if not np.any(sel):
            continue
        v_hat, g_hat, cache = net.forward(inputs[sel], keep=True)
        dv = v_hat - values[sel]
        dg = g_hat[:, :4] - grads[sel]
        norm = np.sqrt(np.sum(dg * dg, axis=1))
        total_v += np.abs(dv).sum()
        total_g += norm.sum()
        if want_grad:
            d_value = np.sign(dv) / n
            d_grad = np.zeros_like(g_hat)
            safe = np.where(norm > 0, norm, 1.0)
            d_grad[:, :4] = c1 * dg / safe[:, None] * (norm > 0)[:, None] / n
            out[i] = net.backward(cache, d_value, d_grad)
    parts = {"value": total_v / n, "gradient": total_g / n}
    return parts["value"] + c1 * parts["gradient"], parts, out


def argmax_controls(nets, points, geom: GameGeometry) -> np.ndarray:
    """Instantaneous Hamiltonian maximizers ``u_j = clamp(dv_j/dv_j / 2)`` from the nets."""
    u = np.empty((len(points), 2))
    for j, net in enumerate(nets):
        _, g = net.forward(points)
        u[:, j] = optimal_control(g[:, 2 * j + 1], geom)
    return u


def hji_residual(nets, points, config: TypeConfig, geom: GameGeometry, controls=None, keep: bool = False):
    """Per-player HJI residuals ``dv/dt + grad v . f(x, u*) + l_i`` at ``points``.

    Controls default to the argmax controls of the current nets and are
    treated as constants. Returns ``(residuals (B, 2), controls)`` and, with
    ``keep``, the per-net forward caches.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    fwd = [net.forward(points, keep=True) for net in nets]
    if controls is None:
        controls = np.stack([optimal_control(fwd[j][1][:, 2 * j + 1], geom) for j in range(2)], axis=1)
    f = np.stack([points[:, 1], controls[:, 0], points[:, 3], controls[:, 1]], axis=1)
    res = np.empty((len(points), 2))
    for i in range(2):
        g = fwd[i][1]
        reward = -controls[:, i] ** 2 - geom.collision_penalty * penalty_product(
            points[:, :4], i, config[i], geom, softened=True)
        res[:, i] = g[:, 4] + np.sum(g[:, :4] * f, axis=1) + reward
    if keep:
        return res, controls, f, fwd
    return res, controls


def _boundary_error(net, points, i, geom):
    v_hat, _, cache = net.forward(points, with_grad=False, keep=True)
    return v_hat - terminal_reward(points[:, :4], i, geom), cache


def self_supervised_loss(nets, pde_points, boundary_points, c2: float, norm: str, config: TypeConfig,
                         geom: GameGeometry, controls=None, want_grad: bool = True):
    """``sum_i mean|residual_i| + c2 * mean phi(v_i(., T) - c_i)`` with ``phi`` in {l1, l2}.

    Either point set may be empty.
    """
    grads = [None, None]
    res_total = 0.0
    bnd_total = 0.0

    def add(i, g):
        if g is None:
            return
        grads[i] = g if grads[i] is None else [a + b for a, b in zip(grads[i], g)]

    if len(pde_points):
        res, _, f, fwd = hji_residual(nets, pde_points, config, geom, controls=controls, keep=True)
        n = len(pde_points)
        res_total = float(np.abs(res).sum(axis=0).sum() / n)
        if want_grad:
            for i, net in enumerate(nets):
                d_grad = np.empty((n, 5))
                s = np.sign(res[:, i])[:, None] / n
                d_grad[:, :4] = s * f
                d_grad[:, 4] = s[:, 0]
                add(i, net.backward(fwd[i][2], np.zeros(n), d_grad))
    if len(boundary_points) and c2 > 0:
        m = len(boundary_points)
        for i, net in enumerate(nets):
            err, cache = _boundary_error(net, boundary_points, i, geom)
            if norm == "l1":
                bnd_total += np.abs(err).sum() / m
                d = np.sign(err) / m
            else:
                bnd_total += np.sum(err * err) / m
                d = 2.0 * err / m
            if want_grad:
                add(i, net.backward(cache, c2 * d))
    parts = {"residual": res_total, "boundary": float(bnd_total)}
    return res_total + c2 * bnd_total, parts, grads


# --- training loops -----------------------------------------------------------


class _Loop:
    """Shared Adam/trace bookkeeping for one pair of nets."""

    def __init__(self, nets, cfg: TrainConfig, report: TrainReport, total_iters: int):
        self.nets = nets
        self.cfg = cfg
        self.report = report
        self.states = [AdamState.zeros_like(net.params()) for net in nets]
        self.iteration = 0
        self.total_iters = total_iters


    def step(self, phase: str, total: float, parts: dict, grads) -> None:
        if not np.isfinite(total):
            raise DivergenceDetected(self.iteration, self.report.trace)
        lr = learning_rate(self.cfg, self.iteration, self.total_iters)
        for net, g, state in zip(self.nets, grads, self.states):
            if g is None:
                continue
            new, _ = adam_step(net.params(), g, state, lr)
            net.set_params(new)
        if self.iteration % self.cfg.log_every == 0:
            row = {"iteration": self.iteration, "phase": phase, "total": float(total),
                   "value": 0.0, "gradient": 0.0, "residual": 0.0, "boundary": 0.0}
            row.update({k: float(v) for k, v in parts.items()})
            self.report.trace.append(row)
        self.iteration += 1


def learning_rate(cfg: TrainConfig, iteration: int, n_iters: int) -> float:
    """Geometric decay from ``lr`` to ``lr * lr_decay`` over the whole run."""
    if cfg.lr_decay == 1.0 or n_iters <= 1:
        return cfg.lr
    return cfg.lr * cfg.lr_decay ** min(iteration / (n_iters - 1), 1.0)


def curriculum_window(iteration: int, n_iters: int, horizon: float) -> tuple[float, float]:
    """Sampling window ``[T - w, T]`` with ``w`` growing linearly from 0 to ``T``."""
    if n_iters <= 1:
        return (0.0, horizon)
    w = horizon * min(iteration / (n_iters - 1), 1.0)
    return (horizon - w, horizon)


def _dataset_arrays(dataset: SupervisedDataset):
    return dataset.inputs(), dataset.player_index(), dataset.records[:, 6], dataset.records[:, 7:11]


def _supervised_phase(loop: _Loop, dataset: SupervisedDataset, n_iters: int, rng, phase="supervised"):
    X, P, V, G = _dataset_arrays(dataset)
    for _ in range(n_iters):
        idx = rng.integers(0, len(X), size=min(loop.cfg.batch_size, len(X)))
        total, parts, grads = supervised_loss(loop.nets, X[idx], P[idx], V[idx], G[idx], loop.cfg.c1)
        loop.step(phase, total, parts, grads)


class _CollocationPool:
    """Fixed pool of spatial states; times are drawn fresh from the current window."""

    def __init__(self, domain: SamplingDomain, n: int, horizon: float, rng):
        self.states = domain.sample(rng, n)
        self.horizon = horizon

    def draw(self, rng, n: int, window) -> np.ndarray:
        idx = rng.integers(0, len(self.states), size=n)
        t = rng.uniform(window[0], window[1], size=(n, 1))
        return np.concatenate([self.states[idx], t], axis=1)


def _terminal_points(domain, n, horizon, rng):
    return sample_pde_states(domain, n, rng, horizon, t_window=(horizon, horizon))


def _check_pair(nets, config: TypeConfig | None):
    if len(nets) != 2:
        raise ValueError("training operates on a pair of nets")
    if config is not None:
        for net in nets:
            tag = net.meta.get("type_config")
            if tag is not None and tag != config.tag:
                raise ValueError(f"net trained for {tag} cannot learn config {config.tag}")


def train_supervised(nets, dataset: SupervisedDataset, cfg: TrainConfig) -> TrainReport:
    _check_pair(nets, dataset.type_config)
    report = TrainReport(cfg)
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    loop = _Loop(nets, cfg, report, cfg.pretrain_iters)
    if cfg.pretrain_iters:
        _supervised_phase(loop, dataset, cfg.pretrain_iters, rng)
    report.wall_clock = time.perf_counter() - start
    return report


def _ssl_phases(loop: _Loop, domain, config, geom, rng, warmup_iters, refine_iters, dataset=None,
                phase="refine"):
    cfg = loop.cfg
    T = geom.horizon
    boundary_pool = _terminal_points(domain, cfg.n_boundary_states, T, rng)
    for _ in range(warmup_iters):
        idx = rng.integers(0, len(boundary_pool), size=min(cfg.boundary_batch, len(boundary_pool)))
        total, parts, grads = self_supervised_loss(loop.nets, np.empty((0, 5)), boundary_pool[idx], 1.0,
                                                   cfg.boundary_norm, config, geom)
        loop.step("boundary_warmup", total, parts, grads)
    if not refine_iters:
        return
    pool = _CollocationPool(domain, max(cfg.n_collocation, 1), T, rng)
    sup = _dataset_arrays(dataset) if dataset is not None and len(dataset) else None
    for k in range(refine_iters):
        window = curriculum_window(k, refine_iters, T)
        pts = pool.draw(rng, cfg.collocation_batch, window)
        bidx = rng.integers(0, len(boundary_pool), size=min(cfg.boundary_batch, len(boundary_pool)))
        total, parts, grads = self_supervised_loss(loop.nets, pts, boundary_pool[bidx], cfg.c2,
                                                   cfg.boundary_norm, config, geom)
        if sup is not None:
            X, P, V, G = sup
            idx = rng.integers(0, len(X), size=min(cfg.batch_size, len(X)))
            s_total, s_parts, s_grads = supervised_loss(loop.nets, X[idx], P[idx], V[idx], G[idx], cfg.c1)
            total += s_total
            parts = {**parts, **s_parts}
            grads = [a if b is None else (b if a is None else [x + y for x, y in zip(a, b)])
                     for a, b in zip(grads, s_grads)]
        loop.step(phase, total, parts, grads)


def train_self_supervised(nets, domain: SamplingDomain, cfg: TrainConfig, config: TypeConfig,
                          geom: GameGeometry) -> TrainReport:
    """Boundary-only warmup, then residual + boundary with an expanding time window."""
    _check_pair(nets, config)
    report = TrainReport(cfg)
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    loop = _Loop(nets, cfg, report, cfg.boundary_warmup_iters + cfg.refine_iters)
    _ssl_phases(loop, domain, config, geom, rng, cfg.boundary_warmup_iters, cfg.refine_iters)
    report.wall_clock = time.perf_counter() - start
    return report


def train_hybrid(nets, dataset: SupervisedDataset, domain: SamplingDomain, cfg: TrainConfig,
                 config: TypeConfig, geom: GameGeometry) -> TrainReport:
    """Supervised pretraining, then joint supervised + residual refinement."""
    if dataset is not None and len(dataset) and dataset.type_config != config:
        raise ValueError("dataset and collocation config disagree")
    _check_pair(nets, config)
    report = TrainReport(cfg)
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    pretrain = cfg.pretrain_iters if dataset is not None and len(dataset) else 0
    loop = _Loop(nets, cfg, report, pretrain + cfg.boundary_warmup_iters + cfg.refine_iters)
    if pretrain:
        _supervised_phase(loop, dataset, cfg.pretrain_iters, rng, phase="pretrain")
    _ssl_phases(loop, domain, config, geom, rng, cfg.boundary_warmup_iters, cfg.refine_iters, dataset=dataset)
    report.wall_clock = time.perf_counter() - start
    return report


def make_pair(config: TypeConfig, geom: GameGeometry, domain: SamplingDomain, activation: str = "tanh",
              seed: int = 0, regime: str = "", out_scale: float = 1.0) -> list[ValueNet]:
    """Two fresh nets for one type configuration, normalized over ``domain x [0, T]``."""
    lo = np.append(domain.lows(), 0.0)
    hi = np.append(domain.highs(), geom.horizon)
    rng = np.random.default_rng(seed)
    return [
        ValueNet.create(lo, hi, activation, seed=rng,
                        meta={"player": i + 1, "type_config": config.tag, "regime": regime}, out_scale=out_scale)
        for i in range(2)
    ]


def train(nets, cfg: TrainConfig, config: TypeConfig, geom: GameGeometry, domain: SamplingDomain,
          dataset: SupervisedDataset | None = None) -> TrainReport:
    """Dispatch on ``cfg.regime``."""
    if cfg.regime == "supervised":
        if dataset is None:
            raise ValueError("supervised training needs a dataset")
        return train_supervised(nets, dataset, cfg)
    if cfg.regime == "self_supervised":
        return train_self_supervised(nets, domain, cfg, config, geom)
    return train_hybrid(nets, dataset, domain, cfg, config, geom)
