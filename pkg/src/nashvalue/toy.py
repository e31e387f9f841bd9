"""1D example where residual-only training misses a value jump that anchors recover.

The value solves ``dv/dx - delta(x) = 0`` on ``[-1, 1]`` with ``v(1) = 0``, so it
is ``-1`` left of the origin and ``0`` right of it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .net import AdamState, ValueNet, adam_step
from .trainer import REGIMES, DivergenceDetected


@dataclass(frozen=True)
class ToyProblem:
    eps: float = 0.02
    anchors: tuple = (-0.75, -0.25, 0.25, 0.75)
    boundary_x: float = 1.0
    boundary_value: float = 0.0

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not (min(self.anchors) < 0 < max(self.anchors)):
            raise ValueError("anchors must lie on both sides of 0")


@dataclass(frozen=True)
class ToyBudget:
    pretrain_iters: int = 2000
    refine_iters: int = 4000
    collocation_batch: int = 512
    lr: float = 1e-3
    c2: float = 1.0


def toy_ground_truth(x):
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise ValueError("value is undefined at the jump x = 0")
    out = np.where(x > 0, 0.0, -1.0)
    return out if out.ndim else float(out)


def smoothed_delta(x, eps: float):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * (x / eps) ** 2) / (np.sqrt(2.0 * np.pi) * eps)


def evaluation_grid(n: int = 1001, exclude: float = 0.05) -> np.ndarray:
    x = np.linspace(-1.0, 1.0, n)
    return x[np.abs(x) >= exclude]


def _anchor_loss(net, problem):
    x = np.asarray(problem.anchors, dtype=float)[:, None]
    v, _, cache = net.forward(x, with_grad=False, keep=True)
    err = v - toy_ground_truth(x[:, 0])
    n = len(x)
    return np.abs(err).sum() / n, net.backward(cache, np.sign(err) / n)


def _boundary_loss(net, problem):
    v, _, cache = net.forward([[problem.boundary_x]], with_grad=False, keep=True)
    err = v[0] - problem.boundary_value
    return abs(err), net.backward(cache, np.array([np.sign(err)]))


def _residual_loss(net, problem, x):
    v, g, cache = net.forward(x[:, None], keep=True)
    r = g[:, 0] - smoothed_delta(x, problem.eps)
    n = len(x)
    return np.abs(r).sum() / n, net.backward(cache, np.zeros(n), (np.sign(r) / n)[:, None])


def _add(a, b, scale=1.0):
    return [p + scale * q for p, q in zip(a, b)]


@dataclass
class ToyResult:
    regime: str
    net: ValueNet
    mae: float
    jump: float
    residual_away: float
    trace: list = field(default_factory=list)

    def predict(self, x) -> np.ndarray:
        return self.net.forward(np.asarray(x, dtype=float)[:, None], with_grad=False)[0]


def residual_away(net, problem: ToyProblem, n: int = 1001) -> float:
    """Mean |residual| over grid points farther than ``3 eps`` from the bump."""
    x = np.linspace(-1.0, 1.0, n)
    x = x[np.abs(x) > 3 * problem.eps]
    _, g = net.forward(x[:, None])
    return float(np.mean(np.abs(g[:, 0] - smoothed_delta(x, problem.eps))))


def run_toy_experiment(regime: str, budget: ToyBudget = ToyBudget(), seed: int = 0,
                       problem: ToyProblem = ToyProblem()) -> ToyResult:
    """Train one 3x64 tanh net under ``regime`` and score it against the analytic value.

    Every regime spends the same number of iterations: supervised runs on the
    anchors throughout, self-supervised fits the boundary during the pretrain
    slot, and hybrid pretrains on the anchors before joint refinement.
    """
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}")
    rng = np.random.default_rng(seed)
    net = ValueNet.create([-1.0], [1.0], "tanh", seed=rng, meta={"toy": regime})
    state = AdamState.zeros_like(net.params())
    trace = []

    def step(k, loss, grads):
        if not np.isfinite(loss):
            raise DivergenceDetected(k, trace)
        new, _ = adam_step(net.params(), grads, state, budget.lr)
        net.set_params(new)
        if k % 100 == 0:
            trace.append({"iteration": k, "loss": float(loss)})

    total = budget.pretrain_iters + budget.refine_iters
    for k in range(total):
        refine = k >= budget.pretrain_iters
        if regime == "supervised":
            loss, grads = _anchor_loss(net, problem)
        elif regime == "self_supervised" and not refine:
            loss, grads = _boundary_loss(net, problem)
        elif regime == "hybrid" and not refine:
            loss, grads = _anchor_loss(net, problem)
        else:
            x = rng.uniform(-1.0, 1.0, budget.collocation_batch)
            loss, grads = _residual_loss(net, problem, x)
            b_loss, b_grads = _boundary_loss(net, problem)
            loss += budget.c2 * b_loss
            grads = _add(grads, b_grads, budget.c2)
            if regime == "hybrid":
                a_loss, a_grads = _anchor_loss(net, problem)
                loss += a_loss
                grads = _add(grads, a_grads)
        step(k, loss, grads)

    grid = evaluation_grid()
    pred = net.forward(grid[:, None], with_grad=False)[0]
    mae = float(np.mean(np.abs(pred - toy_ground_truth(grid))))
    ends = net.forward(np.array([[0.05], [-0.05]]), with_grad=False)[0]
    return ToyResult(regime, net, mae, float(ends[0] - ends[1]), residual_away(net, problem), trace)


def toy_table(results: dict, n: int = 1001):
    """Rows ``(x, supervised, self_supervised, hybrid, truth)`` on a grid; truth is NaN at 0."""
    x = np.linspace(-1.0, 1.0, n)
    cols = [results[r].predict(x) for r in REGIMES]
    truth = np.where(x > 0, 0.0, np.where(x < 0, -1.0, np.nan))
    return [[xi, *(c[k] for c in cols), truth[k]] for k, xi in enumerate(x)]


def budget_dict(budget: ToyBudget) -> dict:
    return asdict(budget)
