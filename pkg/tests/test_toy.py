import numpy as np
import pytest
from scipy.integrate import quad

from nashvalue.toy import (
    ToyBudget,
    ToyProblem,
    evaluation_grid,
    run_toy_experiment,
    smoothed_delta,
    toy_ground_truth,
    toy_table,
)

TINY = ToyBudget(pretrain_iters=100, refine_iters=100, collocation_batch=64)


def test_ground_truth_examples():
    assert toy_ground_truth(-0.5) == -1.0
    assert toy_ground_truth(0.5) == 0.0
    assert toy_ground_truth(1.0) == 0.0
    with pytest.raises(ValueError, match="undefined"):
        toy_ground_truth(0.0)
    with pytest.raises(ValueError):
        toy_ground_truth(np.array([-0.1, 0.0]))


def test_smoothed_delta_has_unit_mass():
    mass, _ = quad(smoothed_delta, -1, 1, args=(0.02,), points=[0.0])
    assert mass == pytest.approx(1.0, abs=1e-10)
    # integrating from the boundary reproduces the jump
    left, _ = quad(smoothed_delta, -0.5, 1, args=(0.02,), points=[0.0])
    assert 0.0 - left == pytest.approx(toy_ground_truth(-0.5), abs=1e-10)


def test_evaluation_grid_avoids_jump():
    grid = evaluation_grid()
    assert np.all(np.abs(grid) >= 0.05)
    assert grid.min() == -1.0 and grid.max() == 1.0


def test_problem_validation():
    with pytest.raises(ValueError):
        ToyProblem(eps=0.0)
    with pytest.raises(ValueError):
        ToyProblem(anchors=(0.25, 0.75))
    with pytest.raises(ValueError, match="regime"):
        run_toy_experiment("residual", TINY)


def test_run_is_deterministic():
    a = run_toy_experiment("hybrid", TINY, seed=3)
    b = run_toy_experiment("hybrid", TINY, seed=3)
    assert a.mae == b.mae and a.jump == b.jump
    assert a.trace == b.trace
    c = run_toy_experiment("hybrid", TINY, seed=4)
    assert c.mae != a.mae


def test_table_layout():
    results = {r: run_toy_experiment(r, TINY, seed=0) for r in ("supervised", "self_supervised", "hybrid")}
    rows = np.array(toy_table(results, n=11))
    assert rows.shape == (11, 5)
    assert np.isnan(rows[5, 4]) and rows[5, 0] == 0.0
    assert rows[0, 4] == -1.0 and rows[-1, 4] == 0.0
    assert np.allclose(rows[:, 3], results["hybrid"].predict(rows[:, 0]))
