import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cactosl import ddp
from cactosl import task as tk
from cactosl.evaluation import (EvalGrid, aggregate_runs, baseline_ics, compare_activations,
                                evaluate_policy, heatmap_grid, write_curve_csv, write_eval_csv)
from cactosl.net import MlpNetwork, make_mlp
from cactosl.trainer import TrainerConfig, policy_rollout

SMALL_GRID = EvalGrid(x_range=(0.0, 10.0), y_range=(-2.0, 2.0), mesh=2.0)


def zero_actor(task):
    d = task.n + 1
    return MlpNetwork([np.zeros((3, d)), np.zeros((task.m, 3))], [np.zeros(3), np.zeros(task.m)],
                      ["relu", "linear"], [1.0, 1.0])


def test_hard_region_has_176_points():
    pts = EvalGrid().positions()
    assert len(pts) == 176 == 16 * 11
    assert pts.min(axis=0).tolist() == [0.0, -5.0]
    assert pts.max(axis=0).tolist() == [15.0, 5.0]
    assert len(np.unique(pts, axis=0)) == 176


def test_grid_states_start_at_rest():
    t = tk.make_task("double_integrator")
    x0 = EvalGrid().initial_states(t)
    assert x0.shape == (176, 4) and np.all(x0[:, 2:] == 0)


def test_dubins_headings_fixed_by_seed():
    t = tk.make_task("dubins")
    a = EvalGrid(seed=3).initial_states(t)
    b = EvalGrid(seed=3).initial_states(t)
    c = EvalGrid(seed=4).initial_states(t)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a[:, 2], c[:, 2])
    assert np.all(np.abs(a[:, 2]) <= np.pi) and np.all(a[:, 3:] == 0)


def test_quartiles_of_one_to_five():
    agg = aggregate_runs([[1.0], [2.0], [3.0], [4.0], [5.0]])
    assert agg["median"].tolist() == [3.0]
    assert agg["q1"].tolist() == [2.0]
    assert agg["q3"].tolist() == [4.0]


def test_aggregate_is_pointwise():
    agg = aggregate_runs([[1.0, 10.0], [3.0, 30.0], [2.0, 20.0]])
    assert agg["median"].tolist() == [2.0, 20.0]
    with pytest.raises(ValueError):
        aggregate_runs([[1.0], [1.0, 2.0]])
    with pytest.raises(ValueError):
        aggregate_runs([])


def test_zero_policy_matches_ics_baseline():
    t = tk.make_task("double_integrator", T=40, dt=0.1)
    pol = evaluate_policy(t, zero_actor(t), SMALL_GRID)
    ics = baseline_ics(t, SMALL_GRID)
    np.testing.assert_array_equal(pol.costs, ics.costs)
    assert pol.mean_cost == ics.mean_cost
    assert np.all(pol.costs <= pol.warm_costs + 1e-12)


def test_eval_csv_repeatable(tmp_path):
    t = tk.make_task("single_integrator", T=30, dt=0.1)
    paths = []
    for k in range(2):
        pol = evaluate_policy(t, zero_actor(t), SMALL_GRID)
        ics = baseline_ics(t, SMALL_GRID)
        p = tmp_path / f"eval{k}.csv"
        write_eval_csv(p, pol, ics, t)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    rows = list(csv.reader(paths[0].open()))
    assert rows[0] == ["x0", "y0", "heading", "cost_policy", "cost_ics", "solver_status"]
    assert len(rows) == 1 + len(SMALL_GRID)


def test_curve_csv(tmp_path):
    p = tmp_path / "curve.csv"
    write_curve_csv(p, [0, 50], [3.5, 1.25])
    assert p.read_text().splitlines() == ["episodes_done,mean_cost", "0,3.5", "50,1.25"]


def test_heatmap_grid_covers_workspace():
    t = tk.make_task("single_integrator")
    g = heatmap_grid(t, mesh=5.0, t=7)
    assert g.shape == (49, 3)
    assert g[:, 0].min() == -15.0 and g[:, 1].max() == 15.0 and np.all(g[:, 2] == 7)


def test_compare_activations_small(tmp_path):
    t = tk.make_task("single_integrator", T=20, dt=0.1)
    cfg = TrainerConfig(S=16, L=5, critic_hidden=(8, 8))
    res = compare_activations(t, cfg, seed=0, checkpoints=(5, 10), train_episodes=6,
                              heldout_episodes=2, out_dir=tmp_path, heatmap_mesh=10.0)
    assert set(res.heldout_grad_loss) == {"relu", "elu", "sine"}
    assert all(np.isfinite(v) for v in res.heldout_grad_loss.values())
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == sorted(f"heatmap_{a}_{k}.csv" for a in ("relu", "elu", "sine")
                           for k in (5, 10))
    head = (tmp_path / "heatmap_sine_10.csv").read_text().splitlines()
    assert head[0] == "x,y,t,V" and len(head) == 1 + 16


def _sorted_quantile(values, q):
    """Linear interpolation between order statistics."""
    v = sorted(values)
    pos = q * (len(v) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (pos - lo) * (v[hi] - v[lo])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=12))
def test_quartiles_match_sort_oracle(values):
    agg = aggregate_runs([[v] for v in values])
    for key, q in (("q1", 0.25), ("median", 0.5), ("q3", 0.75)):
        assert agg[key][0] == pytest.approx(_sorted_quantile(values, q), rel=1e-12, abs=1e-9)


def test_identical_runs_collapse_quartiles():
    agg = aggregate_runs([[4.0, 2.5, 1.0]] * 3)
    for key in ("median", "q1", "q3"):
        assert agg[key].tolist() == [4.0, 2.5, 1.0]


def test_single_point_grid_equals_direct_solve():
    t = tk.make_task("double_integrator", T=40, dt=0.1)
    grid = EvalGrid(x_range=(6.0, 6.0), y_range=(1.0, 1.0))
    actor = make_mlp([5, 8, 2], "relu", np.random.default_rng(0))
    res = evaluate_policy(t, actor, grid)
    x0 = np.array([6.0, 1.0, 0.0, 0.0])
    _, U = policy_rollout(t, actor, x0, 0)
    direct = ddp.solve(t, x0, t.T, (None, U))
    assert len(grid) == 1 and res.costs[0] == direct.cost


def test_convex_task_policy_and_baseline_agree():
    # without obstacles and goal bonus the problem is convex, so every warm
    # start reaches the same optimum
    t = tk.make_task("single_integrator", T=30, dt=0.1,
                     cost=tk.CostParams(w_p=0.0, obstacles=()))
    actor = make_mlp([3, 8, 2], "relu", np.random.default_rng(1))
    tight = ddp.DdpSettings(cost_tol=1e-14, grad_tol=1e-10, max_iters=500)
    pol = evaluate_policy(t, actor, SMALL_GRID, tight)
    ics = baseline_ics(t, SMALL_GRID, tight)
    assert pol.ok.all() and ics.ok.all()
    np.testing.assert_allclose(pol.costs, ics.costs, rtol=1e-9)


def test_compare_activations_repeatable(tmp_path):
    t = tk.make_task("single_integrator", T=20, dt=0.1)
    cfg = TrainerConfig(S=16, L=5, critic_hidden=(8,))
    outs = []
    for k in range(2):
        d = tmp_path / f"c{k}"
        compare_activations(t, cfg, seed=2, checkpoints=(4,), train_episodes=4,
                            heldout_episodes=2, out_dir=d, heatmap_mesh=10.0)
        outs.append({p.name: p.read_bytes() for p in d.iterdir()})
    assert outs[0] == outs[1] and len(outs[0]) == 3
