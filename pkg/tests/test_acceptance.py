"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The training-based criteria (6 and 7) share one set of runs: three seeds for
each of k_S = 1000 and k_S = 0 on the reduced double-integrator budget.
Every actor snapshot (one per update cycle) is evaluated on the 176-point
Hard-Region grid to form a cost-versus-episodes curve.
"""

import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from cactosl import ddp, gradcheck
from cactosl import task as tk
from cactosl.buffer import ReplayBuffer
from cactosl.evaluation import EvalGrid, aggregate_runs, baseline_ics, compare_activations, \
    evaluate_policy
from cactosl.net import MlpNetwork, logsym
from cactosl.trainer import Learner, TrainerConfig, generate_episodes, init_networks, train
from conftest import ACCEPTANCE
from oracles import lqr_task, rel, riccati, synthetic_trajectory

SEEDS = (0, 1, 2)
WORKERS = os.cpu_count() or 1


def report(label, ok, detail):
    ACCEPTANCE[label] = (bool(ok), detail)
    print(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    assert ok, detail


# ---------------------------------------------------------------------------
# 1. DDP against Riccati

def test_01_ddp_matches_riccati():
    t = lqr_task(T=50)
    ddp.solve(t, np.ones(4), horizon=2)           # compile outside the timed region
    x0 = np.array([4.0, -3.0, 1.0, 0.5])
    start = time.perf_counter()
    traj = ddp.solve(t, x0)
    elapsed = time.perf_counter() - start
    X, U, Vx = riccati(t, x0)
    errs = (rel(traj.X, X), rel(traj.U, U), rel(traj.Vx, Vx))
    ok = max(errs) < 1e-6 and traj.iterations <= 2 and traj.status == "converged" \
        and elapsed < 1.0
    report("1 DDP-Riccati", ok, f"rel err X/U/Vx = {errs[0]:.1e}/{errs[1]:.1e}/{errs[2]:.1e}, "
           f"{traj.iterations} iterations, {elapsed:.3f} s")


# ---------------------------------------------------------------------------
# 2. value gradient against perturb-and-resolve

def test_02_value_gradient_consistency():
    t = tk.make_task("double_integrator")
    tight = ddp.DdpSettings(cost_tol=1e-14, grad_tol=1e-10, max_iters=500)
    rng = np.random.default_rng(2024)
    eps = 1e-4
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        # smooth region: left of the obstacles, around the goal
        x0 = np.concatenate([rng.uniform([-14.0, -12.0], [-1.0, 12.0]), rng.uniform(-1, 1, 2)])
        traj = ddp.solve(t, x0, settings=tight)
        fd = np.empty(4)
        for j in range(4):
            e = np.zeros(4)
            e[j] = eps
            jp = ddp.solve(t, x0 + e, warm_start=(None, traj.U), settings=tight).cost
            jm = ddp.solve(t, x0 - e, warm_start=(None, traj.U), settings=tight).cost
            fd[j] = (jp - jm) / (2 * eps)
        worst = max(worst, rel(traj.Vx[0], fd))
    elapsed = time.perf_counter() - start
    report("2 value-gradient consistency", worst < 1e-3 and elapsed < 120,
           f"max rel err {worst:.1e} over 20 states, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# 3. Sobolev double backprop

def test_03_sobolev_param_gradients():
    start = time.perf_counter()
    errs = {act: gradcheck.check_sobolev(act, np.random.default_rng(3), batches=50)
            for act in ("sine", "elu", "relu")}
    elapsed = time.perf_counter() - start
    ok = max(errs.values()) < 1e-5 and elapsed < 60
    report("3 Sobolev double-backprop", ok,
           ", ".join(f"{a} {e:.1e}" for a, e in errs.items()) + f", {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# 4. logsym

def test_04_logsym():
    x = np.linspace(-1e4, 1e4, 200_001)
    y = logsym(x)
    odd = np.array_equal(logsym(-x), -y)
    mono = bool(np.all(np.diff(y) > 0))
    zero = logsym(0.0) == 0.0
    unit = abs(logsym(math.e - 1.0) - 1.0) <= 1e-12
    report("4 logsym", odd and mono and zero and unit,
           f"odd={odd} monotone={mono} logsym(0)=0:{zero} logsym(e-1)=1:{unit}")


# ---------------------------------------------------------------------------
# 5. TD(L) semantics

def test_05_td_targets():
    # three steps, stage costs l_0..l_3 = 1, 2, 4, 8 (l_3 terminal)
    traj = synthetic_trajectory(costs=(1.0, 2.0, 4.0, 8.0))
    T = 3
    task = tk.make_task("single_integrator", T=T)
    cfg = TrainerConfig()
    actor, critic, _ = init_networks(task, cfg, 0)
    # target critic V'(z) = z_t + 10 on normalized input, z_t = (t - T/2) / (T/2)
    target = MlpNetwork([np.array([[0.0, 0.0, 1.0]])], [np.array([10.0])], ["linear"], [1.0])
    learner = Learner(task, cfg, actor, critic, target)

    def boot(t):
        return (t - 1.5) / 1.5 + 10.0

    hand = {
        1: ([3.0, 6.0, 12.0, 8.0], [3.0 + boot(1), 6.0 + boot(2), 12.0 + boot(3), 8.0]),
        2: ([7.0, 14.0, 12.0, 8.0], [7.0 + boot(2), 14.0 + boot(3), 12.0, 8.0]),
        50: ([15.0, 14.0, 12.0, 8.0], [15.0, 14.0, 12.0, 8.0]),
    }
    details, ok = [], True
    for L, (v_hand, target_hand) in hand.items():
        buf = ReplayBuffer(task.n)
        buf.insert_trajectory(traj, L, T)
        b = buf.contents()
        got = learner.critic_targets(b)
        match = b.partial_costs.tolist() == v_hand and got.tolist() == target_hand
        ok &= match
        details.append(f"L={L} {'exact' if match else 'MISMATCH'}")
    report("5 TD(L) targets", ok, ", ".join(details))


# ---------------------------------------------------------------------------
# 6 and 7. scaled training runs

def scaled_task():
    # 10 s episodes at dt = 0.1
    return tk.make_task("double_integrator", T=100, dt=0.1)


def scaled_config(k_s):
    return TrainerConfig(M=10 ** 6, e_update=50, K_list=(250, 500, 1000), update_budget=10_000,
                         k_s=k_s)


@pytest.fixture(scope="module")
def training_curves():
    task = scaled_task()
    grid = EvalGrid()
    start = time.perf_counter()
    ics = baseline_ics(task, grid, workers=WORKERS).mean_cost
    curves = {}
    for k_s in (1000.0, 0.0):
        for seed in SEEDS:
            res = train(task, scaled_config(k_s), seed=seed, workers=WORKERS,
                        keep_snapshots=True)
            eps = np.array([e for _, e, _ in res.snapshots])
            costs = np.array([evaluate_policy(task, a, grid, workers=WORKERS).mean_cost
                              for _, _, a in res.snapshots])
            curves[(k_s, seed)] = (eps, costs)
            print(f"k_s={k_s:g} seed={seed}: " +
                  " ".join(f"{e}:{c:.2f}" for e, c in zip(eps, costs)))
    return ics, curves, time.perf_counter() - start


def test_06_training_beats_ics_baseline(training_curves):
    ics, curves, elapsed = training_curves
    runs = [curves[(1000.0, s)][1] for s in SEEDS]
    agg = aggregate_runs(runs)
    final = agg["median"][-1]
    best = min(agg["median"].min(), final)
    spread = ics - best
    margin = ics - final
    ok = final < ics and margin >= 0.1 * spread
    report("6 training efficacy", ok,
           f"ICS {ics:.3f}, median final {final:.3f}, best {best:.3f}, "
           f"margin {margin:.3f} vs required {0.1 * spread:.3f}; both variants {elapsed:.0f} s")


def test_07_sobolev_sample_efficiency(training_curves):
    _, curves, _ = training_curves
    finals0 = [curves[(0.0, s)][1][-1] for s in SEEDS]
    target = float(np.median(finals0))
    details, wins = [], 0
    for s in SEEDS:
        eps0 = curves[(0.0, s)][0][-1]
        eps1, costs1 = curves[(1000.0, s)]
        hit = np.nonzero(costs1 <= target)[0]
        ratio = eps1[hit[0]] / eps0 if len(hit) else math.inf
        wins += ratio <= 0.5
        details.append(f"seed {s} ratio {ratio:.2f}")
    report("7 Sobolev sample efficiency", wins >= 2,
           f"k_S=0 final median {target:.3f}; " + ", ".join(details))


# ---------------------------------------------------------------------------
# 8. activation comparison

def test_08_activation_comparison(tmp_path):
    task = tk.make_task("single_integrator")
    cfg = TrainerConfig(k_s=1e3)
    details, wins, files_ok = [], 0, True
    for seed in SEEDS:
        out = tmp_path / f"seed_{seed}"
        res = compare_activations(task, cfg, seed, ("relu", "elu", "sine"), (1000, 5000, 10000),
                                  out_dir=out, workers=WORKERS)
        g = res.heldout_grad_loss
        wins += g["sine"] <= g["elu"] <= g["relu"]
        details.append(f"seed {seed} sine {g['sine']:.3f} elu {g['elu']:.3f} "
                       f"relu {g['relu']:.3f}")
        expected = {f"heatmap_{a}_{k}.csv" for a in ("relu", "elu", "sine")
                    for k in (1000, 5000, 10000)}
        files_ok &= expected <= {p.name for p in out.iterdir()}
    report("8 activation comparison", wins >= 2 and files_ok,
           "; ".join(details) + f"; heatmaps {'present' if files_ok else 'MISSING'}")


# ---------------------------------------------------------------------------
# 9. determinism

def test_09_determinism(tmp_path):
    task = scaled_task()
    cfg = replace(scaled_config(1000.0), M=100, update_budget=750)
    blobs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        train(task, cfg, seed=7, out_dir=d, workers=1)
        blobs.append({p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*"))
                      if p.is_file()})
    same_run = blobs[0] == blobs[1] and len(blobs[0]) > 3

    contents = []
    for workers in (1, 2, 3):
        trajs = generate_episodes(task, None, range(6), 7, cfg, workers)
        contents.append([(t.t0, t.X.tobytes(), t.U.tobytes(), t.Vx.tobytes()) for t in trajs])
    same_workers = contents[0] == contents[1] == contents[2]
    report("9 determinism", same_run and same_workers,
           f"repeat run byte-identical over {len(blobs[0])} files: {same_run}; "
           f"episodes identical for 1/2/3 workers: {same_workers}")
