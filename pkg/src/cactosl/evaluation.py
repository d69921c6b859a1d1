"""Hard-region evaluation, multi-run aggregation and the activation comparison."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import ddp, seeding
from .buffer import ReplayBuffer
from .net import MlpNetwork, logsym, make_mlp
from .task import DUBINS, TaskModel
from .trainer import (Learner, TrainerConfig, generate_episodes, input_normalizer,
                      policy_rollout, update_cycle)


@dataclass(frozen=True)
class EvalGrid:
    """Initial positions on a regular mesh, both endpoints included, at rest."""

    x_range: tuple = (0.0, 15.0)
    y_range: tuple = (-5.0, 5.0)
    mesh: float = 1.0
    seed: int = 0

    def positions(self):
        xs = _axis(self.x_range, self.mesh)
        ys = _axis(self.y_range, self.mesh)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def initial_states(self, task: TaskModel):
        """Start states for ``task``; Dubins headings are drawn once per point."""
        pos = self.positions()
        x0 = np.zeros((len(pos), task.n))
        if task.n == 1:
            x0[:, 0] = pos[:, 0]
        else:
            x0[:, :2] = pos
        if task.kind == DUBINS:
            rng = seeding.substream(self.seed, seeding.EVAL_HEADING)
            x0[:, 2] = rng.uniform(-np.pi, np.pi, size=len(pos))
        return x0

    def __len__(self):
        return len(self.positions())


def _axis(bounds, mesh):
    lo, hi = bounds
    count = int(np.floor((hi - lo) / mesh + 1e-9)) + 1
    return lo + mesh * np.arange(count)


@dataclass
class EvalResult:
    x0: np.ndarray
    costs: np.ndarray
    ok: np.ndarray
    warm_costs: np.ndarray

    @property
    def mean_cost(self) -> float:
        return float(np.mean(self.costs))


def _solve_point(args):
    task, x0, U, settings = args
    try:
        traj = ddp.solve(task, x0, task.T, (None, U), settings)
    except ValueError:
        return np.inf, False
    if traj.ok:
        return traj.cost, True
    return np.nan, False


def _solve_all(task, x0, U, settings, workers):
    jobs = [(task, x0[i], U[i], settings) for i in range(len(x0))]
    if workers <= 1:
        out = [_solve_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_solve_point, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    costs = np.array([c for c, _ in out])
    ok = np.array([f for _, f in out])
    return costs, ok


def _evaluate(task, x0, U, settings, workers):
    X = np.stack([ddp.rollout(task, x, u) for x, u in zip(x0, U)])
    warm = np.array([ddp.stage_costs(task, Xi, Ui).sum() for Xi, Ui in zip(X, U)])
    costs, ok = _solve_all(task, x0, U, settings, workers)
    # failed solves are charged the warm-start rollout cost
    costs = np.where(ok, costs, warm)
    return EvalResult(x0, costs, ok, warm)


def evaluate_policy(task: TaskModel, actor: MlpNetwork, grid: EvalGrid = EvalGrid(),
                    settings: ddp.DdpSettings | None = None, workers: int = 1) -> EvalResult:
    """Solve from every grid point, warm-started by a rollout of ``actor``."""
    settings = settings or ddp.DdpSettings()
    x0 = grid.initial_states(task)
    _, U = policy_rollout(task, actor, x0, 0)
    return _evaluate(task, x0, U, settings, workers)


def baseline_ics(task: TaskModel, grid: EvalGrid = EvalGrid(),
                 settings: ddp.DdpSettings | None = None, workers: int = 1) -> EvalResult:
    """Same protocol with the constant-state, zero-control warm start."""
    settings = settings or ddp.DdpSettings()
    x0 = grid.initial_states(task)
    U = np.zeros((len(x0), task.T, task.m))
    return _evaluate(task, x0, U, settings, workers)


def aggregate_runs(curves):
    """Pointwise median and quartiles across runs; ``curves`` is (runs, checkpoints)."""
    curves = [np.asarray(c, dtype=float) for c in curves]
    if not curves:
        raise ValueError("no curves to aggregate")
    if len({c.shape for c in curves}) != 1:
        raise ValueError("curves must have equal lengths")
    a = np.stack(curves)
    q1, med, q3 = np.quantile(a, [0.25, 0.5, 0.75], axis=0)
    return {"median": med, "q1": q1, "q3": q3}


def write_eval_csv(path, policy: EvalResult, ics: EvalResult, task: TaskModel):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x0", "y0", "heading", "cost_policy", "cost_ics", "solver_status"])
        for i, x in enumerate(policy.x0):
            heading = x[2] if task.kind == DUBINS else 0.0
            status = "ok" if policy.ok[i] and ics.ok[i] else (
                "policy_failed" if not policy.ok[i] else "ics_failed")
            y = x[1] if task.n > 1 else 0.0
            w.writerow([repr(float(x[0])), repr(float(y)), repr(float(heading)),
                        repr(float(policy.costs[i])), repr(float(ics.costs[i])), status])


def write_curve_csv(path, episodes, mean_costs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episodes_done", "mean_cost"])
        for e, c in zip(episodes, mean_costs):
            w.writerow([int(e), repr(float(c))])


# --------------------------------------------------------------------------
# activation comparison

@dataclass
class ComparisonResult:
    heldout_grad_loss: dict      # activation -> held-out gradient-loss term after training
    heldout_value_loss: dict
    heatmaps: dict               # (activation, updates) -> array of rows (x, y, t, V)


def comparison_dataset(task, cfg: TrainerConfig, seed: int, episodes: int, workers=1,
                       offset: int = 0):
    """Buffer filled from ICS-warm-started solves; identical for every activation."""
    cfg = replace(cfg, switch_episode=10 ** 12)
    trajs = generate_episodes(task, None, range(offset, offset + episodes), seed, cfg, workers)
    buf = ReplayBuffer(task.n, max(cfg.buffer_capacity, sum(t.horizon + 1 for t in trajs)))
    for t in trajs:
        buf.insert_trajectory(t, cfg.L, task.T)
    return buf


def heatmap_grid(task, mesh=0.5, t=0):
    xs = np.arange(-15.0, 15.0 + 1e-9, mesh)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    aug = np.zeros((len(pts), task.n + 1))
    aug[:, : min(2, task.n)] = pts[:, : min(2, task.n)]
    aug[:, -1] = t
    return aug


def compare_activations(task: TaskModel, cfg: TrainerConfig, seed: int = 0,
                        activations=("relu", "elu", "sine"), checkpoints=(1000, 5000, 10000),
                        train_episodes: int = 200, heldout_episodes: int = 50,
                        out_dir=None, workers: int = 1, heatmap_mesh: float = 0.5,
                        heatmap_time: int = 0) -> ComparisonResult:
    """Fit one critic per activation on the same transitions; dump value surfaces."""
    train_buf = comparison_dataset(task, cfg, seed, train_episodes, workers)
    held = comparison_dataset(task, cfg, seed, heldout_episodes, workers,
                              offset=train_episodes).contents()
    norm = input_normalizer(task)
    grid = heatmap_grid(task, heatmap_mesh, heatmap_time)
    grad_loss, value_loss, heatmaps = {}, {}, {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for act in activations:
        init_rng = seeding.substream(seed, seeding.COMPARISON, 0)
        critic = make_mlp([task.n + 1, *cfg.critic_hidden, 1], act, init_rng,
                          omega_first=cfg.omega_first, omega_hidden=cfg.omega_hidden)
        learner = Learner(task, cfg, None, critic, critic.copy())
        sample_rng = seeding.substream(seed, seeding.COMPARISON, 1)
        done = 0
        for stop in sorted(checkpoints):
            while done < stop:
                done += len(update_cycle(learner, train_buf, 0, sample_rng, stop - done,
                                         train_actor=False))
            values = critic.forward(norm(grid))[:, 0]
            rows = np.column_stack([grid[:, 0], grid[:, 1] if task.n > 1 else 0 * grid[:, 0],
                                    grid[:, -1], values])
            heatmaps[(act, stop)] = rows
            if out_dir is not None:
                _write_heatmap(os.path.join(out_dir, f"heatmap_{act}_{stop}.csv"), rows)
        pred = critic.input_gradient(norm(held.states))[:, 0, : task.n] / norm.scale[: task.n]
        grad_loss[act] = float(np.mean(np.sum((logsym(pred) - logsym(held.value_grads)) ** 2,
                                              axis=1)))
        targets = learner.critic_targets(held)
        value_loss[act] = float(np.mean((critic.forward(norm(held.states))[:, 0] - targets) ** 2))
    return ComparisonResult(grad_loss, value_loss, heatmaps)


def _write_heatmap(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "t", "V"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
