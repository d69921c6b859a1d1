"""Training loop: TO episodes feed a replay buffer, networks are updated in cycles.

Episodes are produced in batches of ``e_update``.  The first
``switch_episode`` episodes are warm-started with the initial state held
constant and zero controls; later ones with a rollout of the current actor.
After each full batch one update cycle runs ``K_list[cycle]`` critic/actor
steps.  Episode generation can be spread over worker processes; each episode
draws from its own random substream so results do not depend on the number
of workers.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ddp, seeding
from .buffer import ReplayBuffer
from .net import (AdamState, MlpNetwork, Normalizer, actor_loss_and_param_grad, adam_step,
                  make_mlp, polyak_update, save_checkpoint, sobolev_loss_and_param_grad)
from .task import TaskModel, _step

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["run_seed", "cycle", "update_idx", "critic_value_loss", "critic_grad_loss",
                  "actor_loss", "buffer_size", "episodes_done"]


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    M: int = 2000
    L: int = 50
    S: int = 128
    e_update: int = 200
    K_list: tuple = (1000, 2000, 4000, 8000, 15000)
    k_s: float = 1e3
    tau: float = 0.005
    update_budget: int = 50_000
    switch_episode: int | None = None
    critic_hidden: tuple = (64, 64, 64, 64)
    critic_activation: str = "sine"
    omega_first: float = 30.0
    omega_hidden: float = 1.0
    actor_hidden: tuple = (64, 64, 64)
    actor_activation: str = "relu"
    critic_lr: float = 5e-4
    actor_lr: float = 1e-4
    buffer_capacity: int = 2 ** 20
    max_episode_attempts: int = 20
    ddp: ddp.DdpSettings = field(default_factory=ddp.DdpSettings)

    def __post_init__(self):
        for name in ("L", "S", "e_update", "buffer_capacity", "max_episode_attempts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.M < 0 or self.update_budget < 0:
            raise ValueError("M and update_budget must be nonnegative")
        if not self.K_list or min(self.K_list) < 1:
            raise ValueError("K_list must be a nonempty list of positive counts")
        if self.k_s < 0:
            raise ValueError("k_s must be nonnegative")
        if not 0 <= self.tau <= 1:
            raise ValueError("tau must lie in [0, 1]")

    @property
    def switch(self) -> int:
        return self.e_update if self.switch_episode is None else self.switch_episode


def input_normalizer(task: TaskModel) -> Normalizer:
    """Maps physical state to roughly [-1, 1] and time 0..T to [-1, 1]."""
    half = task.T / 2.0
    center = np.concatenate([np.zeros(task.n), [half]])
    scale = np.concatenate([task.scale, [half]])
    return Normalizer(center, scale)


def init_networks(task: TaskModel, cfg: TrainerConfig, seed: int):
    rng = seeding.substream(seed, seeding.NETWORK_INIT)
    d = task.n + 1
    critic = make_mlp([d, *cfg.critic_hidden, 1], cfg.critic_activation, rng,
                      omega_first=cfg.omega_first, omega_hidden=cfg.omega_hidden)
    actor = make_mlp([d, *cfg.actor_hidden, task.m], cfg.actor_activation, rng,
                     omega_first=cfg.omega_first, omega_hidden=cfg.omega_hidden)
    return actor, critic, critic.copy()


def policy_rollout(task: TaskModel, actor: MlpNetwork, x0, t0: int, horizon: int | None = None):
    """Closed-loop rollout of the actor; ``x0`` may be a batch ``(B, n)``.

    Returns ``(X, U)`` with shapes ``(..., h+1, n)`` and ``(..., h, m)``.
    """
    norm = input_normalizer(task)
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    h = task.T - t0 if horizon is None else horizon
    B = x.shape[0]
    X = np.empty((B, h + 1, task.n))
    U = np.empty((B, h, task.m))
    X[:, 0] = x
    for j in range(h):
        aug = np.concatenate([X[:, j], np.full((B, 1), float(t0 + j))], axis=1)
        U[:, j] = actor.forward(norm(aug))
        X[:, j + 1] = _step(task.kind, task.dt, X[:, j], U[:, j])
    if np.ndim(x0) == 1:
        return X[0], U[0]
    return X, U


def generate_episode(task: TaskModel, actor: MlpNetwork, episode_idx: int, seed: int,
                     cfg: TrainerConfig) -> ddp.Trajectory:
    """Sample a start state and time, build the warm start, and solve.

    Failed solves are discarded and a fresh start is drawn from the same
    episode substream.
    """
    rng = seeding.substream(seed, seeding.EPISODE, episode_idx)
    for attempt in range(cfg.max_episode_attempts):
        x0 = rng.uniform(task.init_low, task.init_high)
        t0 = int(rng.integers(0, task.T))
        h = task.T - t0
        if episode_idx < cfg.switch:
            warm = (np.repeat(x0[None], h + 1, axis=0), np.zeros((h, task.m)))
        else:
            warm = policy_rollout(task, actor, x0, t0)
        try:
            traj = ddp.solve(task, x0, h, warm, cfg.ddp, t0=t0)
        except ValueError as exc:
            log.warning("episode %d attempt %d: bad warm start (%s)", episode_idx, attempt, exc)
            continue
        if traj.ok:
            return traj
        log.warning("episode %d attempt %d: DDP failed, resampling", episode_idx, attempt)
    raise NumericalError(f"episode {episode_idx}: no successful solve in "
                         f"{cfg.max_episode_attempts} attempts")


def _episode_job(args):
    return generate_episode(*args)


def generate_episodes(task, actor, indices, seed, cfg, workers=1):
    jobs = [(task, actor, i, seed, cfg) for i in indices]
    if workers <= 1 or len(jobs) <= 1:
        return [_episode_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_episode_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


@dataclass
class Learner:
    """Networks plus their optimizer states."""

    task: TaskModel
    cfg: TrainerConfig
    actor: MlpNetwork
    critic: MlpNetwork
    target: MlpNetwork
    critic_opt: AdamState = None
    actor_opt: AdamState = None

    def __post_init__(self):
        self.norm = input_normalizer(self.task)
        if self.critic_opt is None:
            self.critic_opt = AdamState(lr=self.cfg.critic_lr)
        if self.actor_opt is None:
            self.actor_opt = AdamState(lr=self.cfg.actor_lr)

    def critic_targets(self, batch):
        """``V_i`` for terminal transitions, ``V_i + V'(x~_{i+L})`` otherwise."""
        boot = self.target.forward(self.norm(batch.next_states))[:, 0]
        return np.where(batch.terminal, batch.partial_costs, batch.partial_costs + boot)

    def critic_step(self, batch):
        targets = self.critic_targets(batch)
        terms = sobolev_loss_and_param_grad(self.critic, batch.states, targets,
                                            batch.value_grads, self.cfg.k_s, self.norm)
        if not np.isfinite(terms.loss):
            raise NumericalError("non-finite critic loss")
        adam_step(self.critic.params(), terms.grads, self.critic_opt)
        return terms

    def actor_step(self, batch):
        live = batch.states[:, -1] < self.task.T
        if not np.any(live):
            return np.nan
        loss, grads = actor_loss_and_param_grad(self.actor, self.critic, self.task,
                                                batch.states[live], self.norm)
        if not np.isfinite(loss):
            raise NumericalError("non-finite actor loss")
        adam_step(self.actor.params(), grads, self.actor_opt)
        return loss


def update_cycle(learner: Learner, buffer: ReplayBuffer, cycle_idx: int, rng,
                 max_updates: int | None = None, train_actor: bool = True):
    """Run one block of critic/actor/target updates; return per-update losses."""
    cfg = learner.cfg
    K = cfg.K_list[min(cycle_idx, len(cfg.K_list) - 1)]
    if max_updates is not None:
        K = min(K, max_updates)
    rows = []
    for _ in range(K):
        batch = buffer.sample(cfg.S, rng)
        terms = learner.critic_step(batch)
        a_loss = learner.actor_step(batch) if train_actor else np.nan
        polyak_update(learner.target, learner.critic, cfg.tau)
        rows.append((terms.value_loss, terms.grad_loss, a_loss))
    return rows


@dataclass
class TrainResult:
    actor: MlpNetwork
    critic: MlpNetwork
    target: MlpNetwork
    metrics: list
    episodes_done: int
    updates_done: int
    cycles: int
    # (cycle, episodes_done, actor snapshot) after every update cycle
    snapshots: list = field(default_factory=list)


def train(task: TaskModel, cfg: TrainerConfig, seed: int = 0, out_dir=None, workers: int = 1,
          keep_snapshots: bool = False, buffer: ReplayBuffer | None = None) -> TrainResult:
    """Alternate batches of TO episodes with network update cycles."""
    actor, critic, target = init_networks(task, cfg, seed)
    learner = Learner(task, cfg, actor, critic, target)
    buffer = buffer or ReplayBuffer(task.n, cfg.buffer_capacity)
    sample_rng = seeding.substream(seed, seeding.MINIBATCH)
    metrics, snapshots = [], []
    episodes = updates = cycle = 0
    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        _write_metrics(out_dir, [], header=True)
        _persist(out_dir, learner, cycle)
    if keep_snapshots:
        snapshots.append((0, 0, actor.copy()))

    while episodes < cfg.M and updates < cfg.update_budget:
        count = min(cfg.e_update, cfg.M - episodes)
        trajs = generate_episodes(task, learner.actor, range(episodes, episodes + count),
                                  seed, cfg, workers)
        for traj in trajs:
            buffer.insert_trajectory(traj, cfg.L, task.T)
        episodes += count
        if count < cfg.e_update or len(buffer) < cfg.S:
            break
        rows = update_cycle(learner, buffer, cycle, sample_rng, cfg.update_budget - updates)
        new = [(seed, cycle, updates + i, v, g, a, len(buffer), episodes)
               for i, (v, g, a) in enumerate(rows)]
        updates += len(rows)
        metrics += new
        cycle += 1
        log.info("seed %d cycle %d: %d episodes, %d updates, critic %.4g/%.4g",
                 seed, cycle, episodes, updates, rows[-1][0], rows[-1][1])
        if out_dir is not None:
            _write_metrics(out_dir, new)
            _persist(out_dir, learner, cycle)
        if keep_snapshots:
            snapshots.append((cycle, episodes, learner.actor.copy()))

    return TrainResult(learner.actor, learner.critic, learner.target, metrics, episodes,
                       updates, cycle, snapshots)


def _write_metrics(out_dir, rows, header=False):
    path = os.path.join(out_dir, "metrics.csv")
    with open(path, "w" if header else "a", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r[0], r[1], r[2], repr(float(r[3])), repr(float(r[4])),
                        repr(float(r[5])), r[6], r[7]])


def _persist(out_dir, learner, cycle):
    save_checkpoint(learner.actor, os.path.join(out_dir, "actor.csl1"))
    save_checkpoint(learner.critic, os.path.join(out_dir, "critic.csl1"))
    save_checkpoint(learner.target, os.path.join(out_dir, "target_critic.csl1"))
    save_checkpoint(learner.actor, os.path.join(out_dir, "checkpoints",
                                                f"actor_cycle{cycle:04d}.csl1"))
