"""Finite-difference checks of every analytic derivative in the package.

Each suite returns the worst relative error it saw.  The relative error of an
analytic array ``a`` against a central-difference array ``b`` is
``max|a - b| / max(max|a|, max|b|)``, evaluated per probe point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import task as tk
from .net import (Normalizer, actor_loss_and_param_grad, make_mlp,
                  sobolev_loss_and_param_grad)

TOLERANCE = 1e-5


@dataclass
class SuiteResult:
    name: str
    max_rel_err: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tolerance)


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    if denom == 0.0:
        return 0.0
    return float(np.abs(a - b).max() / denom)


def central_diff(fun, x, eps=1e-6):
    """Jacobian of ``fun`` at ``x`` (output shape + input shape), steps scaled by |x|."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    out = np.empty(f0.shape + x.shape)
    for idx in np.ndindex(x.shape):
        h = eps * max(1.0, abs(x[idx]))
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        out[(...,) + idx] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2 * h)
    return out


def random_state(task, rng):
    x = rng.uniform(task.init_low, task.init_high)
    u = rng.uniform(-1.2, 1.2, size=task.m) * task.u_max
    return x, u


def check_dynamics(task, rng, points=100, corrupt=False):
    worst = 0.0
    for _ in range(points):
        x, u = random_state(task, rng)
        fx, fu = tk.dynamics_jacobians(task, x, u)
        if corrupt:
            fx = fx.copy()
            fx[0, 0] += 1e-3
        worst = max(worst, rel_err(fx, central_diff(lambda z: tk.step(task, z, u), x)))
        worst = max(worst, rel_err(fu, central_diff(lambda w: tk.step(task, x, w), u)))
    return worst


def check_cost(task, rng, points=100):
    worst = 0.0
    for i in range(points):
        x, u = random_state(task, rng)
        terminal = i % 4 == 3
        d = tk.cost_derivatives(task, x, u, terminal)
        if terminal:
            gx = central_diff(lambda z: tk.terminal_cost(task, z), x)
            hx = central_diff(lambda z: tk.cost_derivatives(task, z, u, True).l_x, x)
            worst = max(worst, rel_err(d.l_x, gx), rel_err(d.l_xx, hx))
            continue
        gx = central_diff(lambda z: tk.running_cost(task, z, u), x)
        gu = central_diff(lambda w: tk.running_cost(task, x, w), u)
        hx = central_diff(lambda z: tk.cost_derivatives(task, z, u).l_x, x)
        hu = central_diff(lambda w: tk.cost_derivatives(task, x, w).l_u, u)
        hux = central_diff(lambda z: tk.cost_derivatives(task, z, u).l_u, x)
        worst = max(worst, rel_err(d.l_x, gx), rel_err(d.l_u, gu), rel_err(d.l_xx, hx),
                    rel_err(d.l_uu, hu), rel_err(d.l_ux, hux))
    return worst


def check_input_gradient(activation, rng, trials=20):
    worst = 0.0
    for _ in range(trials):
        net = make_mlp([3, 8, 8, 2], activation, rng, omega_first=3.0)
        x = rng.uniform(-1, 1, size=3)
        fd = central_diff(lambda z: net.forward(z), x)
        worst = max(worst, rel_err(net.input_gradient(x), fd))
    return worst


def _param_fd(net, loss):
    out = []
    for p in net.params():
        g = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            h = 1e-6 * max(1.0, abs(old))
            p[idx] = old + h
            lp = loss()
            p[idx] = old - h
            lm = loss()
            p[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        out.append(g)
    return out


def _flat(arrs):
    return np.concatenate([np.ravel(a) for a in arrs])


def check_sobolev(activation, rng, batches=50, k_s=10.0, n=2):
    worst = 0.0
    for _ in range(batches):
        depth = int(rng.integers(1, 3))
        width = int(rng.integers(3, 9))
        net = make_mlp([n + 1] + [width] * depth + [1], activation, rng, omega_first=3.0)
        B = int(rng.integers(1, 9))
        x = rng.normal(size=(B, n + 1))
        v = rng.normal(size=B)
        vx = rng.normal(scale=3.0, size=(B, n))
        norm = Normalizer(rng.normal(size=n + 1), rng.uniform(0.5, 2.0, size=n + 1))
        ana = sobolev_loss_and_param_grad(net, x, v, vx, k_s, norm).grads
        fd = _param_fd(net, lambda: sobolev_loss_and_param_grad(net, x, v, vx, k_s, norm).loss)
        worst = max(worst, rel_err(_flat(ana), _flat(fd)))
    return worst


def check_actor(task, rng, trials=10):
    worst = 0.0
    d = task.n + 1
    for _ in range(trials):
        actor = make_mlp([d, 6, task.m], "elu", rng)
        critic = make_mlp([d, 6, 1], "sine", rng, omega_first=2.0)
        B = 4
        x = np.column_stack([rng.uniform(task.init_low, task.init_high, size=(B, task.n)),
                             rng.integers(0, task.T, size=B)])
        norm = Normalizer(np.zeros(d), np.concatenate([task.scale, [task.T]]))
        _, ana = actor_loss_and_param_grad(actor, critic, task, x, norm)
        fd = _param_fd(actor, lambda: actor_loss_and_param_grad(actor, critic, task, x, norm)[0])
        worst = max(worst, rel_err(_flat(ana), _flat(fd)))
    return worst


def run_all(seed=0, corrupt_jacobian=False, tasks=None, quick=False):
    """Run every suite once; returns a list of :class:`SuiteResult`."""
    rng = np.random.default_rng(seed)
    if tasks is None:
        tasks = [tk.make_task(name) for name in tk.KINDS]
    points = 20 if quick else 100
    results = []
    for task in tasks:
        results.append(SuiteResult(f"dynamics_jacobians[{task.name}]",
                                   check_dynamics(task, rng, points, corrupt_jacobian)))
        results.append(SuiteResult(f"cost_derivatives[{task.name}]", check_cost(task, rng, points)))
    for act in ("sine", "elu", "relu"):
        results.append(SuiteResult(f"input_gradient[{act}]", check_input_gradient(act, rng)))
    for act in ("sine", "elu", "relu"):
        results.append(SuiteResult(f"sobolev_param_grad[{act}]",
                                   check_sobolev(act, rng, 10 if quick else 50)))
    for task in tasks:
        results.append(SuiteResult(f"actor_param_grad[{task.name}]", check_actor(task, rng)))
    return results
