"""Benchmark systems and the obstacle-avoidance running cost.

Every system is a planar point whose first two state components are the
end-effector position.  Dynamics are explicit-Euler discretizations, so the
Jacobians below are exact.  All public functions accept either a single
state/control or a batch with arbitrary leading dimensions.

State layouts::

    single_integrator_1d  [x]                 control [v_x]
    single_integrator     [x, y]              control [v_x, v_y]
    double_integrator     [x, y, v_x, v_y]    control [a_x, a_y]
    dubins                [x, y, th, v, a]    control [omega, jerk]

The time index of the augmented state is kept outside these arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

SINGLE_1D = 0
SINGLE = 1
DOUBLE = 2
DUBINS = 3

KINDS = {
    "single_integrator_1d": (SINGLE_1D, 1, 1),
    "single_integrator": (SINGLE, 2, 2),
    "double_integrator": (DOUBLE, 4, 2),
    "dubins": (DUBINS, 5, 2),
}


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned ellipse; ``a`` and ``b`` are full axis lengths in metres."""

    x: float
    y: float
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"obstacle axes must be positive, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class CostParams:
    w_d: float = 1e-3
    w_p: float = 5.0
    w_ob: float = 10.0
    w_u: float = 1e-2
    alpha1: float = 50.0
    alpha2: float = 50.0
    c2: float = 1e-4
    c3: float = 1e-4
    c4: float = 0.0
    obstacles: tuple[Obstacle, ...] = ()

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise ValueError("softmax sharpness alpha1, alpha2 must be positive")
        for name in ("w_d", "w_p", "w_ob", "w_u"):
            if getattr(self, name) < 0:
                raise ValueError(f"weight {name} must be nonnegative")
        if self.c2 < 0 or self.c3 < 0:
            raise ValueError("c2 and c3 must be nonnegative")


# C-shaped trap opening away from the goal: two horizontal bars and a cap at x=4.
DEFAULT_OBSTACLES = (
    Obstacle(8.0, 3.0, 9.0, 1.5),
    Obstacle(8.0, -3.0, 9.0, 1.5),
    Obstacle(4.0, 0.0, 1.5, 7.5),
)


@dataclass(frozen=True, eq=False)
class TaskModel:
    """One benchmark problem: dynamics, horizon and cost.

    ``init_low``/``init_high`` bound the uniform initial-state distribution used
    for training episodes, and ``scale`` is the per-component half-range used to
    normalize network inputs.
    """

    name: str
    dt: float
    T: int
    u_max: np.ndarray
    goal: np.ndarray
    cost: CostParams
    init_low: np.ndarray
    init_high: np.ndarray
    scale: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown task {self.name!r}; expected one of {sorted(KINDS)}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        n, m = self.n, self.m
        u_max = np.asarray(self.u_max, dtype=float).reshape(-1)
        if u_max.shape != (m,) or not np.all(u_max > 0):
            raise ValueError(f"u_max must have {m} positive entries")
        goal = np.asarray(self.goal, dtype=float).reshape(-1)
        if goal.shape != (2,):
            raise ValueError("goal must be a planar point")
        low = np.asarray(self.init_low, dtype=float).reshape(-1)
        high = np.asarray(self.init_high, dtype=float).reshape(-1)
        if low.shape != (n,) or high.shape != (n,) or np.any(high < low):
            raise ValueError(f"init bounds must be {n}-vectors with low <= high")
        scale = self.scale
        if scale is None:
            scale = np.maximum(np.maximum(np.abs(low), np.abs(high)), 1.0)
        scale = np.asarray(scale, dtype=float).reshape(-1)
        if scale.shape != (n,) or not np.all(scale > 0):
            raise ValueError(f"scale must have {n} positive entries")
        for attr, val in (("u_max", u_max), ("goal", goal), ("init_low", low),
                          ("init_high", high), ("scale", scale)):
            val.setflags(write=False)
            object.__setattr__(self, attr, val)

    @property
    def kind(self) -> int:
        return KINDS[self.name][0]

    @property
    def n(self) -> int:
        return KINDS[self.name][1]

    @property
    def m(self) -> int:
        return KINDS[self.name][2]

    def end_effector(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == SINGLE_1D:
            return np.stack([x[..., 0], np.zeros_like(x[..., 0])], axis=-1)
        return x[..., :2]


@dataclass
class CostDerivatives:
    l: np.ndarray
    l_x: np.ndarray
    l_u: np.ndarray
    l_xx: np.ndarray
    l_uu: np.ndarray
    l_ux: np.ndarray


def make_task(name, *, dt=0.05, T=200, u_max=None, goal=(-7.0, 0.0), cost=None,
              init_low=None, init_high=None, scale=None, v_range=2.0):
    """Build a task with the default workspace of +/-15 m."""
    if name not in KINDS:
        raise ValueError(f"unknown task {name!r}; expected one of {sorted(KINDS)}")
    if u_max is None:
        u_max = {SINGLE_1D: [2.0], SINGLE: [2.0, 2.0], DOUBLE: [2.0, 2.0],
                 DUBINS: [2.0, 5.0]}[KINDS[name][0]]
    if cost is None:
        cost = CostParams(obstacles=DEFAULT_OBSTACLES)
    if init_low is None or init_high is None:
        lo, hi = _default_bounds(name, v_range)
        init_low = lo if init_low is None else init_low
        init_high = hi if init_high is None else init_high
    if scale is None:
        scale = _default_scale(name, v_range)
    return TaskModel(name=name, dt=dt, T=T, u_max=np.asarray(u_max, float),
                     goal=np.asarray(goal, float), cost=cost,
                     init_low=np.asarray(init_low, float),
                     init_high=np.asarray(init_high, float), scale=scale)


def _default_bounds(name, v_range):
    w = 15.0
    if name == "single_integrator_1d":
        return [-w], [w]
    if name == "single_integrator":
        return [-w, -w], [w, w]
    if name == "double_integrator":
        return [-w, -w, -v_range, -v_range], [w, w, v_range, v_range]
    return [-w, -w, -np.pi, -v_range, -1.0], [w, w, np.pi, v_range, 1.0]


def _default_scale(name, v_range):
    w = 15.0
    return {
        "single_integrator_1d": [w],
        "single_integrator": [w, w],
        "double_integrator": [w, w, 2 * v_range + 1, 2 * v_range + 1],
        "dubins": [w, w, np.pi, 2 * v_range + 1, 5.0],
    }[name]


# --------------------------------------------------------------------------
# dynamics

def _check(task, x, u=None):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (task.n,):
        raise ValueError(f"state must have trailing dimension {task.n}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("state contains non-finite values")
    if u is None:
        return x, None
    u = np.asarray(u, dtype=float)
    if u.shape[-1:] != (task.m,):
        raise ValueError(f"control must have trailing dimension {task.m}, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("control contains non-finite values")
    return x, u


def step(task: TaskModel, x, u):
    """Explicit-Euler successor state ``f(x, u)``."""
    x, u = _check(task, x, u)
    return _step(task.kind, task.dt, x, u)


def _step(kind, dt, x, u):
    if kind in (SINGLE_1D, SINGLE):
        return x + dt * u
    out = np.empty(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + x.shape[-1:])
    if kind == DOUBLE:
        out[..., :2] = x[..., :2] + dt * x[..., 2:]
        out[..., 2:] = x[..., 2:] + dt * u
        return out
    th, v, a = x[..., 2], x[..., 3], x[..., 4]
    out[..., 0] = x[..., 0] + dt * v * np.cos(th)
    out[..., 1] = x[..., 1] + dt * v * np.sin(th)
    out[..., 2] = th + dt * u[..., 0]
    out[..., 3] = v + dt * a
    out[..., 4] = a + dt * u[..., 1]
    return out


def dynamics_jacobians(task: TaskModel, x, u):
    """Return ``(f_x, f_u)`` with shapes ``(..., n, n)`` and ``(..., n, m)``."""
    x, u = _check(task, x, u)
    return _jacobians(task.kind, task.dt, x, u.shape[:-1])


def _jacobians(kind, dt, x, batch):
    n = x.shape[-1]
    m = 1 if kind == SINGLE_1D else 2
    fx = np.zeros(batch + (n, n))
    fu = np.zeros(batch + (n, m))
    idx = np.arange(n)
    fx[..., idx, idx] = 1.0
    if kind in (SINGLE_1D, SINGLE):
        fu[..., idx, idx] = dt
    elif kind == DOUBLE:
        fx[..., 0, 2] = dt
        fx[..., 1, 3] = dt
        fu[..., 2, 0] = dt
        fu[..., 3, 1] = dt
    else:
        th, v = x[..., 2], x[..., 3]
        c, s = np.cos(th), np.sin(th)
        fx[..., 0, 2] = -dt * v * s
        fx[..., 0, 3] = dt * c
        fx[..., 1, 2] = dt * v * c
        fx[..., 1, 3] = dt * s
        fx[..., 3, 4] = dt
        fu[..., 2, 0] = dt
        fu[..., 4, 1] = dt
    return fx, fu


@njit(cache=True)
def euler_step_into(kind, dt, x, u, out):
    """Scalar-path Euler step used inside compiled rollouts."""
    if kind == SINGLE_1D or kind == SINGLE:
        for i in range(x.shape[0]):
            out[i] = x[i] + dt * u[i]
    elif kind == DOUBLE:
        out[0] = x[0] + dt * x[2]
        out[1] = x[1] + dt * x[3]
        out[2] = x[2] + dt * u[0]
        out[3] = x[3] + dt * u[1]
    else:
        th = x[2]
        v = x[3]
        out[0] = x[0] + dt * v * np.cos(th)
        out[1] = x[1] + dt * v * np.sin(th)
        out[2] = th + dt * u[0]
        out[3] = v + dt * x[4]
        out[4] = x[4] + dt * u[1]


# --------------------------------------------------------------------------
# cost

def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    # exp of a nonpositive argument only, to stay finite for large |z|
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _state_terms(task, p, order):
    """Sum of l1 + l2 + l3 over planar positions ``p`` (..., 2).

    ``order`` selects how many derivatives to return (0, 1 or 2).
    """
    cp = task.cost
    d = p - task.goal
    dx, dy = d[..., 0], d[..., 1]
    value = cp.w_d * (dx * dx + dy * dy)

    rx = np.sqrt(dx * dx + cp.c2)
    ry = np.sqrt(dy * dy + cp.c3)
    s = rx + ry + cp.c4
    z = -cp.alpha1 * s
    value = value - cp.w_p / cp.alpha1 * _softplus(z)

    obs = cp.obstacles
    if obs:
        ox = np.array([o.x for o in obs])
        oy = np.array([o.y for o in obs])
        ia2 = 1.0 / (np.array([o.a for o in obs]) / 2.0) ** 2
        ib2 = 1.0 / (np.array([o.b for o in obs]) / 2.0) ** 2
        ex = p[..., 0, None] - ox
        ey = p[..., 1, None] - oy
        e = ex * ex * ia2 + ey * ey * ib2 - 1.0
        ze = -cp.alpha2 * e
        value = value + cp.w_ob / cp.alpha2 * _softplus(ze).sum(axis=-1)
    if order == 0:
        return value, None, None

    grad = np.empty(p.shape)
    hess = np.zeros(p.shape + (2,))
    grad[..., 0] = 2 * cp.w_d * dx
    grad[..., 1] = 2 * cp.w_d * dy
    hess[..., 0, 0] = 2 * cp.w_d
    hess[..., 1, 1] = 2 * cp.w_d

    # l2 = g(s): g' = w_p * sig(z), g'' = -w_p * alpha1 * sig(z) * (1 - sig(z))
    sig = _sigmoid(z)
    g1 = cp.w_p * sig
    g2 = -cp.w_p * cp.alpha1 * sig * (1.0 - sig)
    sx = dx / rx
    sy = dy / ry
    grad[..., 0] += g1 * sx
    grad[..., 1] += g1 * sy
    hess[..., 0, 0] += g2 * sx * sx + g1 * cp.c2 / rx ** 3
    hess[..., 1, 1] += g2 * sy * sy + g1 * cp.c3 / ry ** 3
    hess[..., 0, 1] += g2 * sx * sy
    hess[..., 1, 0] += g2 * sx * sy

    if obs:
        # l3_i = h(e_i): h' = -w_ob * sig(ze), h'' = w_ob * alpha2 * sig * (1 - sig)
        sig = _sigmoid(ze)
        h1 = -cp.w_ob * sig
        h2 = cp.w_ob * cp.alpha2 * sig * (1.0 - sig)
        gx = 2 * ex * ia2
        gy = 2 * ey * ib2
        grad[..., 0] += (h1 * gx).sum(axis=-1)
        grad[..., 1] += (h1 * gy).sum(axis=-1)
        hess[..., 0, 0] += (h2 * gx * gx + h1 * 2 * ia2).sum(axis=-1)
        hess[..., 1, 1] += (h2 * gy * gy + h1 * 2 * ib2).sum(axis=-1)
        cross = (h2 * gx * gy).sum(axis=-1)
        hess[..., 0, 1] += cross
        hess[..., 1, 0] += cross
    return value, grad, hess


def _control_terms(task, u, order):
    cp = task.cost
    inv2 = 1.0 / task.u_max ** 2
    r = (u * u * inv2).sum(axis=-1)
    value = cp.w_u * (u * u).sum(axis=-1) + r ** 5
    if order == 0:
        return value, None, None
    m = u.shape[-1]
    dr = 2 * u * inv2
    grad = 2 * cp.w_u * u + 5 * r[..., None] ** 4 * dr
    hess = 20 * r[..., None, None] ** 3 * dr[..., :, None] * dr[..., None, :]
    hess = hess + (2 * cp.w_u + 5 * r[..., None] ** 4 * 2 * inv2)[..., None] * np.eye(m)
    return value, grad, hess


def running_cost(task: TaskModel, x, u):
    """l1 + l2 + l3 + l4 + l5 evaluated at ``(x, u)``."""
    x, u = _check(task, x, u)
    return _running_cost(task, x, u)


def _running_cost(task, x, u):
    return _state_terms(task, task.end_effector(x), 0)[0] + _control_terms(task, u, 0)[0]


def terminal_cost(task: TaskModel, x):
    """Running cost without the control terms."""
    x, _ = _check(task, x)
    return _state_terms(task, task.end_effector(x), 0)[0]


def cost_derivatives(task: TaskModel, x, u=None, terminal=False) -> CostDerivatives:
    """Analytic value, gradient and Hessian blocks of the running or terminal cost."""
    x, _ = _check(task, x)
    if u is None:
        if not terminal:
            raise ValueError("running-cost derivatives need a control")
        u = np.zeros(x.shape[:-1] + (task.m,))
    else:
        _, u = _check(task, x, u)
    return _cost_derivatives(task, x, u, terminal)


def _cost_derivatives(task, x, u, terminal):
    n, m = task.n, task.m
    batch = x.shape[:-1]
    val, gp, hp = _state_terms(task, task.end_effector(x), 2)
    k = 1 if task.kind == SINGLE_1D else 2
    l_x = np.zeros(batch + (n,))
    l_xx = np.zeros(batch + (n, n))
    l_x[..., :k] = gp[..., :k]
    l_xx[..., :k, :k] = hp[..., :k, :k]
    if terminal:
        l_u = np.zeros(batch + (m,))
        l_uu = np.zeros(batch + (m, m))
    else:
        cv, l_u, l_uu = _control_terms(task, u, 2)
        val = val + cv
    return CostDerivatives(l=val, l_x=l_x, l_u=l_u, l_xx=l_xx, l_uu=l_uu,
                           l_ux=np.zeros(batch + (m, n)))
