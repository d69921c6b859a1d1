"""Differential dynamic programming for the penalty-form control problem.

Single-shooting DDP with Gauss-Newton dynamics expansions (no second-order
dynamics tensors), Levenberg-Marquardt damping on ``Q_uu`` and a backtracking
Armijo line search.  Besides the optimal trajectory, the solver returns the
value-function gradient ``V_x`` at every knot, taken from one last backward
pass at the accepted solution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .task import (TaskModel, _cost_derivatives, _jacobians, _running_cost,
                   _state_terms, euler_step_into)


class BackwardPassError(RuntimeError):
    """``Q_uu`` was not positive definite at the requested regularization."""


@dataclass(frozen=True)
class DdpSettings:
    max_iters: int = 100
    cost_tol: float = 1e-6
    grad_tol: float = 1e-6
    reg_init: float = 1e-6
    reg_min: float = 1e-8
    reg_max: float = 1e10
    reg_factor: float = 10.0
    line_search_steps: int = 10
    line_search_factor: float = 0.5
    armijo: float = 1e-4

    def __post_init__(self):
        for name in ("max_iters", "cost_tol", "grad_tol", "reg_init", "reg_min",
                     "reg_max", "reg_factor", "line_search_steps", "line_search_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"DdpSettings.{name} must be positive")
        if not self.reg_min <= self.reg_init <= self.reg_max:
            raise ValueError("need reg_min <= reg_init <= reg_max")
        if not self.reg_factor > 1 or not 0 < self.line_search_factor < 1:
            raise ValueError("reg_factor must exceed 1 and line_search_factor lie in (0, 1)")


@dataclass
class Trajectory:
    """Solution of one control problem started at time index ``t0``.

    ``costs[j]`` is the stage cost at time ``t0 + j``; the last entry is the
    terminal cost.  ``Vx[j]`` is the value gradient with respect to the
    physical state (the time derivative is not available from DDP).
    """

    X: np.ndarray
    U: np.ndarray
    costs: np.ndarray
    Vx: np.ndarray
    t0: int = 0
    status: str = "converged"
    iterations: int = 0
    trace: list = field(default_factory=list, repr=False)

    @property
    def horizon(self) -> int:
        return self.U.shape[0]

    @property
    def cost(self) -> float:
        return float(self.costs.sum())

    @property
    def ok(self) -> bool:
        return self.status != "failed"

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "cost", "regularization", "step_length"])
            w.writerows(self.trace)


# --------------------------------------------------------------------------
# compiled kernels

@njit(cache=True)
def _cholesky_solve(A, B, out):
    """Solve ``A out = B`` for SPD ``A``; return False if ``A`` is not PD."""
    m = A.shape[0]
    L = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1):
            s = A[i, j]
            for p in range(j):
                s -= L[i, p] * L[j, p]
            if i == j:
                if not s > 0.0:
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    for c in range(B.shape[1]):
        y = np.empty(m)
        for i in range(m):
            s = B[i, c]
            for p in range(i):
                s -= L[i, p] * y[p]
            y[i] = s / L[i, i]
        for i in range(m - 1, -1, -1):
            s = y[i]
            for p in range(i + 1, m):
                s -= L[p, i] * out[p, c]
            out[i, c] = s / L[i, i]
    return True


@njit(cache=True)
def _backward_kernel(fx, fu, lx, lu, lxx, luu, lux, mu, k, K, Vx, Vxx):
    """Riccati-like sweep.  Returns (ok, dv1, dv2, max |Q_u|)."""
    h = fu.shape[0]
    n = fu.shape[1]
    m = fu.shape[2]
    Vx[h] = lx[h]
    Vxx[h] = lxx[h]
    dv1 = 0.0
    dv2 = 0.0
    qu_max = 0.0
    VA = np.empty((n, n))
    VB = np.empty((n, m))
    Qx = np.empty(n)
    Qu = np.empty(m)
    Qxx = np.empty((n, n))
    Quu = np.empty((m, m))
    Qux = np.empty((m, n))
    Qreg = np.empty((m, m))
    rhs = np.empty((m, n + 1))
    sol = np.empty((m, n + 1))
    for t in range(h - 1, -1, -1):
        A = fx[t]
        B = fu[t]
        Vp = Vx[t + 1]
        Vpp = Vxx[t + 1]
        for i in range(n):
            for j in range(n):
                s = 0.0
                for p in range(n):
                    s += Vpp[i, p] * A[p, j]
                VA[i, j] = s
            for j in range(m):
                s = 0.0
                for p in range(n):
                    s += Vpp[i, p] * B[p, j]
                VB[i, j] = s
        for i in range(n):
            s = lx[t, i]
            for p in range(n):
                s += A[p, i] * Vp[p]
            Qx[i] = s
            for j in range(n):
                s = lxx[t, i, j]
                for p in range(n):
                    s += A[p, i] * VA[p, j]
                Qxx[i, j] = s
        for i in range(m):
            s = lu[t, i]
            for p in range(n):
                s += B[p, i] * Vp[p]
            Qu[i] = s
            if abs(s) > qu_max:
                qu_max = abs(s)
            for j in range(m):
                s = luu[t, i, j]
                for p in range(n):
                    s += B[p, i] * VB[p, j]
                Quu[i, j] = s
            for j in range(n):
                s = lux[t, i, j]
                for p in range(n):
                    s += B[p, i] * VA[p, j]
                Qux[i, j] = s
        for i in range(m):
            for j in range(i + 1):
                s = 0.5 * (Quu[i, j] + Quu[j, i])
                Quu[i, j] = s
                Quu[j, i] = s
        for i in range(m):
            for j in range(m):
                Qreg[i, j] = Quu[i, j]
            Qreg[i, i] += mu
            rhs[i, 0] = -Qu[i]
            for j in range(n):
                rhs[i, j + 1] = -Qux[i, j]
        if not _cholesky_solve(Qreg, rhs, sol):
            return False, dv1, dv2, qu_max
        for i in range(m):
            k[t, i] = sol[i, 0]
            for j in range(n):
                K[t, i, j] = sol[i, j + 1]
        kt = k[t]
        Kt = K[t]
        # Quu k + Qu and Quu K + Qux, reused in both value updates
        Hk = np.empty(m)
        HK = np.empty((m, n))
        for i in range(m):
            s = Qu[i]
            for p in range(m):
                s += Quu[i, p] * kt[p]
            Hk[i] = s
            dv1 += kt[i] * Qu[i]
            for j in range(n):
                s = Qux[i, j]
                for p in range(m):
                    s += Quu[i, p] * Kt[p, j]
                HK[i, j] = s
        for i in range(m):
            s = 0.0
            for p in range(m):
                s += Quu[i, p] * kt[p]
            dv2 += kt[i] * s
        for i in range(n):
            s = Qx[i]
            for p in range(m):
                s += Kt[p, i] * Hk[p] + Qux[p, i] * kt[p]
            Vx[t, i] = s
            for j in range(n):
                s = Qxx[i, j]
                for p in range(m):
                    s += Kt[p, i] * HK[p, j] + Qux[p, i] * Kt[p, j]
                Vxx[t, i, j] = s
        for i in range(n):
            for j in range(i):
                s = 0.5 * (Vxx[t, i, j] + Vxx[t, j, i])
                Vxx[t, i, j] = s
                Vxx[t, j, i] = s
    return True, dv1, dv2, qu_max


@njit(cache=True)
def _forward_kernel(kind, dt, X, U, k, K, alpha, Xn, Un):
    h = U.shape[0]
    n = X.shape[1]
    m = U.shape[1]
    Xn[0] = X[0]
    dx = np.empty(n)
    for t in range(h):
        for i in range(n):
            dx[i] = Xn[t, i] - X[t, i]
        for i in range(m):
            s = U[t, i] + alpha * k[t, i]
            for j in range(n):
                s += K[t, i, j] * dx[j]
            Un[t, i] = s
        euler_step_into(kind, dt, Xn[t], Un[t], Xn[t + 1])
        for i in range(n):
            if not np.isfinite(Xn[t + 1, i]):
                return False
    return True


# --------------------------------------------------------------------------
# python-level passes

def rollout(task: TaskModel, x0, U):
    """States obtained by applying ``U`` open loop from ``x0``."""
    U = np.ascontiguousarray(U, dtype=float)
    h = U.shape[0]
    X = np.empty((h + 1, task.n))
    X[0] = x0
    zeros_k = np.zeros((h, task.m))
    zeros_K = np.zeros((h, task.m, task.n))
    Un = np.empty_like(U)
    _forward_kernel(task.kind, task.dt, np.repeat(X[:1], h + 1, axis=0), U,
                    zeros_k, zeros_K, 0.0, X, Un)
    return X


def stage_costs(task: TaskModel, X, U):
    """Per-step running costs followed by the terminal cost."""
    costs = np.empty(U.shape[0] + 1)
    costs[:-1] = _running_cost(task, X[:-1], U)
    costs[-1] = _state_terms(task, task.end_effector(X[-1]), 0)[0]
    return costs


def _expansions(task, X, U):
    h = U.shape[0]
    fx, fu = _jacobians(task.kind, task.dt, X[:-1], (h,))
    run = _cost_derivatives(task, X[:-1], U, False)
    term = _cost_derivatives(task, X[-1:], np.zeros((1, task.m)), True)
    lx = np.concatenate([run.l_x, term.l_x])
    lxx = np.concatenate([run.l_xx, term.l_xx])
    return fx, fu, lx, run.l_u, lxx, run.l_uu, run.l_ux


def _backward(task, X, U, mu, derivs=None):
    h = U.shape[0]
    n, m = task.n, task.m
    if derivs is None:
        derivs = _expansions(task, X, U)
    k = np.zeros((h, m))
    K = np.zeros((h, m, n))
    Vx = np.zeros((h + 1, n))
    Vxx = np.zeros((h + 1, n, n))
    ok, dv1, dv2, qu_max = _backward_kernel(*derivs, float(mu), k, K, Vx, Vxx)
    return ok, k, K, Vx, Vxx, dv1, dv2, qu_max


def backward_pass(task: TaskModel, X, U, mu: float = 0.0):
    """Gains ``(k, K)`` and value derivatives ``(Vx, Vxx)`` along a rollout.

    Raises :class:`BackwardPassError` if ``Q_uu + mu I`` is not positive
    definite at some step.
    """
    X = np.ascontiguousarray(X, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    if X.shape != (U.shape[0] + 1, task.n) or U.shape[1:] != (task.m,):
        raise ValueError(f"inconsistent trajectory shapes X{X.shape} U{U.shape}")
    ok, k, K, Vx, Vxx, *_ = _backward(task, X, U, mu)
    if not ok:
        raise BackwardPassError(f"Q_uu not positive definite at mu={mu:g}")
    return k, K, Vx, Vxx


def forward_pass(task: TaskModel, X, U, k, K, alpha: float):
    """Closed-loop line-search rollout ``u' = u + alpha k + K (x' - x)``.

    Returns ``(X', U', cost)``; the cost is ``inf`` if the rollout diverged.
    """
    if not 0 <= alpha <= 1:
        raise ValueError("step length must lie in [0, 1]")
    X = np.ascontiguousarray(X, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    Xn = np.empty_like(X)
    Un = np.empty_like(U)
    finite = _forward_kernel(task.kind, task.dt, X, U, np.ascontiguousarray(k, dtype=float),
                             np.ascontiguousarray(K, dtype=float), float(alpha), Xn, Un)
    if not finite:
        return Xn, Un, np.inf
    cost = stage_costs(task, Xn, Un).sum()
    return Xn, Un, cost if np.isfinite(cost) else np.inf


def _value_gradient(task, X, U, settings):
    mu = 0.0
    while True:
        ok, _, _, Vx, *_ = _backward(task, X, U, mu)
        if ok:
            return Vx
        mu = max(mu * settings.reg_factor, settings.reg_min)
        if mu > settings.reg_max:
            return None


def solve(task: TaskModel, x0, horizon: int | None = None, warm_start=None,
          settings: DdpSettings | None = None, t0: int = 0,
          record_trace: bool = False) -> Trajectory:
    """Minimize the task cost from ``x0`` over ``horizon`` steps.

    ``warm_start`` is an ``(X, U)`` pair.  The solver is single shooting, so
    only ``U`` shapes the initial guess; ``X`` is checked for shape only.  When
    omitted, controls start at zero.

    The returned trajectory has status ``converged`` (cost or gradient
    tolerance met), ``max_iters``, ``stalled`` (no step accepted even at the
    largest damping) or ``failed`` (no positive-definite ``Q_uu``).
    """
    settings = settings or DdpSettings()
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (task.n,) or not np.all(np.isfinite(x0)):
        raise ValueError(f"x0 must be a finite {task.n}-vector")
    if horizon is None:
        horizon = task.T - t0
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if warm_start is None:
        U = np.zeros((horizon, task.m))
    else:
        Xw, Uw = warm_start
        U = np.array(Uw, dtype=float)
        if U.shape != (horizon, task.m):
            raise ValueError(f"warm-start controls must have shape {(horizon, task.m)}")
        if Xw is not None and np.shape(Xw) != (horizon + 1, task.n):
            raise ValueError(f"warm-start states must have shape {(horizon + 1, task.n)}")

    X = rollout(task, x0, U)
    costs = stage_costs(task, X, U)
    J = costs.sum()
    if not np.isfinite(J):
        raise ValueError("warm start rolls out to a non-finite cost")
    trace = [(0, J, settings.reg_init, 0.0)] if record_trace else []
    mu = settings.reg_init
    status = "max_iters"
    it = 0
    while it < settings.max_iters:
        it += 1
        derivs = _expansions(task, X, U)
        while True:
            ok, k, K, _, _, dv1, dv2, qu_max = _backward(task, X, U, mu, derivs)
            if ok:
                break
            mu = max(mu * settings.reg_factor, settings.reg_min)
            if mu > settings.reg_max:
                break
        if not ok:
            status = "failed"
            break
        tol = settings.cost_tol * max(abs(J), 1.0)
        if qu_max < settings.grad_tol:
            status = "converged"
            break
        alpha = 1.0
        accepted = False
        for _ in range(settings.line_search_steps):
            Xn, Un, Jn = forward_pass(task, X, U, k, K, alpha)
            expected = alpha * dv1 + 0.5 * alpha * alpha * dv2
            if Jn < J and Jn - J <= settings.armijo * expected:
                accepted = True
                break
            alpha *= settings.line_search_factor
        if accepted:
            decrease = J - Jn
            X, U, J = Xn, Un, Jn
            mu = mu / settings.reg_factor
            if mu < settings.reg_min:
                mu = 0.0
            if record_trace:
                trace.append((it, J, mu, alpha))
            if decrease < tol:
                status = "converged"
                break
        else:
            # no representable improvement left
            if -(dv1 + 0.5 * dv2) < tol:
                status = "converged"
                break
            mu = max(mu * settings.reg_factor, settings.reg_min)
            if record_trace:
                trace.append((it, J, mu, 0.0))
            if mu > settings.reg_max:
                status = "stalled"
                break

    Vx = _value_gradient(task, X, U, settings)
    if Vx is None:
        status = "failed"
        Vx = np.full((horizon + 1, task.n), np.nan)
    return Trajectory(X=X, U=U, costs=stage_costs(task, X, U), Vx=Vx, t0=t0,
                      status=status, iterations=it, trace=trace)
