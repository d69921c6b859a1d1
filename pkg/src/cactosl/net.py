"""Small dense networks with value-and-gradient (Sobolev) training in numpy.

Layers compute ``h_l = phi_l(W_l h_{l-1} + b_l)`` with ``W_l`` stored as
``(d_out, d_in)``.  The sine activation is ``sin(omega * a)``.  All arrays are
float64 and every routine works on a batch of row vectors.

The Sobolev loss penalizes the mismatch between the network's input gradient
and a target gradient, so its parameter gradient needs the derivative of the
input-gradient sweep itself.  That is done here in closed form: the input
gradient is produced by a reverse sweep over stored pre-activations, and the
loss is differentiated by running reverse mode over that sweep and then over
the forward pass.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

ACTIVATION_TAGS = {"linear": 0, "relu": 1, "elu": 2, "sine": 3}
_TAG_NAMES = {v: k for k, v in ACTIVATION_TAGS.items()}
MAGIC = b"CSL1"


class CheckpointError(IOError):
    pass


def logsym(x):
    """Symmetric log squashing: ``sign(x) * log(1 + |x|)``."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.log1p(np.abs(x))


def _logsym_prime(x):
    return 1.0 / (1.0 + np.abs(x))


def _activate(tag, a, omega, order):
    """Activation value and its first ``order`` derivatives."""
    if tag == "linear":
        return a, np.ones_like(a), np.zeros_like(a)
    if tag == "relu":
        pos = a > 0
        return np.where(pos, a, 0.0), pos.astype(float), np.zeros_like(a)
    if tag == "elu":
        pos = a > 0
        e = np.exp(np.minimum(a, 0.0))
        return np.where(pos, a, e - 1.0), np.where(pos, 1.0, e), np.where(pos, 0.0, e)
    if tag == "sine":
        wa = omega * a
        s = np.sin(wa)
        if order == 0:
            return s, None, None
        c = np.cos(wa)
        return s, omega * c, -omega * omega * s
    raise ValueError(f"unknown activation {tag!r}")


@dataclass
class Normalizer:
    """Affine map ``z = (x - center) / scale`` applied before a network."""

    center: np.ndarray
    scale: np.ndarray

    def __call__(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    @classmethod
    def identity(cls, d):
        return cls(np.zeros(d), np.ones(d))


@dataclass(eq=False)
class MlpNetwork:
    weights: list
    biases: list
    activations: list
    omegas: list = field(default=None)

    def __post_init__(self):
        if self.omegas is None:
            self.omegas = [1.0] * len(self.weights)
        if not (len(self.weights) == len(self.biases) == len(self.activations) == len(self.omegas)):
            raise ValueError("per-layer lists must have equal length")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: bad shapes {W.shape}, {b.shape}")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input size does not match previous layer")
        for tag in self.activations:
            if tag not in ACTIVATION_TAGS:
                raise ValueError(f"unknown activation {tag!r}")

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def d_in(self):
        return self.weights[0].shape[1]

    @property
    def d_out(self):
        return self.weights[-1].shape[0]

    def params(self):
        """Flat list ``[W_0, b_0, W_1, b_1, ...]`` of the live arrays."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self):
        return MlpNetwork([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                          list(self.activations), list(self.omegas))

    def _as_batch(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.d_in,):
            raise ValueError(f"input must have trailing dimension {self.d_in}, got {x.shape}")
        return x

    def _forward_cache(self, z):
        hs, pre = [z], []
        for W, b, tag, om in zip(self.weights, self.biases, self.activations, self.omegas):
            a = hs[-1] @ W.T + b
            pre.append(a)
            hs.append(_activate(tag, a, om, 0)[0])
        return hs, pre

    def forward(self, x):
        x = self._as_batch(x)
        h = x
        for W, b, tag, om in zip(self.weights, self.biases, self.activations, self.omegas):
            h = _activate(tag, h @ W.T + b, om, 0)[0]
        return h

    __call__ = forward

    def _vjp(self, hs, pre, ybar):
        """Parameter gradients and input adjoint for output adjoint ``ybar``."""
        grads = [None] * (2 * len(self.weights))
        hbar = ybar
        for l in range(len(self.weights) - 1, -1, -1):
            d1 = _activate(self.activations[l], pre[l], self.omegas[l], 1)[1]
            abar = hbar * d1
            grads[2 * l] = abar.T @ hs[l]
            grads[2 * l + 1] = abar.sum(axis=0)
            hbar = abar @ self.weights[l]
        return grads, hbar

    def input_gradient(self, x):
        """Jacobian of the output wrt the input, shape ``(..., d_out, d_in)``."""
        x = self._as_batch(x)
        flat = x.reshape(-1, self.d_in)
        _, pre = self._forward_cache(flat)
        d1s = [_activate(t, a, om, 1)[1] for t, a, om in zip(self.activations, pre, self.omegas)]
        jac = np.empty((flat.shape[0], self.d_out, self.d_in))
        for o in range(self.d_out):
            g = np.zeros((flat.shape[0], self.d_out))
            g[:, o] = 1.0
            for l in range(len(self.weights) - 1, -1, -1):
                g = (g * d1s[l]) @ self.weights[l]
            jac[:, o, :] = g
        return jac.reshape(x.shape[:-1] + (self.d_out, self.d_in))


# --------------------------------------------------------------------------
# construction

def make_mlp(sizes, activation="relu", rng=None, omega_first=30.0, omega_hidden=1.0):
    """Dense network with ``activation`` on hidden layers and a linear output.

    Sine networks use the SIREN initialization; others use He/Glorot uniform.
    """
    rng = np.random.default_rng() if rng is None else rng
    weights, biases, acts, omegas = [], [], [], []
    n_layers = len(sizes) - 1
    for l in range(n_layers):
        d_in, d_out = sizes[l], sizes[l + 1]
        last = l == n_layers - 1
        act = "linear" if last else activation
        om = omega_first if (activation == "sine" and l == 0) else omega_hidden
        if activation == "sine":
            bound = 1.0 / d_in if l == 0 else np.sqrt(6.0 / d_in) / om
            b_bound = 1.0 / np.sqrt(d_in)
        elif activation in ("relu", "elu") and not last:
            bound = np.sqrt(6.0 / d_in)
            b_bound = 1.0 / np.sqrt(d_in)
        else:
            bound = np.sqrt(6.0 / (d_in + d_out))
            b_bound = 1.0 / np.sqrt(d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
        biases.append(rng.uniform(-b_bound, b_bound, size=d_out) if not last else np.zeros(d_out))
        acts.append(act)
        omegas.append(om if act == "sine" else 1.0)
    return MlpNetwork(weights, biases, acts, omegas)


# --------------------------------------------------------------------------
# losses

@dataclass
class SobolevTerms:
    loss: float
    value_loss: float
    grad_loss: float
    grads: list


def sobolev_loss_and_param_grad(net: MlpNetwork, x, v_target, vx_target, k_s: float,
                                norm: Normalizer | None = None) -> SobolevTerms:
    """Value-plus-gradient regression loss and its exact parameter gradient.

    ``loss = mean_i[(v_i - V(x_i))^2 + k_s * sum_j (logsym(vx_ij) - logsym(dV/dx_j))^2]``
    where the gradient term covers the first ``vx_target.shape[1]`` inputs only
    (the time channel is excluded).  Input gradients are taken in the units of
    ``x``; ``norm`` is the normalization applied before the network.
    """
    if k_s < 0:
        raise ValueError("k_s must be nonnegative")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v_target = np.asarray(v_target, dtype=float).reshape(-1)
    vx_target = np.atleast_2d(np.asarray(vx_target, dtype=float))
    B, n = vx_target.shape
    if B == 0 or x.shape[0] != B or v_target.shape[0] != B:
        raise ValueError("batch arrays must share a nonzero leading dimension")
    if net.d_out != 1:
        raise ValueError("Sobolev loss needs a scalar-output network")
    norm = norm or Normalizer.identity(net.d_in)
    z = norm(x)
    hs, pre = net._forward_cache(z)
    L = len(net.weights)
    derivs = [_activate(t, a, om, 2) for t, a, om in zip(net.activations, pre, net.omegas)]
    d1 = [d[1] for d in derivs]
    d2 = [d[2] for d in derivs]

    # reverse sweep for the input gradient: g[l] = dV/dh_l
    g = [None] * (L + 1)
    delta = [None] * L
    g[L] = np.ones((B, 1))
    for l in range(L - 1, -1, -1):
        delta[l] = g[l + 1] * d1[l]
        g[l] = delta[l] @ net.weights[l]
    pred = g[0][:, :n] / norm.scale[:n]

    y = hs[-1][:, 0]
    rv = y - v_target
    rg = logsym(pred) - logsym(vx_target)
    value_loss = float(np.mean(rv * rv))
    grad_loss = float(np.mean(np.sum(rg * rg, axis=1)))

    grads = [np.zeros_like(p) for p in net.params()]
    abar = [np.zeros_like(a) for a in pre]

    # adjoint of the input-gradient sweep
    gbar = np.zeros_like(g[0])
    gbar[:, :n] = (2.0 * k_s / B) * rg * _logsym_prime(pred) / norm.scale[:n]
    for l in range(L):
        grads[2 * l] += delta[l].T @ gbar
        dbar = gbar @ net.weights[l].T
        abar[l] += dbar * g[l + 1] * d2[l]
        gbar = dbar * d1[l]

    # adjoint of the forward pass
    hbar = (2.0 / B) * rv[:, None]
    for l in range(L - 1, -1, -1):
        a_adj = abar[l] + hbar * d1[l]
        grads[2 * l] += a_adj.T @ hs[l]
        grads[2 * l + 1] += a_adj.sum(axis=0)
        hbar = a_adj @ net.weights[l]

    return SobolevTerms(value_loss + k_s * grad_loss, value_loss, grad_loss, grads)


def actor_loss_and_param_grad(actor: MlpNetwork, critic: MlpNetwork, task, x_aug,
                              norm: Normalizer | None = None):
    """Mean of ``l(x, mu(x~)) + V([f(x, mu(x~)), t + 1])`` and its actor gradient.

    The time channel of the successor is treated as a constant.
    """
    from .task import _cost_derivatives, _jacobians, _step

    x_aug = np.atleast_2d(np.asarray(x_aug, dtype=float))
    n = task.n
    B = x_aug.shape[0]
    norm = norm or Normalizer.identity(actor.d_in)
    hs, pre = actor._forward_cache(norm(x_aug))
    u = hs[-1]
    x = x_aug[:, :n]
    x_next = _step(task.kind, task.dt, x, u)
    nxt = np.concatenate([x_next, x_aug[:, n:] + 1.0], axis=1)
    cd = _cost_derivatives(task, x, u, False)
    v_next = critic.forward(norm(nxt))[:, 0]
    loss = float(np.mean(cd.l + v_next))

    vgrad = critic.input_gradient(norm(nxt))[:, 0, :n] / norm.scale[:n]
    _, fu = _jacobians(task.kind, task.dt, x, (B,))
    ubar = (cd.l_u + np.einsum("bij,bi->bj", fu, vgrad)) / B
    grads, _ = actor._vjp(hs, pre, ubar)
    return loss, grads


# --------------------------------------------------------------------------
# optimization

@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default=None)
    v: list = field(default=None)


def adam_step(params, grads, state: AdamState):
    """In-place Adam update of ``params``."""
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(grads) != len(params):
        raise ValueError("gradient list does not match parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def polyak_update(target: MlpNetwork, source: MlpNetwork, tau: float):
    """``target <- tau * source + (1 - tau) * target`` elementwise, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if target.sizes != source.sizes:
        raise ValueError("architectures differ")
    for pt, ps in zip(target.params(), source.params()):
        pt *= 1.0 - tau
        pt += tau * ps
    return target


# --------------------------------------------------------------------------
# checkpoints

def to_bytes(net: MlpNetwork) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(net.weights))]
    for W, b, tag, om in zip(net.weights, net.biases, net.activations, net.omegas):
        d_out, d_in = W.shape
        parts.append(struct.pack("<IIBd", d_in, d_out, ACTIVATION_TAGS[tag], om))
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(data: bytes) -> MlpNetwork:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("not a CSL1 checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    (count,) = struct.unpack_from("<I", body, 4)
    off = 8
    weights, biases, acts, omegas = [], [], [], []
    try:
        for _ in range(count):
            d_in, d_out, tag, om = struct.unpack_from("<IIBd", body, off)
            off += struct.calcsize("<IIBd")
            W = np.frombuffer(body, "<f8", d_in * d_out, off).reshape(d_out, d_in)
            off += 8 * d_in * d_out
            b = np.frombuffer(body, "<f8", d_out, off)
            off += 8 * d_out
            weights.append(W.astype(float))
            biases.append(b.astype(float))
            acts.append(_TAG_NAMES[tag])
            omegas.append(om)
    except (struct.error, ValueError, KeyError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if off != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    return MlpNetwork(weights, biases, acts, omegas)


def save_checkpoint(net: MlpNetwork, path):
    with open(path, "wb") as fh:
        fh.write(to_bytes(net))


def load_checkpoint(path) -> MlpNetwork:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
