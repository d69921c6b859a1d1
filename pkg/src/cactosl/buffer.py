"""FIFO replay buffer of transitions extracted from solved trajectories."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

BUFFER_MAGIC = b"CSLB"


@dataclass
class Batch:
    states: np.ndarray       # (S, n+1) augmented states
    partial_costs: np.ndarray  # (S,)
    value_grads: np.ndarray  # (S, n)
    next_states: np.ndarray  # (S, n+1)
    terminal: np.ndarray     # (S,) bool

    def __len__(self):
        return self.partial_costs.shape[0]


class ReplayBuffer:
    """Ring buffer; the oldest transition is overwritten once ``capacity`` is reached."""

    def __init__(self, n: int, capacity: int = 2 ** 20):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.n = n
        self.capacity = capacity
        self._alloc = min(capacity, 4096)
        self._states = np.empty((self._alloc, n + 1))
        self._v = np.empty(self._alloc)
        self._vx = np.empty((self._alloc, n))
        self._next = np.empty((self._alloc, n + 1))
        self._term = np.empty(self._alloc, dtype=bool)
        self._head = 0      # next write slot once full
        self._size = 0

    def __len__(self):
        return self._size

    def _grow(self, need):
        new = min(self.capacity, max(need, 2 * self._alloc))
        for name in ("_states", "_v", "_vx", "_next", "_term"):
            old = getattr(self, name)
            arr = np.empty((new,) + old.shape[1:], dtype=old.dtype)
            arr[: self._size] = old[: self._size]
            setattr(self, name, arr)
        self._alloc = new

    def add(self, states, partial_costs, value_grads, next_states, terminal):
        k = len(partial_costs)
        if self._size + k > self._alloc and self._alloc < self.capacity:
            self._grow(self._size + k)
        for i in range(k):
            if self._size < self.capacity:
                j = self._size
                self._size += 1
            else:
                j = self._head
                self._head = (self._head + 1) % self.capacity
            self._states[j] = states[i]
            self._v[j] = partial_costs[i]
            self._vx[j] = value_grads[i]
            self._next[j] = next_states[i]
            self._term[j] = terminal[i]

    def insert_trajectory(self, traj, L: int, T: int) -> int:
        """Store one transition per knot of ``traj`` (times ``t0 .. T``).

        The partial cost-to-go sums stage costs ``j = t .. min(t+L, T)`` with
        the terminal cost at ``j = T``; the successor is the augmented state at
        ``min(t+L, T)`` and the transition is terminal when ``t + L > T``.
        """
        states, v, vx, nxt, term = transitions_from_trajectory(traj, L, T)
        self.add(states, v, vx, nxt, term)
        return len(v)

    def sample(self, size: int, rng: np.random.Generator) -> Batch:
        """Uniform minibatch, with replacement."""
        if self._size < size or size < 1:
            raise ValueError(f"cannot draw {size} samples from a buffer of {self._size}")
        idx = rng.integers(0, self._size, size=size)
        return Batch(self._states[idx], self._v[idx], self._vx[idx], self._next[idx],
                     self._term[idx])

    def contents(self) -> Batch:
        """All stored transitions, oldest first."""
        order = np.arange(self._size)
        if self._size == self.capacity:
            order = (order + self._head) % self.capacity
        return Batch(self._states[order], self._v[order], self._vx[order],
                     self._next[order], self._term[order])

    def dump(self, path):
        """Flat little-endian snapshot: header, one f64 record per transition, CRC32."""
        b = self.contents()
        rec = np.concatenate([b.states, b.partial_costs[:, None], b.value_grads,
                              b.next_states, b.terminal[:, None].astype(float)], axis=1)
        body = BUFFER_MAGIC + struct.pack("<IQ", self.n, len(b)) + rec.astype("<f8").tobytes()
        with open(path, "wb") as fh:
            fh.write(body + struct.pack("<I", zlib.crc32(body)))

    @classmethod
    def load(cls, path, capacity: int = 2 ** 20) -> "ReplayBuffer":
        with open(path, "rb") as fh:
            data = fh.read()
        body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
        if body[:4] != BUFFER_MAGIC or zlib.crc32(body) != crc:
            raise IOError("corrupt buffer snapshot")
        n, count = struct.unpack_from("<IQ", body, 4)
        rec = np.frombuffer(body, "<f8", offset=16).reshape(count, 3 * n + 4)
        buf = cls(n, max(capacity, count))
        buf.add(rec[:, : n + 1], rec[:, n + 1], rec[:, n + 2: 2 * n + 2],
                rec[:, 2 * n + 2: 3 * n + 3], rec[:, -1] > 0.5)
        return buf


def transitions_from_trajectory(traj, L: int, T: int):
    """Arrays ``(states, V, Vx, next_states, terminal)`` for every knot of ``traj``."""
    if L < 1:
        raise ValueError("lookahead L must be at least 1")
    t0 = traj.t0
    h = traj.horizon
    if t0 + h != T:
        raise ValueError(f"trajectory spans {t0}..{t0 + h}, expected to end at T={T}")
    times = np.arange(t0, T + 1)
    aug = np.concatenate([traj.X, times[:, None].astype(float)], axis=1)
    end = np.minimum(times + L, T) - t0          # inclusive index of the last summed stage
    v = np.array([traj.costs[j: e + 1].sum() for j, e in enumerate(end)])
    return aug, v, traj.Vx.copy(), aug[end], times + L > T
