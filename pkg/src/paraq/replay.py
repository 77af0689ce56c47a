"""Bounded FIFO experience store plus the sampler-local temporary buffers.

The memory is single-owner: only the orchestrator mutates it (prepopulate and
flush) and only the trainer reads it, never at the same time. That protocol
lives in the executor; this module just counts every mutation in ``version``
so the trainer can assert the store stayed frozen while it trained.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

DUMP_MAGIC = b"PQRB1\x00\x00\x00"


@dataclass
class Transition:
    """One experience tuple."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayMemory:
    """Ring buffer of Transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._cursor = 0
        self.version = 0

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self.snapshot())

    def snapshot(self) -> list[Transition]:
        """Contents in insertion order (oldest first)."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._cursor:] + self._items[: self._cursor]

    def push(self, t: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._cursor] = t
            self._cursor = (self._cursor + 1) % self.capacity
        self.version += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        """batch_size uniform draws with replacement, consumed from rng only."""
        if not self._items:
            raise ValueError("cannot sample from an empty replay memory")
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]

    def prepopulate(self, env, n: int, rng: np.random.Generator) -> None:
        """Insert exactly n uniform-random-action transitions from env."""
        if n > self.capacity:
            raise ValueError("prepopulation count exceeds capacity")
        if n == 0:
            return
        state = env.reset(rng)
        for _ in range(n):
            action = int(rng.integers(env.action_count))
            next_state, reward, terminal = env.step(action, rng)
            bootstrap_terminal = terminal and not getattr(env, "truncated", False)
            self.push(Transition(state, action, reward, next_state, bootstrap_terminal))
            state = env.reset(rng) if terminal else next_state

    def flush(self, buffers: list["SampleBuffer"]) -> int:
        """Append every buffer in ascending owner-id order, then empty them.

        Each buffer's transitions keep their chronological order. Returns the
        number of transitions appended.
        """
        moved = 0
        for buf in sorted(buffers, key=lambda b: b.owner_id):
            for t in buf.drain():
                self.push(t)
                moved += 1
        return moved


class SampleBuffer:
    """Transitions one sampler collected since the last flush.

    Appends and drains are lock-guarded for the one mode that flushes while
    other samplers may still be mid-step; everywhere else the lock is
    uncontended.
    """

    def __init__(self, owner_id: int):
        self.owner_id = owner_id
        self._items: list[Transition] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._items)

    def append(self, t: Transition) -> None:
        with self._lock:
            self._items.append(t)

    def drain(self) -> list[Transition]:
        with self._lock:
            items = self._items
            self._items = []
        return items


def dump_memory(path, mem: ReplayMemory) -> None:
    """Debug dump, binary little-endian.

    Header: 8-byte magic, uint32 transition count, uint32 state dimension.
    Rows: state, action, reward, next_state, terminal -- all as float64.
    """
    items = mem.snapshot()
    dim = len(items[0].state) if items else 0
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(np.asarray([len(items), dim], dtype="<u4").tobytes())
        for t in items:
            row = np.concatenate(
                [
                    np.asarray(t.state, dtype=np.float64),
                    [float(t.action), float(t.reward)],
                    np.asarray(t.next_state, dtype=np.float64),
                    [1.0 if t.terminal else 0.0],
                ]
            )
            fh.write(row.astype("<f8").tobytes())
