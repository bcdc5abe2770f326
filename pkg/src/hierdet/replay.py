"""Fixed-capacity experience replay and Bellman targets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from hierdet.errors import InsufficientExperiences
from hierdet.qlearn import QNetwork, forward


@dataclass(frozen=True)
class Experience:
    state: np.ndarray
    action: int
    reward: float
    next_state: Any
    terminal: bool


class ReplayMemory:
    """Ring buffer; once full, each push overwrites the oldest experience."""

    def __init__(self, capacity: int = 1000):
        if capacity < 1:
            raise ValueError("replay capacity must be at least 1")
        self.capacity = capacity
        self._items: list[Experience] = []
        self._cursor = 0

    def __len__(self):
        return len(self._items)

    def push(self, exp: Experience) -> None:
        if len(self._items) < self.capacity:
            self._items.append(exp)
        else:
            self._items[self._cursor] = exp
        self._cursor = (self._cursor + 1) % self.capacity

    def items(self) -> list[Experience]:
        """Contents from oldest to newest."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._cursor:] + self._items[:self._cursor]

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Experience]:
        if batch_size > len(self._items):
            raise InsufficientExperiences(f"need {batch_size} experiences, have {len(self._items)}")
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in idx]


def bellman_targets(batch: Sequence[Experience], net: QNetwork, gamma: float):
    """``r + gamma * max_a' Q(s', a')``, or just ``r`` for terminal experiences.

    Returns ``(targets, actions)`` arrays. Terminal next-states are never read.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    rewards = np.array([e.reward for e in batch], dtype=np.float64)
    actions = np.array([e.action for e in batch], dtype=np.int64)
    targets = rewards.copy()
    live = [i for i, e in enumerate(batch) if not e.terminal]
    if live and gamma > 0.0:
        nxt = np.stack([batch[i].next_state for i in live])
        q_next, _ = forward(net, nxt, mode="infer")
        targets[live] += gamma * q_next.max(axis=1)
    return targets, actions
