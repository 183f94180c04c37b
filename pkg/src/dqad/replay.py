"""Experience replay: FIFO ring buffer with uniform and prioritized sampling.

Priorities live in an array-backed sum tree (parents hold the sum of their
children), giving O(log M) updates and proportional sampling. Leaves store
priority**alpha, so drawing a uniform cumulative sum lands on index i with
probability p_i^alpha / sum_k p_k^alpha.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, StateError

MODE_UNIFORM = "uniform"
MODE_PRIORITIZED = "prioritized"

VALID_REWARDS = (-2, -1, 0, 1)


@dataclass
class Transition:
    """One stored experience (state, action, reward, next_state)."""

    state: np.ndarray
    action: int
    reward: int
    next_state: np.ndarray

    def __post_init__(self):
        if self.action not in (0, 1):
            raise InputError(f"action must be 0 or 1, got {self.action}")
        if self.reward not in VALID_REWARDS:
            raise InputError(f"reward must be one of {VALID_REWARDS}, got {self.reward}")
        if np.shape(self.state) != np.shape(self.next_state):
            raise InputError("state and next_state dimensions differ")


class SumTree:
    """Full binary tree in an array; leaf i sits at index capacity - 1 + i."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity - 1, dtype=np.float64)

    @property
    def total(self):
        return self.nodes[0]

    def leaf(self, i):
        return self.nodes[self.capacity - 1 + i]

    def leaves(self):
        return self.nodes[self.capacity - 1 :]

    def update(self, i, value):
        idx = self.capacity - 1 + i
        change = value - self.nodes[idx]
        self.nodes[idx] = value
        while idx > 0:
            idx = (idx - 1) // 2
            self.nodes[idx] += change

    def find(self, cumsum):
        """Leaf index whose cumulative-sum interval contains `cumsum`."""
        idx = 0
        while 2 * idx + 1 < len(self.nodes):
            left, right = 2 * idx + 1, 2 * idx + 2
            if cumsum <= self.nodes[left] or self.nodes[right] == 0.0:
                idx = left
            else:
                cumsum -= self.nodes[left]
                idx = right
        return idx - (self.capacity - 1)


def priority_from_td(delta, epsilon_p):
    """|delta| + epsilon_p (always positive so every entry stays sampleable)."""
    if not np.isfinite(delta):
        raise InputError("TD error must be finite")
    return abs(float(delta)) + float(epsilon_p)


def importance_weights(probs, n, beta_is):
    """((1/N) * (1/P(i)))**beta, normalized by the batch maximum."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p <= 0):
        raise InputError("sampling probabilities must be positive")
    raw = (1.0 / (n * p)) ** float(beta_is)
    return raw / raw.max()


class ReplayBuffer:
    """Capacity-bounded FIFO of transitions with uniform or PER sampling.

    New entries receive the current maximum raw priority (1 when empty) so
    every experience has a fair chance of being replayed at least once.
    Sampling is with replacement; returned indices are stable entry ids.
    """

    def __init__(self, capacity, alpha=0.6, beta_is=0.4, epsilon_p=0.01):
        if capacity < 1:
            raise ConfigError("capacity must be positive")
        if alpha < 0 or not 0 <= beta_is <= 1 or epsilon_p <= 0:
            raise ConfigError("need alpha >= 0, beta_is in [0,1], epsilon_p > 0")
        self.capacity = capacity
        self.alpha = float(alpha)
        self.beta_is = float(beta_is)
        self.epsilon_p = float(epsilon_p)
        self._tree = SumTree(capacity)
        self._raw = np.zeros(capacity, dtype=np.float64)
        self._entries = [None] * capacity
        self._pushes = 0

    def __len__(self):
        return min(self._pushes, self.capacity)

    def _alive(self, entry_id):
        return 0 <= entry_id < self._pushes and self._pushes - entry_id <= self.capacity

    def _id_of_slot(self, slot):
        # newest entry id congruent to slot modulo capacity
        return self._pushes - 1 - ((self._pushes - 1 - slot) % self.capacity)

    def push(self, transition: Transition):
        size = len(self)
        raw = float(self._raw[:size].max()) if size else 1.0
        slot = self._pushes % self.capacity
        self._entries[slot] = transition
        self._raw[slot] = raw
        self._tree.update(slot, raw**self.alpha)
        self._pushes += 1

    def raw_priorities(self):
        """Raw priorities of stored entries, slot order (for inspection/tests)."""
        return self._raw[: len(self)].copy()

    def probabilities(self):
        """P(i) for every stored slot under the current priorities."""
        size = len(self)
        leaves = self._tree.leaves()[:size]
        return leaves / leaves.sum()

    def sample(self, batch_size, mode, rng):
        if len(self) == 0:
            raise StateError("cannot sample from an empty buffer")
        if batch_size < 1:
            raise InputError("batch_size must be >= 1")
        size = len(self)

        if mode == MODE_UNIFORM:
            slots = rng.integers(0, size, size=batch_size)
            weights = np.ones(batch_size, dtype=np.float64)
        elif mode == MODE_PRIORITIZED:
            total = self._tree.total
            draws = rng.random(batch_size) * total
            slots = np.array([self._tree.find(u) for u in draws], dtype=np.int64)
            slots = np.minimum(slots, size - 1)
            probs = self._tree.leaves()[slots] / total
            weights = importance_weights(probs, size, self.beta_is)
        else:
            raise InputError(f"unknown sampling mode {mode!r}")

        ids = [self._id_of_slot(int(s)) for s in slots]
        transitions = [self._entries[int(s)] for s in slots]
        return ids, transitions, weights

    def update_priorities(self, entry_ids, deltas):
        """Set priority |delta|+eps for each entry; stale ids are skipped."""
        if len(entry_ids) != len(deltas):
            raise InputError("need one delta per entry id")
        for entry_id, delta in zip(entry_ids, deltas):
            if not self._alive(entry_id):
                continue
            slot = entry_id % self.capacity
            raw = priority_from_td(delta, self.epsilon_p)
            self._raw[slot] = raw
            self._tree.update(slot, raw**self.alpha)

    def tree_root(self):
        return self._tree.total

    def tree_leaf_sum(self):
        return float(self._tree.leaves()[: len(self)].sum())
