"""Episode records and the FIFO replay buffer."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class EpisodeRecord:
    """One full episode as stored for replay.

    ``states`` and ``obs`` carry T+1 entries (the post-terminal pair is kept
    for bootstrapping); actions, flags and rewards carry T. ``executed`` is
    what the environment actually ran, ``original`` what the policy chose.
    """

    states: np.ndarray
    obs: np.ndarray
    executed: np.ndarray
    original: np.ndarray
    attacked: np.ndarray
    rewards: np.ndarray
    attack_log: list = field(default_factory=list)

    def __post_init__(self):
        t = self.rewards.shape[0]
        if self.states.shape[0] != t + 1 or self.obs.shape[0] != t + 1:
            raise ValueError("states/obs must hold one more entry than rewards")
        for arr in (self.executed, self.original, self.attacked):
            if arr.shape[0] != t:
                raise ValueError("per-step arrays disagree on episode length")

    @property
    def length(self) -> int:
        return self.rewards.shape[0]

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    @property
    def attacked_steps(self) -> int:
        return int(self.attacked.any(axis=1).sum())


class ReplayBuffer:
    def __init__(self, capacity: int = 5000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self._episodes: deque[EpisodeRecord] = deque(maxlen=capacity)

    def add(self, episode: EpisodeRecord) -> None:
        self._episodes.append(episode)

    def sample(self, rng: np.random.Generator, batch_size: int = 32) -> list[EpisodeRecord]:
        """Uniform sampling with replacement across stored episodes."""
        if not self._episodes:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(len(self._episodes), size=batch_size)
        return [self._episodes[i] for i in idx]

    def __len__(self) -> int:
        return len(self._episodes)

    def episodes(self) -> list[EpisodeRecord]:
        return list(self._episodes)


def collate(episodes: list[EpisodeRecord]) -> dict[str, np.ndarray]:
    """Stack equal-length episodes into batch arrays keyed by field."""
    t = episodes[0].length
    if any(ep.length != t for ep in episodes):
        raise ValueError("collate requires equal-length episodes")
    return {
        "states": np.stack([ep.states for ep in episodes]),
        "obs": np.stack([ep.obs for ep in episodes]),
        "executed": np.stack([ep.executed for ep in episodes]),
        "rewards": np.stack([ep.rewards for ep in episodes]),
    }
