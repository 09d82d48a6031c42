"""Learning interface over the simulator: observations, rewards, histories.

Each device observes the scaled delay counters of every device plus the
channel indicator, receives a status-based local reward (negative scaled
delay plus negative normalized queue), and keeps a rolling window of its own
past observation-action pairs to feed the actor and critic.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ramac.simulator import DecisionEpoch, SimConfig

# Feature window selectors (see feature_vector).
WINDOW_NEWEST = "newest"
WINDOW_SHIFTED = "shifted"


@dataclass(frozen=True)
class MdpScaling:
    """Reward/observation scaling constants and the discount factor."""

    omega0: float = 1.0 / 60.0   # delay-counter scale
    omega1: float = 1.0          # delay term weight in the reward
    omega2: float = 1.0          # queue term weight in the reward
    gamma: float = 0.5
    r_max: float | None = None   # reward bound; derived from config if None

    def __post_init__(self) -> None:
        if min(self.omega0, self.omega1, self.omega2) <= 0:
            raise ValueError("scaling weights must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    def with_reward_bound(self, config: SimConfig) -> "MdpScaling":
        """Pin r_max to the worst case over one episode (l <= T, q <= Q_max)."""
        bound = self.omega1 * self.omega0 * config.horizon_slots + self.omega2
        return MdpScaling(self.omega0, self.omega1, self.omega2, self.gamma, bound)


def observation_dim(n_devices: int) -> int:
    return n_devices + 1


def feature_dim(n_devices: int, history_len: int) -> int:
    """History window of M (observation, action) pairs plus one trailing observation."""
    return history_len * (observation_dim(n_devices) + 1) + observation_dim(n_devices)


def observe(device_id: int, epoch: DecisionEpoch, scaling: MdpScaling) -> np.ndarray:
    """Observation at a decision epoch: own scaled delay, peers' scaled delays
    in ascending device id with self omitted, then the channel indicator."""
    delays = epoch.delay_slots * scaling.omega0
    peers = np.delete(delays, device_id)
    return np.concatenate(([delays[device_id]], peers, [float(epoch.channel_busy)]))


def local_reward(
    device_id: int, epoch: DecisionEpoch, scaling: MdpScaling, config: SimConfig
) -> float:
    """Status-based local reward: -(w1 * scaled delay + w2 * normalized queue)."""
    r = -(
        scaling.omega1 * scaling.omega0 * float(epoch.delay_slots[device_id])
        + scaling.omega2 * float(epoch.queue_len[device_id]) / config.q_max
    )
    if scaling.r_max is not None and abs(r) > scaling.r_max:
        raise AssertionError(
            f"reward {r} exceeds configured bound {scaling.r_max}; "
            "scaling constants violate the bounded-reward requirement"
        )
    return r


@dataclass
class HistoryBuffer:
    """Rolling window of at most M+1 (observation, action) pairs, newest last."""

    history_len: int                       # M
    entries: deque = field(default=None)   # (obs array, action in {0, 1})

    def __post_init__(self) -> None:
        if self.entries is None:
            self.entries = deque(maxlen=self.history_len + 1)

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, obs: np.ndarray, action: int) -> None:
        """Append a pair, evicting the oldest beyond M+1 entries."""
        self.entries.append((np.asarray(obs, dtype=float), int(action)))

    def newest(self):
        return self.entries[-1]


def feature_vector(
    buffer: HistoryBuffer, current_obs: np.ndarray, window: str
) -> np.ndarray:
    """Flatten a history window into the critic/actor input vector.

    ``newest``: the M most recent stored pairs followed by the current
    observation. ``shifted``: the M pairs preceding the most recent one,
    followed by the observation of the most recent stored pair (the exact
    input the previous action was selected with). Missing warm-up entries are
    zero-padded at the old end.
    """
    obs_dim = len(current_obs)
    m = buffer.history_len
    entries = list(buffer.entries)
    if window == WINDOW_NEWEST:
        pairs = entries[-m:]
        trailing = np.asarray(current_obs, dtype=float)
    elif window == WINDOW_SHIFTED:
        if not entries:
            raise ValueError("shifted window needs at least one stored pair")
        pairs = entries[:-1][-m:]
        trailing = entries[-1][0]
    else:
        raise ValueError(f"unknown window {window!r}")

    out = np.zeros(m * (obs_dim + 1) + obs_dim)
    offset = (m - len(pairs)) * (obs_dim + 1)  # zero-pad the old end
    for obs, action in pairs:
        out[offset : offset + obs_dim] = obs
        out[offset + obs_dim] = action
        offset += obs_dim + 1
    out[m * (obs_dim + 1) :] = trailing
    return out
