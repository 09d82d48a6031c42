"""Comparison transmission policies: fixed-probability, fixed contention
window, binary exponential backoff, and a centrally trained actor-critic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ramac.learning import (
    ACTION_TRANSMIT,
    ACTION_WAIT,
    CRITIC_SEMI_GRADIENT,
    DeviceLearner,
    LinearCritic,
    actor_update,
    critic_update,
    feature_vector,
    td_error,
)
from ramac.mdp import WINDOW_NEWEST, WINDOW_SHIFTED

BACKOFF_FIXED = "fixed"
BACKOFF_BEB = "beb"


@dataclass(frozen=True)
class BaselineConfig:
    """Parameters for the non-learning baselines."""

    tx_prob: float = 0.25        # fixed-probability policy; 1/N is throughput-optimal
    w_cw_fixed: int = 16         # fixed contention window size
    w_cw_initial: int = 1        # starting window for exponential backoff
    w_cw_cap: int = 1024         # exponential backoff ceiling
    # Shrink the window back to w_cw_initial after a success (802.11 style).
    beb_reset_on_success: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.tx_prob <= 1.0:
            raise ValueError("tx_prob must lie in (0, 1]")
        if min(self.w_cw_fixed, self.w_cw_initial, self.w_cw_cap) < 1:
            raise ValueError("contention window sizes must be >= 1")


def ra_p_decide(rng: np.random.Generator, tx_prob: float) -> int:
    """Transmit with a fixed probability at each decision epoch."""
    return ACTION_TRANSMIT if rng.random() < tx_prob else ACTION_WAIT


class BackoffState:
    """Per-device contention-window backoff.

    With no active backoff, a counter is drawn uniformly from
    {0, ..., W_cw - 1}; it decrements once per idle decision epoch and the
    device transmits when it hits zero. Whenever the channel turns busy,
    every device discards its residual counter and redraws after the busy
    period (backoff restarts on channel activity). In exponential mode the
    window doubles after each collision up to the cap and resets to the
    initial size after a success.
    """

    def __init__(self, mode: str, config: BaselineConfig):
        if mode not in (BACKOFF_FIXED, BACKOFF_BEB):
            raise ValueError(f"unknown backoff mode {mode!r}")
        self.mode = mode
        self.config = config
        self.window = config.w_cw_fixed if mode == BACKOFF_FIXED else config.w_cw_initial
        self.counter: int | None = None

    def decide(self, rng: np.random.Generator) -> int:
        if self.counter is None:
            self.counter = int(rng.integers(self.window))
        if self.counter == 0:
            self.counter = None  # redraw after the attempt resolves
            return ACTION_TRANSMIT
        self.counter -= 1
        return ACTION_WAIT

    def on_collision(self) -> None:
        if self.mode == BACKOFF_BEB:
            self.window = min(2 * self.window, self.config.w_cw_cap)

    def on_success(self) -> None:
        if self.mode == BACKOFF_BEB and self.config.beb_reset_on_success:
            self.window = self.config.w_cw_initial

    def reset_counter(self) -> None:
        """Discard any residual counter; the next decide() redraws."""
        self.counter = None


def backoff_decide(state: BackoffState, rng: np.random.Generator) -> int:
    return state.decide(rng)


def ctde_train_step(
    central_critic: LinearCritic,
    learners: list[DeviceLearner],
    gamma: float,
    alpha: float,
    beta: float,
    critic_mode: str = CRITIC_SEMI_GRADIENT,
    learn: bool = True,
    grad_clip: float | None = None,
) -> float:
    """Centralized critic update shared by all actors.

    The critic consumes the concatenation of every device's feature windows
    (ascending device id) and the exact global mean reward; the single TD
    error drives one critic step and every actor's log-policy gradient step.
    Returns the mean reward used.
    """
    if any(lrn.pending is None for lrn in learners):
        raise RuntimeError("every device needs a pending triple before an update")
    mean_reward = float(np.mean([lrn.pending.reward for lrn in learners]))

    warmed = all(len(lrn.buffer) > 0 for lrn in learners)
    if learn and warmed:
        newest = np.concatenate(
            [feature_vector(l.buffer, l.pending.obs, WINDOW_NEWEST) for l in learners]
        )
        shifted = np.concatenate(
            [feature_vector(l.buffer, l.pending.obs, WINDOW_SHIFTED) for l in learners]
        )
        if central_critic.w.shape[0] != newest.shape[0] + 1:
            raise ValueError(
                f"central critic expects {central_critic.w.shape[0] - 1} features, "
                f"got {newest.shape[0]}"
            )
        td = td_error(central_critic, mean_reward, newest, shifted, gamma)
        # beta is a per-device step size; concatenation grows the squared
        # feature norm by the device count, and cross-device feature
        # correlation pushes the stability threshold lower still, so halve
        # on top of the 1/N rescale to keep the critic step stable.
        critic_update(
            central_critic, td, shifted, beta / (2 * len(learners)), mode=critic_mode
        )
        td = td_error(central_critic, mean_reward, newest, shifted, gamma)
        for lrn in learners:
            own_shifted = feature_vector(lrn.buffer, lrn.pending.obs, WINDOW_SHIFTED)
            actor_update(
                lrn.actor, td, own_shifted, lrn.buffer.newest()[1], alpha,
                grad_clip=grad_clip,
            )

    for lrn in learners:
        lrn.buffer.push(lrn.pending.obs, lrn.pending.action)
        lrn.pending = None
    return mean_reward
