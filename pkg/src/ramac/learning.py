"""Per-device actor-critic learner with consensus reward sharing.

The actor is a ReLU MLP with a softmax head over {wait, transmit}; the
critic is an exactly linear value function over the history features (a
constant bias feature is appended). Updates follow plain SGD: the critic
takes a semi-gradient TD(0) step with the post-consensus reward, the TD
error is recomputed against the updated critic, and the actor takes a
log-policy gradient step for the previously stored action, evaluated at the
features that action was selected with.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ramac.consensus import ConsensusTopology, gossip
from ramac.mdp import (
    WINDOW_NEWEST,
    WINDOW_SHIFTED,
    HistoryBuffer,
    feature_vector,
)

ACTION_WAIT = 0
ACTION_TRANSMIT = 1

# Critic update sign conventions (see critic_update).
CRITIC_SEMI_GRADIENT = "semi_gradient"
CRITIC_STRICT = "strict"


class NumericalError(FloatingPointError):
    """Raised when a forward pass or gradient stops being finite."""


class ActorMLP:
    """Softmax-policy MLP: input -> (depth-1) ReLU layers of ``width`` -> 2 logits."""

    def __init__(self, input_dim: int, width: int = 128, depth: int = 5, rng=None):
        if depth < 2:
            raise ValueError("depth must be >= 2 (at least one hidden layer)")
        rng = np.random.default_rng(rng)
        sizes = [input_dim] + [width] * (depth - 1) + [2]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-scale, scale, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    def _forward(self, features: np.ndarray):
        """Return (pre-activations per layer, post-activations per layer)."""
        pre, post = [], [np.asarray(features, dtype=float)]
        h = post[0]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = w @ h + b
            pre.append(z)
            h = z if k == len(self.weights) - 1 else np.maximum(z, 0.0)
            post.append(h)
        # non-finite values propagate through matmul and ReLU, so one check
        # on the logits covers every layer
        if not np.isfinite(pre[-1]).all():
            raise NumericalError("non-finite activation in actor forward pass")
        return pre, post

    def logits(self, features: np.ndarray) -> np.ndarray:
        return self._forward(features)[1][-1]

    def grad_log_prob(self, features: np.ndarray, action: int):
        """Gradients of log pi(action | features) w.r.t. every weight and bias."""
        pre, post = self._forward(features)
        probs = softmax(post[-1])
        d = -probs
        d[action] += 1.0  # d log pi / d logits
        grads_w, grads_b = [], []
        for k in range(len(self.weights) - 1, -1, -1):
            grads_w.append(d[:, None] * post[k][None, :])
            grads_b.append(d)
            if k > 0:
                d = (self.weights[k].T @ d) * (pre[k - 1] > 0.0)
        grads_w.reverse()
        grads_b.reverse()
        return grads_w, grads_b


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def policy_forward(actor: ActorMLP, features: np.ndarray) -> np.ndarray:
    """Action distribution (p_wait, p_transmit) at the given features."""
    features = np.asarray(features, dtype=float)
    if features.shape != (actor.input_dim,):
        raise ValueError(
            f"features must have shape ({actor.input_dim},), got {features.shape}"
        )
    return softmax(actor.logits(features))


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Bernoulli draw over {wait, transmit} from a valid distribution."""
    return ACTION_TRANSMIT if rng.random() < probs[ACTION_TRANSMIT] else ACTION_WAIT


class LinearCritic:
    """Exactly linear value function over features with an appended bias term."""

    def __init__(self, feature_dim: int):
        self.w = np.zeros(feature_dim + 1)

    @staticmethod
    def augment(features: np.ndarray) -> np.ndarray:
        return np.concatenate((np.asarray(features, dtype=float), [1.0]))

    def value(self, features: np.ndarray) -> float:
        return float(self.augment(features) @ self.w)


def critic_value(critic: LinearCritic, features: np.ndarray) -> float:
    return critic.value(features)


@dataclass(frozen=True)
class TDComputation:
    """One TD-error evaluation: delta = reward + gamma * V(newest) - V(shifted)."""

    delta: float
    reward_used: float
    value_next: float
    value_prev: float


def td_error(
    critic: LinearCritic,
    reward_consensus: float,
    newest_features: np.ndarray,
    shifted_features: np.ndarray,
    gamma: float,
) -> TDComputation:
    v_next = critic.value(newest_features)
    v_prev = critic.value(shifted_features)
    return TDComputation(
        delta=reward_consensus + gamma * v_next - v_prev,
        reward_used=reward_consensus,
        value_next=v_next,
        value_prev=v_prev,
    )


def critic_update(
    critic: LinearCritic,
    td: TDComputation,
    shifted_features: np.ndarray,
    beta: float,
    mode: str = CRITIC_SEMI_GRADIENT,
) -> None:
    """Semi-gradient TD(0) step on the shifted-window features.

    The default mode moves the weights along +delta * grad V, the standard
    TD(0) descent direction. The strict mode applies the opposite sign.
    """
    step = beta * td.delta * critic.augment(shifted_features)
    if mode == CRITIC_SEMI_GRADIENT:
        critic.w += step
    elif mode == CRITIC_STRICT:
        critic.w -= step
    else:
        raise ValueError(f"unknown critic mode {mode!r}")
    if not np.all(np.isfinite(critic.w)):
        raise NumericalError("critic weights became non-finite")


def actor_update(
    actor: ActorMLP,
    td: TDComputation,
    shifted_features: np.ndarray,
    action_prev: int,
    alpha: float,
    grad_clip: float | None = None,
) -> None:
    """Policy-gradient step: theta += alpha * delta * grad log pi(action_prev).

    ``grad_clip`` bounds the global norm of delta * grad log pi before the
    step is applied. Rare high-magnitude states otherwise produce single
    steps large enough to push the ReLU stack into self-amplifying growth.
    """
    grads_w, grads_b = actor.grad_log_prob(shifted_features, action_prev)
    scale = alpha * td.delta
    if grad_clip is not None:
        sq = sum(float(g @ g) for g in grads_b)
        sq += sum(float(np.vdot(g, g)) for g in grads_w)
        norm = abs(td.delta) * np.sqrt(sq)
        if norm > grad_clip:
            scale *= grad_clip / norm
    for w, b, gw, gb in zip(actor.weights, actor.biases, grads_w, grads_b):
        w += scale * gw
        b += scale * gb
    # scale is finite and the gradients were checked during the forward pass,
    # so verifying the output layer suffices
    if not (np.isfinite(scale) and np.isfinite(actor.weights[-1]).all()):
        raise NumericalError("actor weights became non-finite")


@dataclass
class PendingStep:
    """Un-learned (observation, action, reward) triple from the latest decision."""

    obs: np.ndarray
    action: int
    reward: float


class DeviceLearner:
    """State owned by one device: actor, critic, history buffer, pending triple."""

    def __init__(self, feature_dim: int, history_len: int, width: int, depth: int, rng):
        self.actor = ActorMLP(feature_dim, width=width, depth=depth, rng=rng)
        self.critic = LinearCritic(feature_dim)
        self.buffer = HistoryBuffer(history_len)
        self.pending: PendingStep | None = None

    @property
    def ready_for_update(self) -> bool:
        return self.pending is not None

    def act(self, obs: np.ndarray, reward: float, rng: np.random.Generator) -> int:
        """Select an action from the current policy and stage the triple."""
        features = feature_vector(self.buffer, obs, WINDOW_NEWEST)
        probs = policy_forward(self.actor, features)
        action = sample_action(probs, rng)
        self.pending = PendingStep(obs=obs, action=action, reward=reward)
        return action

    def reset_episode(self) -> None:
        """Drop episode-scoped state; learned parameters persist."""
        self.buffer = HistoryBuffer(self.buffer.history_len)
        self.pending = None


def learner_step(
    learners: list[DeviceLearner],
    topology: ConsensusTopology,
    gamma: float,
    alpha: float,
    beta: float,
    critic_mode: str = CRITIC_SEMI_GRADIENT,
    learn: bool = True,
    grad_clip: float | None = None,
) -> np.ndarray:
    """One full decentralized update once every device has a pending triple.

    Order per device, after G gossip rounds over the local rewards: compute
    the TD error with the consensus reward, update the critic, recompute the
    TD error against the updated critic, update the actor for the previously
    stored action, push the pending pair into the history buffer, and clear
    the ready flag. Devices that have no stored pair yet (warm-up) only push.
    Returns the post-gossip reward vector.
    """
    if len(learners) != topology.n_devices:
        raise ValueError(
            f"got {len(learners)} learners for a {topology.n_devices}-device topology"
        )
    if any(lrn.pending is None for lrn in learners):
        raise RuntimeError("every device needs a pending triple before an update")

    rewards = np.array([lrn.pending.reward for lrn in learners])
    consensus = gossip(rewards, topology)

    for lrn, r_tilde in zip(learners, consensus):
        pending = lrn.pending
        if learn and len(lrn.buffer) > 0:
            newest = feature_vector(lrn.buffer, pending.obs, WINDOW_NEWEST)
            shifted = feature_vector(lrn.buffer, pending.obs, WINDOW_SHIFTED)
            action_prev = lrn.buffer.newest()[1]
            td = td_error(lrn.critic, float(r_tilde), newest, shifted, gamma)
            critic_update(lrn.critic, td, shifted, beta, mode=critic_mode)
            td = td_error(lrn.critic, float(r_tilde), newest, shifted, gamma)
            actor_update(lrn.actor, td, shifted, action_prev, alpha, grad_clip=grad_clip)
        lrn.buffer.push(pending.obs, pending.action)
        lrn.pending = None
    return consensus
