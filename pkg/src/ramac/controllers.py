"""Episode controllers wiring policies to the simulator's decision epochs.

All algorithms share the identical simulator and observation code paths;
only the decision rule and the learning step differ. A controller persists
across the episodes of a run (learned parameters carry over) while the
simulator is rebuilt fresh per episode.
"""

from __future__ import annotations

import numpy as np

from ramac.baselines import (
    BACKOFF_BEB,
    BACKOFF_FIXED,
    BackoffState,
    BaselineConfig,
    ctde_train_step,
    ra_p_decide,
)
from ramac.consensus import ConsensusTopology
from ramac.learning import ACTION_TRANSMIT, DeviceLearner, LinearCritic, learner_step
from ramac.mdp import MdpScaling, feature_dim, local_reward, observe
from ramac.simulator import DecisionEpoch, SimConfig

ALGO_PROPOSED = "proposed"
ALGO_RA_P = "ra_p"
ALGO_RA_FCW = "ra_fcw"
ALGO_RA_ACW = "ra_acw"
ALGO_RA_CTDE = "ra_ctde"
ALGORITHMS = (ALGO_PROPOSED, ALGO_RA_P, ALGO_RA_FCW, ALGO_RA_ACW, ALGO_RA_CTDE)


class Controller:
    def start_episode(self) -> None:
        pass

    def decide(self, epoch: DecisionEpoch) -> list[int]:
        raise NotImplementedError

    def notify(self, outcome: str, senders: list[int]) -> None:
        pass


def run_episode(sim, controller: Controller):
    """Drive one episode; returns the simulator's frozen metrics."""
    controller.start_episode()
    while (epoch := sim.next_epoch()) is not None:
        senders = controller.decide(epoch)
        outcome = sim.apply_actions(senders)
        controller.notify(outcome, senders)
    sim.check_conservation()
    return sim.metrics


class FixedProbabilityController(Controller):
    def __init__(self, config: SimConfig, baseline: BaselineConfig, seed_seq):
        self._rngs = [np.random.default_rng(s) for s in seed_seq.spawn(config.n_devices)]
        self._tx_prob = baseline.tx_prob

    def decide(self, epoch: DecisionEpoch) -> list[int]:
        return [
            int(i)
            for i in epoch.ready
            if ra_p_decide(self._rngs[i], self._tx_prob) == ACTION_TRANSMIT
        ]


class BackoffController(Controller):
    def __init__(self, config: SimConfig, baseline: BaselineConfig, mode: str, seed_seq):
        self._rngs = [np.random.default_rng(s) for s in seed_seq.spawn(config.n_devices)]
        self._states = [BackoffState(mode, baseline) for _ in range(config.n_devices)]

    def decide(self, epoch: DecisionEpoch) -> list[int]:
        return [
            int(i)
            for i in epoch.ready
            if self._states[i].decide(self._rngs[i]) == ACTION_TRANSMIT
        ]

    def notify(self, outcome: str, senders: list[int]) -> None:
        if outcome == "no_tx":
            return
        if outcome == "collision":
            for d in senders:
                self._states[d].on_collision()
        else:
            self._states[senders[0]].on_success()
        for state in self._states:
            state.reset_counter()


class _ActorCriticController(Controller):
    """Shared action-selection path for the decentralized and CTDE learners."""

    def __init__(
        self,
        config: SimConfig,
        scaling: MdpScaling,
        history_len: int,
        actor_width: int,
        actor_depth: int,
        alpha: float,
        beta: float,
        critic_mode: str,
        seed_seq,
        learn: bool = True,
        grad_clip: float | None = None,
    ):
        self.config = config
        self.scaling = scaling.with_reward_bound(config)
        self.alpha = alpha
        self.beta = beta
        self.critic_mode = critic_mode
        self.learn = learn
        self.grad_clip = grad_clip
        n = config.n_devices
        fdim = feature_dim(n, history_len)
        init_seeds = seed_seq.spawn(n + 1)
        self._rngs = [np.random.default_rng(s) for s in init_seeds[-1].spawn(n)]
        self.learners = [
            DeviceLearner(fdim, history_len, actor_width, actor_depth, rng=init_seeds[i])
            for i in range(n)
        ]

    def start_episode(self) -> None:
        # Histories refer to the previous episode's trajectory; drop them.
        for lrn in self.learners:
            lrn.reset_episode()

    def decide(self, epoch: DecisionEpoch) -> list[int]:
        senders = []
        for i in epoch.ready:
            i = int(i)
            obs = observe(i, epoch, self.scaling)
            reward = local_reward(i, epoch, self.scaling, self.config)
            if self.learners[i].act(obs, reward, self._rngs[i]) == ACTION_TRANSMIT:
                senders.append(i)
        if all(lrn.ready_for_update for lrn in self.learners):
            self._update()
        return senders

    def _update(self) -> None:
        raise NotImplementedError


class DecentralizedACController(_ActorCriticController):
    """Fully decentralized learner: scalar-reward gossip, per-device critics."""

    def __init__(self, config, scaling, topology: ConsensusTopology, **kwargs):
        if topology.n_devices != config.n_devices:
            raise ValueError("topology size must match the device count")
        super().__init__(config, scaling, **kwargs)
        self.topology = topology

    def _update(self) -> None:
        learner_step(
            self.learners,
            self.topology,
            gamma=self.scaling.gamma,
            alpha=self.alpha,
            beta=self.beta,
            critic_mode=self.critic_mode,
            learn=self.learn,
            grad_clip=self.grad_clip,
        )


class CTDEController(_ActorCriticController):
    """Central linear critic over the concatenated per-device features."""

    def __init__(self, config, scaling, **kwargs):
        super().__init__(config, scaling, **kwargs)
        history_len = self.learners[0].buffer.history_len
        self.central_critic = LinearCritic(
            config.n_devices * feature_dim(config.n_devices, history_len)
        )

    def _update(self) -> None:
        ctde_train_step(
            self.central_critic,
            self.learners,
            gamma=self.scaling.gamma,
            alpha=self.alpha,
            beta=self.beta,
            critic_mode=self.critic_mode,
            learn=self.learn,
            grad_clip=self.grad_clip,
        )
