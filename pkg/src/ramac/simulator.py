"""Slot-accurate random-access channel simulator.

Implements a listen-before-talk protocol on a shared slotted channel:
Poisson packet arrivals into bounded per-device buffers, a clear-channel
assessment gate (the channel must stay idle for a full DIFS before devices
decide), synchronized transmit/wait decisions, and collision or ACK
resolution. Slots where nothing can change are advanced in chunks, so the
simulation cost scales with the number of decision epochs rather than the
horizon.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Phase(enum.Enum):
    IDLE = "idle"
    DATA = "data"
    SIFS = "sifs"
    ACK = "ack"
    COLLISION_RECOVERY = "collision_recovery"


@dataclass(frozen=True)
class SimConfig:
    """Channel timing and traffic parameters (one slot = ``slot_us`` microseconds)."""

    n_devices: int = 4
    horizon_slots: int = 600
    slot_us: float = 9.0
    difs_slots: int = 4
    sifs_slots: int = 2
    data_slots: int = 10
    ack_slots: int = 4
    packet_bytes: int = 1500
    q_max: int = 10
    arrival_rate: float = 1.0 / 30.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_devices < 1:
            raise ValueError("n_devices must be >= 1")
        if self.horizon_slots < 1:
            raise ValueError("horizon_slots must be >= 1")
        for name in ("difs_slots", "sifs_slots", "data_slots", "ack_slots"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1 slot")
        if self.arrival_rate < 0:
            raise ValueError("arrival_rate must be >= 0")
        if self.q_max < 1:
            raise ValueError("q_max must be >= 1")

    @property
    def busy_slots(self) -> int:
        """Channel occupancy of one transmission attempt (data + SIFS + ACK window).

        A collision occupies the same window: the ACK timeout equals the
        would-be SIFS + ACK duration.
        """
        return self.data_slots + self.sifs_slots + self.ack_slots


@dataclass
class EpisodeMetrics:
    """Raw per-episode counters frozen when the horizon is reached."""

    n_devices: int
    horizon_slots: int
    pkt_t: np.ndarray = field(default=None)          # successes per device
    pkt_l: np.ndarray = field(default=None)          # buffer-overflow drops per device
    collisions_involved: np.ndarray = field(default=None)  # collision events joined, per device
    collision_events: int = 0
    arrivals_total: np.ndarray = field(default=None)
    # (device, slot, delay counter at success) per successful transmission
    success_records: list = field(default_factory=list)
    # delay counters when the horizon was reached (anticipated delay of
    # devices that never completed a transmission)
    final_delay: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.n_devices
        if self.pkt_t is None:
            self.pkt_t = np.zeros(n, dtype=np.int64)
        if self.pkt_l is None:
            self.pkt_l = np.zeros(n, dtype=np.int64)
        if self.collisions_involved is None:
            self.collisions_involved = np.zeros(n, dtype=np.int64)
        if self.arrivals_total is None:
            self.arrivals_total = np.zeros(n, dtype=np.int64)


@dataclass(frozen=True)
class DecisionEpoch:
    """Snapshot handed to a policy when the channel has been idle for a DIFS."""

    slot: int                 # slot index at which the epoch fires (1-based)
    ready: np.ndarray         # device ids with q > 0, ascending
    queue_len: np.ndarray     # q per device
    delay_slots: np.ndarray   # l per device (slots since last success)
    channel_busy: int         # always 0 at an epoch, kept for observation parity


class Simulator:
    """One episode of the random-access protocol over a finite slot horizon.

    Deterministic given its config seed (or explicit per-device seed
    sequences). Use :meth:`next_epoch` / :meth:`apply_actions` to drive an
    episode, or :meth:`advance_slot` for slot-by-slot inspection in tests.
    """

    def __init__(self, config: SimConfig, device_seeds=None):
        self.config = config
        n = config.n_devices
        if device_seeds is None:
            device_seeds = np.random.SeedSequence(config.seed).spawn(n)
        self._arrival_rngs = [np.random.default_rng(s) for s in device_seeds]
        self.slot = 0
        self.queue = np.zeros(n, dtype=np.int64)
        self.delay = np.zeros(n, dtype=np.int64)   # l_i, slots since last success
        self.success_count = np.zeros(n, dtype=np.int64)  # v_i
        self.idle_streak = 0
        self.phase = Phase.IDLE
        self.busy_remaining = 0
        self.active_transmitters: tuple[int, ...] = ()
        self.metrics = EpisodeMetrics(n, config.horizon_slots)
        self._awaiting_actions = False
        self._slot_consumed = False  # a wait epoch fired this slot; advance first

    # -- protocol state ----------------------------------------------------

    @property
    def channel_busy(self) -> int:
        return 0 if self.phase is Phase.IDLE else 1

    @property
    def done(self) -> bool:
        return self.slot >= self.config.horizon_slots

    def decision_epoch_ready(self, device: int) -> bool:
        """True iff the device may decide now: backlogged, channel idle a full DIFS."""
        return (
            self.queue[device] > 0
            and self.phase is Phase.IDLE
            and self.idle_streak >= self.config.difs_slots
        )

    # -- slot advancement --------------------------------------------------

    def _apply_arrivals(self, n_slots: int) -> None:
        cfg = self.config
        if cfg.arrival_rate == 0.0:
            return
        for i, rng in enumerate(self._arrival_rngs):
            count = int(rng.poisson(cfg.arrival_rate * n_slots))
            if count == 0:
                continue
            self.metrics.arrivals_total[i] += count
            accepted = min(count, cfg.q_max - int(self.queue[i]))
            self.queue[i] += accepted
            self.metrics.pkt_l[i] += count - accepted

    def _update_phase(self) -> None:
        # Phase of a success window: data, then SIFS, then ACK.
        if self.busy_remaining <= 0:
            self.phase = Phase.IDLE
        elif self.phase is Phase.COLLISION_RECOVERY:
            return
        else:
            cfg = self.config
            elapsed = cfg.busy_slots - self.busy_remaining
            if elapsed < cfg.data_slots:
                self.phase = Phase.DATA
            elif elapsed < cfg.data_slots + cfg.sifs_slots:
                self.phase = Phase.SIFS
            else:
                self.phase = Phase.ACK

    def _advance(self, n_slots: int) -> None:
        """Advance ``n_slots`` slots during which no decision can occur.

        Per slot: every device's delay counter grows by one, arrivals are
        enqueued (overflow recorded as losses), and the channel window
        progresses. Chunked processing is exact because queues only shrink at
        a window boundary, which is handled after the chunk.
        """
        assert n_slots >= 1
        self.delay += n_slots
        self._apply_arrivals(n_slots)
        self.slot += n_slots

        if self.phase is not Phase.IDLE:
            self.busy_remaining -= n_slots
            assert self.busy_remaining >= 0
            success = self.phase is not Phase.COLLISION_RECOVERY
            self._update_phase()
            if self.busy_remaining == 0:
                if success:
                    self._complete_success(self.active_transmitters[0])
                self.active_transmitters = ()
                self.idle_streak = 0
        else:
            self.idle_streak += n_slots

    def _complete_success(self, device: int) -> None:
        # Fires at ACK completion: packet leaves the queue, delay resets.
        self.metrics.pkt_t[device] += 1
        self.success_count[device] += 1
        self.metrics.success_records.append(
            (device, self.slot, int(self.delay[device]))
        )
        self.queue[device] -= 1
        self.delay[device] = 0

    def advance_slot(self) -> None:
        """Advance exactly one slot (no decision is taken here)."""
        if self.done:
            raise RuntimeError("episode horizon already reached")
        if self._awaiting_actions:
            raise RuntimeError("pending decision epoch; call apply_actions first")
        self._advance(1)
        self._slot_consumed = False

    def next_epoch(self) -> DecisionEpoch | None:
        """Advance slots until a decision epoch fires or the horizon ends.

        Returns None when the episode is over. The first epoch after a busy
        period fires at the slot boundary where the channel has stayed idle
        for a full DIFS; while the channel remains idle, devices that chose
        to wait reassess at every subsequent slot.
        """
        if self._awaiting_actions:
            raise RuntimeError("pending decision epoch; call apply_actions first")
        cfg = self.config
        while not self.done:
            if self.phase is not Phase.IDLE:
                steps = min(self.busy_remaining, cfg.horizon_slots - self.slot)
            else:
                if self.idle_streak >= cfg.difs_slots and not self._slot_consumed:
                    self._awaiting_actions = True
                    return DecisionEpoch(
                        slot=self.slot,
                        ready=np.flatnonzero(self.queue > 0),
                        queue_len=self.queue.copy(),
                        delay_slots=self.delay.copy(),
                        channel_busy=0,
                    )
                steps = min(
                    max(cfg.difs_slots - self.idle_streak, 1),
                    cfg.horizon_slots - self.slot,
                )
            self._advance(steps)
            self._slot_consumed = False
        if self.metrics.final_delay is None:
            self.metrics.final_delay = self.delay.copy()
        return None

    def apply_actions(self, transmitting) -> str:
        """Resolve the pending epoch's transmissions.

        Returns "no_tx", "success", or "collision". A successful transmission
        occupies data + SIFS + ACK slots and completes with the ACK
        side-effects; a collision occupies the same window with no ACK and
        the head-of-line packets are retained for retransmission.
        """
        if not self._awaiting_actions:
            raise RuntimeError("no pending decision epoch")
        self._awaiting_actions = False

        senders = sorted(int(d) for d in transmitting)
        for d in senders:
            if self.queue[d] <= 0:
                raise RuntimeError(
                    f"device {d} transmitted with an empty queue (invariant violation)"
                )
        if not senders:
            # Channel stays idle; the next reassessment is one slot later.
            self._slot_consumed = True
            return "no_tx"
        self.idle_streak = 0
        self.active_transmitters = tuple(senders)
        self.busy_remaining = self.config.busy_slots
        if len(senders) == 1:
            self.phase = Phase.DATA
            return "success"
        self.phase = Phase.COLLISION_RECOVERY
        self.metrics.collision_events += 1
        for d in senders:
            self.metrics.collisions_involved[d] += 1
        return "collision"

    def run_episode(self, policy) -> EpisodeMetrics:
        """Drive a full episode with ``policy(epoch) -> iterable of device ids``."""
        while (epoch := self.next_epoch()) is not None:
            self.apply_actions(policy(epoch))
        return self.metrics

    def check_conservation(self) -> None:
        """Assert per-device packet conservation (arrivals fully accounted for)."""
        m = self.metrics
        balance = m.pkt_t + m.pkt_l + self.queue
        if not np.array_equal(m.arrivals_total, balance):
            raise AssertionError(
                f"packet conservation violated: arrivals={m.arrivals_total}, "
                f"pkt_t={m.pkt_t}, pkt_l={m.pkt_l}, queue={self.queue}"
            )


# -- derived metrics -------------------------------------------------------

def throughput_mbps(metrics: EpisodeMetrics, config: SimConfig) -> float:
    """Total network throughput in Mbps over the episode."""
    if metrics.horizon_slots <= 0:
        raise ValueError("episode length must be positive")
    bits = int(metrics.pkt_t.sum()) * config.packet_bytes * 8
    return bits / (metrics.horizon_slots * config.slot_us)


def per_device_throughput_mbps(metrics: EpisodeMetrics, config: SimConfig) -> np.ndarray:
    bits = metrics.pkt_t * (config.packet_bytes * 8)
    return bits / (metrics.horizon_slots * config.slot_us)


def mean_delay_ms(metrics: EpisodeMetrics, config: SimConfig) -> float | None:
    """Mean over devices of each device's mean delay-at-success, in ms.

    Each success records the transmitter's slots-since-last-success counter;
    devices are weighted equally (not by success count) so that a device
    hogging the channel cannot mask the delays of starved peers. A device
    that never succeeded contributes its anticipated delay, the value of
    its counter when the horizon was reached. None when no device has a
    delay sample at all.
    """
    per_device = per_device_delay_ms(metrics, config)
    if np.all(np.isnan(per_device)):
        return None
    return float(np.nanmean(per_device))


def per_device_delay_ms(metrics: EpisodeMetrics, config: SimConfig) -> np.ndarray:
    """Per-device mean delay-at-success in ms.

    Devices with no success fall back to the anticipated delay carried at
    the horizon (``metrics.final_delay``); NaN if that is unavailable too.
    """
    sums = np.zeros(metrics.n_devices)
    counts = np.zeros(metrics.n_devices)
    for dev, _slot, delay in metrics.success_records:
        sums[dev] += delay
        counts[dev] += 1
    if metrics.final_delay is not None:
        starved = counts == 0
        sums[starved] = metrics.final_delay[starved]
        counts[starved] = 1
    with np.errstate(invalid="ignore", divide="ignore"):
        out = sums / counts * config.slot_us / 1000.0
    return out


def n_gap(values) -> float:
    """Normalized max-min gap (max - min) / max; lower means fairer."""
    vals = np.asarray(values, dtype=float)
    if vals.size == 0 or np.any(np.isnan(vals)):
        raise ValueError("n_gap requires complete, nonempty values")
    top = vals.max()
    if top <= 0:
        raise ValueError("n_gap requires max(values) > 0")
    return float((top - vals.min()) / top)
