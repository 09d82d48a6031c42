"""Experiment driver: seeded campaigns, metric aggregation, output files.

A campaign runs ``runs`` independent seeded runs of ``episodes`` episodes
each. Learned parameters persist across the episodes of a run; simulator
state (queues, counters, channel) is rebuilt fresh per episode. Outputs are
a per-episode CSV, a JSON summary with mean and standard deviation across
runs, and a per-episode time-series CSV for plotting.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ramac.baselines import BaselineConfig
from ramac.consensus import make_topology, rounds_from_lambda2
from ramac.controllers import (
    ALGO_PROPOSED,
    ALGO_RA_ACW,
    ALGO_RA_CTDE,
    ALGO_RA_FCW,
    ALGO_RA_P,
    ALGORITHMS,
    BackoffController,
    CTDEController,
    DecentralizedACController,
    FixedProbabilityController,
    run_episode,
)
from ramac.baselines import BACKOFF_BEB, BACKOFF_FIXED
from ramac.learning import CRITIC_SEMI_GRADIENT, CRITIC_STRICT
from ramac.mdp import MdpScaling
from ramac.simulator import (
    SimConfig,
    Simulator,
    mean_delay_ms,
    n_gap,
    per_device_delay_ms,
    per_device_throughput_mbps,
    throughput_mbps,
)

EPISODE_CSV_SCHEMA = "# ramac-episodes-v1"
TIMESERIES_CSV_SCHEMA = "# ramac-timeseries-v1"
OVERHEAD_CSV_SCHEMA = "# ramac-overhead-v1"

EPISODE_CSV_HEADER = (
    "run,episode,algo,tput_mbps,delay_ms,collisions,pkt_t,pkt_l,ngap_tput,ngap_delay"
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Full campaign description; every field is settable from the config file."""

    sim: SimConfig = field(default_factory=SimConfig)
    scaling: MdpScaling = field(default_factory=MdpScaling)
    algorithm: str = ALGO_PROPOSED
    episodes: int = 1200
    runs: int = 20
    master_seed: int = 1
    summary_window: int = 100
    # learner
    history_len: int = 4
    actor_width: int = 128
    actor_depth: int = 5
    actor_lr: float = 0.003
    critic_lr: float = 0.003
    critic_mode: str = CRITIC_SEMI_GRADIENT
    # bound on ||delta * grad log pi|| per actor step; None disables
    actor_grad_clip: float | None = 0.5
    # consensus topology
    neighbors_per_side: int = 1
    rewire_prob: float = 0.0
    topology_seed: int = 0
    consensus_eps: float | None = 0.005
    consensus_rounds: int | None = None
    weight_rule: str = "equal"
    # baselines
    baseline: BaselineConfig | None = None

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(
                f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}"
            )
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.summary_window < 1:
            raise ValueError("summary_window must be >= 1")
        if self.critic_mode not in (CRITIC_SEMI_GRADIENT, CRITIC_STRICT):
            raise ValueError(f"unknown critic_mode {self.critic_mode!r}")
        if self.baseline is None:
            object.__setattr__(
                self, "baseline", BaselineConfig(tx_prob=1.0 / self.sim.n_devices)
            )


_SIM_KEYS = (
    "n_devices",
    "horizon_slots",
    "slot_us",
    "difs_slots",
    "sifs_slots",
    "data_slots",
    "ack_slots",
    "packet_bytes",
    "q_max",
    "arrival_rate",
)
_SCALING_KEYS = ("omega0", "omega1", "omega2", "gamma")
_BASELINE_KEYS = ("tx_prob", "w_cw_fixed", "w_cw_initial", "w_cw_cap")
_TOP_KEYS = (
    "algorithm",
    "episodes",
    "runs",
    "master_seed",
    "summary_window",
    "history_len",
    "actor_width",
    "actor_depth",
    "actor_lr",
    "critic_lr",
    "critic_mode",
    "actor_grad_clip",
    "neighbors_per_side",
    "rewire_prob",
    "topology_seed",
    "consensus_eps",
    "consensus_rounds",
    "weight_rule",
)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a campaign config from a flat key-value mapping."""
    unknown = set(raw) - set(_SIM_KEYS) - set(_SCALING_KEYS) - set(_BASELINE_KEYS) - set(_TOP_KEYS)
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    sim = SimConfig(**{k: raw[k] for k in _SIM_KEYS if k in raw})
    scaling = MdpScaling(**{k: raw[k] for k in _SCALING_KEYS if k in raw})
    baseline_kwargs = {k: raw[k] for k in _BASELINE_KEYS if k in raw}
    baseline_kwargs.setdefault("tx_prob", 1.0 / sim.n_devices)
    top = {k: raw[k] for k in _TOP_KEYS if k in raw}
    if "consensus_rounds" in top and top["consensus_rounds"] is not None:
        top.setdefault("consensus_eps", None)
        top["consensus_eps"] = None
    return ExperimentConfig(
        sim=sim, scaling=scaling, baseline=BaselineConfig(**baseline_kwargs), **top
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path} must hold a flat key-value mapping")
    return config_from_dict(raw)


def make_controller(config: ExperimentConfig, seed_seq, learn: bool = True):
    algo = config.algorithm
    if algo == ALGO_RA_P:
        return FixedProbabilityController(config.sim, config.baseline, seed_seq)
    if algo == ALGO_RA_FCW:
        return BackoffController(config.sim, config.baseline, BACKOFF_FIXED, seed_seq)
    if algo == ALGO_RA_ACW:
        return BackoffController(config.sim, config.baseline, BACKOFF_BEB, seed_seq)
    learner_kwargs = dict(
        history_len=config.history_len,
        actor_width=config.actor_width,
        actor_depth=config.actor_depth,
        alpha=config.actor_lr,
        beta=config.critic_lr,
        critic_mode=config.critic_mode,
        grad_clip=config.actor_grad_clip,
        seed_seq=seed_seq,
        learn=learn,
    )
    if algo == ALGO_RA_CTDE:
        return CTDEController(config.sim, config.scaling, **learner_kwargs)
    topology = make_topology(
        config.sim.n_devices,
        neighbors_per_side=config.neighbors_per_side,
        rewire_prob=config.rewire_prob,
        seed=config.topology_seed,
        eps=config.consensus_eps,
        rounds=config.consensus_rounds,
        rule=config.weight_rule,
    )
    return DecentralizedACController(
        config.sim, config.scaling, topology, **learner_kwargs
    )


@dataclass
class EpisodeRow:
    """Derived metrics for one episode of one run."""

    run: int
    episode: int
    algo: str
    tput_mbps: float
    delay_ms: float | None            # mean success interval across devices
    collisions: int
    pkt_t: float                  # per-device mean successes
    pkt_l: float                  # per-device mean drops
    pkt_c: float                  # per-device mean collision involvement
    ngap_tput: float | None
    ngap_delay: float | None
    device_tput: np.ndarray
    device_delay: np.ndarray      # NaN where a device had no success


@dataclass
class CampaignResult:
    config: ExperimentConfig
    rows: list
    controllers: list             # one per run, in run order
    summary: dict


def _episode_row(run, episode, algo, sim, metrics, config: SimConfig) -> EpisodeRow:
    dev_tput = per_device_throughput_mbps(metrics, config)
    dev_delay = per_device_delay_ms(metrics, config)
    try:
        gap_t = n_gap(dev_tput)
    except ValueError:
        gap_t = None
    try:
        gap_d = n_gap(dev_delay)
    except ValueError:
        gap_d = None
    return EpisodeRow(
        run=run,
        episode=episode,
        algo=algo,
        tput_mbps=throughput_mbps(metrics, config),
        delay_ms=mean_delay_ms(metrics, config),
        collisions=metrics.collision_events,
        pkt_t=float(metrics.pkt_t.mean()),
        pkt_l=float(metrics.pkt_l.mean()),
        pkt_c=float(metrics.collisions_involved.mean()),
        ngap_tput=gap_t,
        ngap_delay=gap_d,
        device_tput=dev_tput,
        device_delay=dev_delay,
    )


def run_experiment(config: ExperimentConfig, progress=None) -> CampaignResult:
    """Execute the full campaign deterministically from the master seed."""
    rows: list[EpisodeRow] = []
    controllers = []
    n = config.sim.n_devices
    for run in range(config.runs):
        root = np.random.SeedSequence([config.master_seed, run])
        ctrl_seed, episodes_seed = root.spawn(2)
        controller = make_controller(config, ctrl_seed)
        episode_seeds = episodes_seed.spawn(config.episodes)
        for episode in range(config.episodes):
            sim = Simulator(config.sim, device_seeds=episode_seeds[episode].spawn(n))
            metrics = run_episode(sim, controller)
            rows.append(
                _episode_row(run, episode, config.algorithm, sim, metrics, config.sim)
            )
            if progress is not None:
                progress(run, episode)
        controllers.append(controller)
    summary = summarize(config, rows)
    return CampaignResult(config=config, rows=rows, controllers=controllers, summary=summary)


def _mean_std(values) -> dict:
    arr = np.asarray(values, dtype=float)
    arr = arr[~np.isnan(arr)]
    if arr.size == 0:
        return {"mean": None, "std": None}
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=0))}


def _fairness_block(mins, maxs, episode_gaps) -> dict:
    """Min/max columns plus the gap derived from them.

    N-Gap is (max - min) / max of the episode-averaged per-device extremes,
    the same arithmetic that links the published min/max/N-Gap columns.
    The mean per-episode gap is kept alongside for time-series plots.
    """
    lo, hi = _mean_std(mins), _mean_std(maxs)
    gap = None
    if lo["mean"] is not None and hi["mean"] is not None and hi["mean"] > 0:
        gap = (hi["mean"] - lo["mean"]) / hi["mean"]
    return {
        "min": lo,
        "max": hi,
        "N-Gap": gap,
        "episode-N-Gap": _mean_std(episode_gaps),
    }


def summarize(config: ExperimentConfig, rows: list) -> dict:
    """Aggregate the final ``summary_window`` episodes of each run.

    Per-run means are taken first, then mean and standard deviation across
    runs, mirroring an average over independent runs.
    """
    window = min(config.summary_window, config.episodes)
    first = config.episodes - window
    per_run: dict[str, list] = {
        k: []
        for k in (
            "pkt_t", "pkt_c", "pkt_l", "tput", "delay",
            "ngap_tput", "ngap_delay", "tput_min", "tput_max",
            "delay_min", "delay_max",
        )
    }
    for run in range(config.runs):
        tail = [r for r in rows if r.run == run and r.episode >= first]
        per_run["pkt_t"].append(np.mean([r.pkt_t for r in tail]))
        per_run["pkt_c"].append(np.mean([r.pkt_c for r in tail]))
        per_run["pkt_l"].append(np.mean([r.pkt_l for r in tail]))
        per_run["tput"].append(np.mean([r.tput_mbps for r in tail]))
        delays = [r.delay_ms for r in tail if r.delay_ms is not None]
        per_run["delay"].append(np.mean(delays) if delays else np.nan)
        gaps_t = [r.ngap_tput for r in tail if r.ngap_tput is not None]
        gaps_d = [r.ngap_delay for r in tail if r.ngap_delay is not None]
        per_run["ngap_tput"].append(np.mean(gaps_t) if gaps_t else np.nan)
        per_run["ngap_delay"].append(np.mean(gaps_d) if gaps_d else np.nan)
        per_run["tput_min"].append(np.mean([r.device_tput.min() for r in tail]))
        per_run["tput_max"].append(np.mean([r.device_tput.max() for r in tail]))
        dev_delay = np.array([r.device_delay for r in tail])
        with np.errstate(invalid="ignore"):
            per_run["delay_min"].append(float(np.nanmean(np.nanmin(dev_delay, axis=1))))
            per_run["delay_max"].append(float(np.nanmean(np.nanmax(dev_delay, axis=1))))

    return {
        "algorithm": config.algorithm,
        "runs": config.runs,
        "episodes": config.episodes,
        "summary_window": window,
        "Pkt-T": _mean_std(per_run["pkt_t"]),
        "Pkt-C": _mean_std(per_run["pkt_c"]),
        "Pkt-L": _mean_std(per_run["pkt_l"]),
        "TPut": _mean_std(per_run["tput"]),
        "Delay": _mean_std(per_run["delay"]),
        "fairness": {
            "TPut": _fairness_block(per_run["tput_min"], per_run["tput_max"],
                                    per_run["ngap_tput"]),
            "Delay": _fairness_block(per_run["delay_min"], per_run["delay_max"],
                                     per_run["ngap_delay"]),
        },
    }


# -- output files ------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.6f}"
    return str(value)


def emit_outputs(result: CampaignResult, out_dir) -> dict:
    """Write episodes.csv, summary.json, timeseries.csv; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "episodes": out / "episodes.csv",
        "summary": out / "summary.json",
        "timeseries": out / "timeseries.csv",
    }

    with open(paths["episodes"], "w") as fh:
        fh.write(EPISODE_CSV_SCHEMA + "\n")
        fh.write(EPISODE_CSV_HEADER + "\n")
        for r in result.rows:
            fh.write(
                ",".join(
                    [
                        str(r.run),
                        str(r.episode),
                        r.algo,
                        _fmt(r.tput_mbps),
                        _fmt(r.delay_ms),
                        str(r.collisions),
                        _fmt(r.pkt_t),
                        _fmt(r.pkt_l),
                        _fmt(r.ngap_tput),
                        _fmt(r.ngap_delay),
                    ]
                )
                + "\n"
            )

    with open(paths["summary"], "w") as fh:
        json.dump(result.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    # Per-episode means across runs, for training-curve plots.
    episodes = result.config.episodes
    with open(paths["timeseries"], "w") as fh:
        fh.write(TIMESERIES_CSV_SCHEMA + "\n")
        fh.write("episode,tput_mbps,delay_ms,collisions,ngap_tput,ngap_delay\n")
        by_episode: dict[int, list] = {}
        for r in result.rows:
            by_episode.setdefault(r.episode, []).append(r)
        for ep in range(episodes):
            group = by_episode.get(ep, [])
            def col(getter):
                vals = [getter(r) for r in group]
                vals = [v for v in vals if v is not None]
                return float(np.mean(vals)) if vals else None
            fh.write(
                ",".join(
                    [
                        str(ep),
                        _fmt(col(lambda r: r.tput_mbps)),
                        _fmt(col(lambda r: r.delay_ms)),
                        _fmt(col(lambda r: float(r.collisions))),
                        _fmt(col(lambda r: r.ngap_tput)),
                        _fmt(col(lambda r: r.ngap_delay)),
                    ]
                )
                + "\n"
            )
    return paths


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(result: CampaignResult, out_dir) -> Path:
    """Persist per-device learner parameters for every run (learning algorithms)."""
    out = Path(out_dir) / "checkpoints"
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    for run, controller in enumerate(result.controllers):
        if not hasattr(controller, "learners"):
            continue
        arrays = {}
        for i, lrn in enumerate(controller.learners):
            for k, (w, b) in enumerate(zip(lrn.actor.weights, lrn.actor.biases)):
                arrays[f"actor_{i}_w{k}"] = w
                arrays[f"actor_{i}_b{k}"] = b
            arrays[f"critic_{i}_w"] = lrn.critic.w
        if hasattr(controller, "central_critic"):
            arrays["central_critic_w"] = controller.central_critic.w
        np.savez(out / f"run_{run:04d}.npz", **arrays)
    meta = {
        "algorithm": cfg.algorithm,
        "episodes": cfg.episodes,
        "runs": cfg.runs,
        "master_seed": cfg.master_seed,
        "n_devices": cfg.sim.n_devices,
        "history_len": cfg.history_len,
        "actor_width": cfg.actor_width,
        "actor_depth": cfg.actor_depth,
        "config": flatten_config(cfg),
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def load_checkpoint(checkpoint_dir, run: int = 0):
    """Rebuild a frozen controller from a saved checkpoint."""
    ckpt = Path(checkpoint_dir)
    with open(ckpt / "meta.json") as fh:
        meta = json.load(fh)
    config = config_from_dict(meta["config"])
    controller = make_controller(
        config, np.random.SeedSequence([config.master_seed, run]).spawn(2)[0], learn=False
    )
    data = np.load(ckpt / f"run_{run:04d}.npz")
    for i, lrn in enumerate(controller.learners):
        for k in range(len(lrn.actor.weights)):
            lrn.actor.weights[k][...] = data[f"actor_{i}_w{k}"]
            lrn.actor.biases[k][...] = data[f"actor_{i}_b{k}"]
        lrn.critic.w[...] = data[f"critic_{i}_w"]
    if hasattr(controller, "central_critic") and "central_critic_w" in data:
        controller.central_critic.w[...] = data["central_critic_w"]
    return controller, config


def flatten_config(config: ExperimentConfig) -> dict:
    """Flat key-value form of a config, matching the config-file schema."""
    raw = {}
    for k in _SIM_KEYS:
        raw[k] = getattr(config.sim, k)
    for k in _SCALING_KEYS:
        raw[k] = getattr(config.scaling, k)
    for k in _BASELINE_KEYS:
        raw[k] = getattr(config.baseline, k)
    for k in _TOP_KEYS:
        raw[k] = getattr(config, k)
    return raw


# -- communication overhead comparison ----------------------------------------

def overhead_table(
    n_values,
    history_len: int = 4,
    eps: float = 0.005,
    lambda2: float = 1.0 / 3.0,
) -> list[dict]:
    """Parameters exchanged per learning step: central collection vs gossip.

    Central collection costs N * [M * (D_o + D_a) + D_r] with the published
    per-algorithm dimensions (Guo: D_o = N + 2, D_a = 1, D_r = 2; Yu:
    D_o = 1, D_a = 1, D_r = N * M). Scalar-reward gossip costs N * K * G
    with K = ceil(N / 4) average links per device and G derived from the
    accuracy target via the experimental weight matrix's eigenvalue.
    """
    g_rounds = rounds_from_lambda2(lambda2, eps)
    table = []
    for n in n_values:
        if n < 1:
            raise ValueError("device counts must be >= 1")
        m = history_len
        k_links = math.ceil(n / 4)
        table.append(
            {
                "n": int(n),
                "k_links": k_links,
                "g_rounds": g_rounds,
                "ctde_guo": int(n * (m * ((n + 2) + 1) + 2)),
                "ctde_yu": int(n * (m * (1 + 1) + n * m)),
                "decentralized": int(n * k_links * g_rounds * 1),
            }
        )
    return table


def write_overhead_csv(table: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write(OVERHEAD_CSV_SCHEMA + "\n")
        fh.write("n,k_links,g_rounds,ctde_guo,ctde_yu,decentralized\n")
        for row in table:
            fh.write(
                f"{row['n']},{row['k_links']},{row['g_rounds']},"
                f"{row['ctde_guo']},{row['ctde_yu']},{row['decentralized']}\n"
            )
