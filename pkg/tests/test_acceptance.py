"""End-to-end acceptance gate.

Each numbered test checks one published-results criterion and reports a
single PASS/FAIL line (collected by conftest into the terminal summary).
The learning campaigns are the dominant cost; their scale can be reduced
for quick development runs via RAMAC_ACCEPT_RUNS / RAMAC_ACCEPT_EPISODES
(defaults are the full 20 runs x 1200 episodes).
"""

import dataclasses
import os
import time

import numpy as np
import pytest

from ramac.consensus import gossip, make_topology, second_eigenvalue
from ramac.harness import (
    ExperimentConfig,
    emit_outputs,
    make_controller,
    overhead_table,
    run_experiment,
)
from ramac.learning import (
    ActorMLP,
    LinearCritic,
    critic_update,
    policy_forward,
    td_error,
)
from ramac.controllers import (
    ALGO_PROPOSED,
    ALGO_RA_ACW,
    ALGO_RA_CTDE,
    ALGO_RA_FCW,
    ALGO_RA_P,
    ALGORITHMS,
    run_episode,
)
from ramac.simulator import Simulator

RUNS = int(os.environ.get("RAMAC_ACCEPT_RUNS", "20"))
EPISODES = int(os.environ.get("RAMAC_ACCEPT_EPISODES", "1200"))

_cache: dict = {}


def campaign(algo, episodes, runs, **overrides):
    key = (algo, episodes, runs, tuple(sorted(overrides.items())))
    if key not in _cache:
        cfg = ExperimentConfig(
            algorithm=algo, episodes=episodes, runs=runs, **overrides
        )
        _cache[key] = run_experiment(cfg)
    return _cache[key]


def baseline_campaign(algo):
    # non-learning policies hold no episode-to-episode trend; 50 episodes
    # per run give the same statistics as a long campaign
    return campaign(algo, episodes=50, runs=RUNS, summary_window=50)


def learning_campaign(algo):
    return campaign(algo, episodes=EPISODES, runs=RUNS, summary_window=100)


def tput_by_phase(result, window=100):
    """Mean throughput over the first and last `window` episodes of each run."""
    cutoff = result.config.episodes - window
    first = [r.tput_mbps for r in result.rows if r.episode < window]
    last = [r.tput_mbps for r in result.rows if r.episode >= cutoff]
    return float(np.mean(first)), float(np.mean(last))


class TestCriterion1Consensus:
    def test_consensus_suite(self, criterion_report):
        t0 = time.time()
        rng = np.random.default_rng(0)
        ok = True
        details = []

        topo4 = make_topology(4, eps=0.005)
        if topo4.rounds != 3:
            ok = False
            details.append(f"rounds {topo4.rounds} != 3")
        for n in (4, 8):
            topo = make_topology(n, eps=0.005)
            lam2 = second_eigenvalue(topo.weights)
            for _ in range(100):
                x = rng.normal(size=n)
                xbar = x.mean()
                y = gossip(x, topo)
                if abs(y.mean() - xbar) > 1e-10:
                    ok = False
                    details.append(f"mean drift {abs(y.mean() - xbar):.2e}")
                    break
                bound = lam2 ** topo.rounds * np.linalg.norm(x - xbar) + 1e-9
                if np.linalg.norm(y - xbar) > bound:
                    ok = False
                    details.append("contraction bound violated")
                    break
        elapsed = time.time() - t0
        if elapsed >= 1.0:
            ok = False
            details.append(f"runtime {elapsed:.2f}s >= 1s")
        criterion_report(
            1, ok,
            details[0] if details else
            f"consensus exact: mean drift <= 1e-10, contraction bound holds, "
            f"G=3 at eps=0.005 ({elapsed:.2f}s)",
        )


class TestCriterion2Gradients:
    def test_gradient_suite(self, criterion_report):
        t0 = time.time()
        worst = 0.0
        eps = 1e-6
        for trial in range(50):
            rng = np.random.default_rng(100 + trial)
            dim = int(rng.integers(3, 8))
            actor = ActorMLP(dim, width=6, depth=3, rng=rng)
            x = rng.normal(size=dim)
            action = int(rng.integers(2))
            grads_w, _ = actor.grad_log_prob(x, action)
            for k in range(len(actor.weights)):
                for idx in rng.integers(actor.weights[k].size, size=2):
                    i, j = np.unravel_index(idx, actor.weights[k].shape)
                    orig = actor.weights[k][i, j]
                    actor.weights[k][i, j] = orig + eps
                    up = np.log(policy_forward(actor, x)[action])
                    actor.weights[k][i, j] = orig - eps
                    down = np.log(policy_forward(actor, x)[action])
                    actor.weights[k][i, j] = orig
                    fd = (up - down) / (2 * eps)
                    scale = max(abs(fd), abs(grads_w[k][i, j]), 1e-8)
                    worst = max(worst, abs(grads_w[k][i, j] - fd) / scale)
            # critic gradient: dV/dw is the augmented feature vector
            critic = LinearCritic(dim)
            critic.w[:] = rng.normal(size=dim + 1)
            phi = rng.normal(size=dim)
            for i in range(dim + 1):
                orig = critic.w[i]
                critic.w[i] = orig + eps
                up = critic.value(phi)
                critic.w[i] = orig - eps
                down = critic.value(phi)
                critic.w[i] = orig
                fd = (up - down) / (2 * eps)
                grad = critic.augment(phi)[i]
                scale = max(abs(fd), abs(grad), 1e-8)
                worst = max(worst, abs(grad - fd) / scale)
        elapsed = time.time() - t0
        ok = worst <= 1e-4 and elapsed < 10.0
        criterion_report(
            2, ok,
            f"gradients vs finite differences: worst relative error "
            f"{worst:.2e} (tol 1e-4, {elapsed:.1f}s)",
        )


class TestCriterion3Conservation:
    def test_conservation_all_algorithms(self, criterion_report):
        t0 = time.time()
        per_algo = 200  # 5 algorithms x 200 = 1000 episodes
        failures = 0
        for i, algo in enumerate(ALGORITHMS):
            cfg = ExperimentConfig(
                algorithm=algo, episodes=per_algo, runs=1, master_seed=42,
                actor_width=8, actor_depth=2, history_len=2,
            )
            controller = make_controller(cfg, np.random.SeedSequence([42, i]))
            seeds = np.random.SeedSequence([3, 1]).spawn(per_algo)
            for ep in range(per_algo):
                sim = Simulator(cfg.sim, device_seeds=seeds[ep].spawn(cfg.sim.n_devices))
                run_episode(sim, controller)
                try:
                    sim.check_conservation()
                except AssertionError:
                    failures += 1
        elapsed = time.time() - t0
        ok = failures == 0 and elapsed < 60.0
        criterion_report(
            3, ok,
            f"packet conservation: {failures} violations in 1000 episodes "
            f"across 5 algorithms ({elapsed:.0f}s)",
        )


class TestCriterion4Baselines:
    PAPER_TPUT = {ALGO_RA_P: 39.783, ALGO_RA_FCW: 50.006, ALGO_RA_ACW: 45.639}

    def test_baseline_regression(self, criterion_report):
        tput, delay = {}, {}
        for algo in self.PAPER_TPUT:
            s = baseline_campaign(algo).summary
            tput[algo] = s["TPut"]["mean"]
            delay[algo] = s["Delay"]["mean"]
        rel = {
            a: abs(tput[a] - ref) / ref for a, ref in self.PAPER_TPUT.items()
        }
        ordering = delay[ALGO_RA_FCW] < delay[ALGO_RA_P] < delay[ALGO_RA_ACW]
        ok = max(rel.values()) <= 0.15 and ordering
        criterion_report(
            4, ok,
            f"baseline TPut ra_p={tput[ALGO_RA_P]:.1f} ra_fcw={tput[ALGO_RA_FCW]:.1f} "
            f"ra_acw={tput[ALGO_RA_ACW]:.1f} Mbps (worst dev {max(rel.values()):.1%} "
            f"of 15%), delay ordering fcw<p<acw={'yes' if ordering else 'NO'}",
        )


class TestCriterion5LearningOutcome:
    def test_learning_outcome(self, criterion_report):
        result = learning_campaign(ALGO_PROPOSED)
        s = result.summary
        final_tput = s["TPut"]["mean"]
        final_delay = s["Delay"]["mean"]
        last = [
            r for r in result.rows
            if r.episode >= result.config.episodes - 100
        ]
        final_coll = float(np.mean([r.collisions for r in last]))
        first_tput, last_tput = tput_by_phase(result)
        improv = (last_tput - first_tput) / first_tput
        ok = (
            final_tput >= 55.0
            and final_coll <= 1.0
            and final_delay <= 0.85
            and improv >= 0.30
        )
        criterion_report(
            5, ok,
            f"proposed after {result.config.episodes}x{result.config.runs}: "
            f"TPut {final_tput:.2f} (>=55), collisions {final_coll:.2f} (<=1.0), "
            f"delay {final_delay:.3f} ms (<=0.85), improvement {improv:.0%} (>=30%)",
        )


class TestCriterion6Fairness:
    def test_fairness_gaps(self, criterion_report):
        f = learning_campaign(ALGO_PROPOSED).summary["fairness"]
        gap_t, gap_d = f["TPut"]["N-Gap"], f["Delay"]["N-Gap"]
        base_gaps = {}
        for algo in (ALGO_RA_P, ALGO_RA_FCW, ALGO_RA_ACW):
            fb = baseline_campaign(algo).summary["fairness"]
            base_gaps[algo] = min(fb["TPut"]["N-Gap"], fb["Delay"]["N-Gap"])
        ok = gap_t <= 0.20 and gap_d <= 0.20 and min(base_gaps.values()) >= 0.55
        criterion_report(
            6, ok,
            f"N-Gap proposed tput {gap_t:.3f} / delay {gap_d:.3f} (<=0.20); "
            f"baseline minimum {min(base_gaps.values()):.3f} (>=0.55)",
        )


class TestCriterion7CtdeParity:
    def test_ctde_parity(self, criterion_report):
        prop = learning_campaign(ALGO_PROPOSED).summary["TPut"]["mean"]
        ctde = learning_campaign(ALGO_RA_CTDE).summary["TPut"]["mean"]
        rel = abs(ctde - prop) / prop
        ok = rel <= 0.05
        criterion_report(
            7, ok,
            f"CTDE parity: proposed {prop:.2f} vs ctde {ctde:.2f} Mbps "
            f"({rel:.1%} relative, <=5%)",
        )


class TestCriterion8Overhead:
    def test_overhead_table(self, criterion_report):
        table = overhead_table(range(2, 65), history_len=4, eps=0.005)
        by_n = {row["n"]: row for row in table}
        exact = by_n[4]["ctde_guo"] == 120 and by_n[4]["decentralized"] == 12
        ordering = all(
            row["decentralized"] < min(row["ctde_guo"], row["ctde_yu"])
            for row in table
        )
        ok = exact and ordering
        criterion_report(
            8, ok,
            f"overhead: N=4 central {by_n[4]['ctde_guo']} (=120), "
            f"decentralized {by_n[4]['decentralized']} (=12); "
            f"decentralized cheapest for all N in 2..64: {'yes' if ordering else 'NO'}",
        )


class TestCriterion9TdFixedPoint:
    def test_td_fixed_point(self, criterion_report):
        P = np.array([[0.7, 0.3], [0.4, 0.6]])
        R = np.array([1.0, -0.5])
        gamma = 0.9
        v_star = np.linalg.solve(np.eye(2) - gamma * P, R)
        evals, evecs = np.linalg.eig(P.T)
        pi = np.real(evecs[:, np.argmax(np.real(evals))])
        pi /= pi.sum()
        features = np.eye(2)
        critic = LinearCritic(2)
        beta = 0.05
        for _ in range(100_000):
            tds = {
                (s, s2): td_error(critic, R[s], features[s2], features[s], gamma)
                for s in range(2)
                for s2 in range(2)
            }
            for (s, s2), td in tds.items():
                critic_update(critic, td, features[s], beta * pi[s] * P[s, s2])
        values = np.array([critic.value(features[s]) for s in range(2)])
        err = float(np.abs(values - v_star).max())
        ok = err <= 1e-3
        criterion_report(
            9, ok,
            f"TD fixed point: value error {err:.2e} after 1e5 updates (tol 1e-3)",
        )


class TestCriterion10Determinism:
    def test_byte_identical_outputs(self, criterion_report, tmp_path):
        cfg = ExperimentConfig(
            algorithm=ALGO_PROPOSED, episodes=3, runs=2, master_seed=11,
            actor_width=8, actor_depth=2, history_len=2, summary_window=3,
        )
        pa = emit_outputs(run_experiment(cfg), tmp_path / "a")
        pb = emit_outputs(run_experiment(cfg), tmp_path / "b")
        same = all(pa[k].read_bytes() == pb[k].read_bytes() for k in pa)
        criterion_report(
            10, same,
            "repeated campaign with identical seed yields byte-identical CSVs",
        )
