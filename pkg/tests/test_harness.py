"""Campaign harness tests: configuration, aggregation, outputs, checkpoints,
overhead accounting, and the command-line entry points."""

import dataclasses
import json

import numpy as np
import pytest

from ramac.cli import main
from ramac.harness import (
    ExperimentConfig,
    config_from_dict,
    emit_outputs,
    flatten_config,
    load_checkpoint,
    load_config,
    make_controller,
    overhead_table,
    run_experiment,
    save_checkpoint,
    summarize,
    write_overhead_csv,
)
from ramac.controllers import (
    ALGO_PROPOSED,
    ALGO_RA_ACW,
    ALGO_RA_CTDE,
    ALGO_RA_FCW,
    ALGO_RA_P,
    BackoffController,
    CTDEController,
    DecentralizedACController,
    FixedProbabilityController,
)


def tiny_config(**overrides):
    base = ExperimentConfig(algorithm=ALGO_RA_P, episodes=3, runs=2, master_seed=5)
    sim = dataclasses.replace(base.sim, horizon_slots=400)
    return dataclasses.replace(base, sim=sim, **overrides)


def learner_config(algo, **overrides):
    cfg = tiny_config(
        algorithm=algo, episodes=2, runs=1, actor_width=8, actor_depth=2,
        history_len=2, summary_window=2,
    )
    return dataclasses.replace(cfg, **overrides)


class TestConfig:
    def test_defaults_valid(self):
        cfg = ExperimentConfig()
        assert cfg.algorithm == ALGO_PROPOSED
        assert cfg.sim.n_devices == 4

    def test_unknown_algorithm_rejected(self):
        with pytest.raises(ValueError):
            ExperimentConfig(algorithm="csma-ca-2000")

    def test_flatten_roundtrip(self):
        cfg = tiny_config()
        again = config_from_dict(flatten_config(cfg))
        assert again == cfg

    def test_flatten_roundtrip_learner_fields(self):
        cfg = learner_config(ALGO_PROPOSED, actor_lr=0.002, actor_grad_clip=0.5)
        again = config_from_dict(flatten_config(cfg))
        assert again.actor_lr == 0.002 and again.actor_grad_clip == 0.5

    def test_unknown_key_rejected(self):
        with pytest.raises((TypeError, ValueError)):
            config_from_dict({"episodes": 3, "warp_drive": True})

    def test_yaml_file_loads(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("algorithm: ra_p\nepisodes: 4\nmaster_seed: 9\n")
        cfg = load_config(path)
        assert cfg.algorithm == ALGO_RA_P and cfg.episodes == 4 and cfg.master_seed == 9


class TestMakeController:
    def test_each_algorithm_maps_to_class(self):
        pairs = [
            (ALGO_RA_P, FixedProbabilityController),
            (ALGO_RA_FCW, BackoffController),
            (ALGO_RA_ACW, BackoffController),
            (ALGO_RA_CTDE, CTDEController),
            (ALGO_PROPOSED, DecentralizedACController),
        ]
        for algo, klass in pairs:
            cfg = learner_config(algo)
            ctrl = make_controller(cfg, np.random.SeedSequence(0))
            assert isinstance(ctrl, klass)

    def test_ra_p_defaults_to_one_over_n(self):
        cfg = tiny_config()
        assert cfg.baseline.tx_prob == pytest.approx(1.0 / cfg.sim.n_devices)


class TestRunAndSummarize:
    def test_row_count_and_summary_shape(self):
        cfg = tiny_config()
        result = run_experiment(cfg)
        assert len(result.rows) == cfg.runs * cfg.episodes
        s = result.summary
        assert set(s) >= {"TPut", "Delay", "Pkt-T", "fairness"}
        assert "N-Gap" in s["fairness"]["TPut"]

    def test_summary_window_restricts_episodes(self):
        cfg = tiny_config(summary_window=1)
        result = run_experiment(cfg)
        last = [r for r in result.rows if r.episode == cfg.episodes - 1]
        expect = float(np.mean([r.tput_mbps for r in last]))
        assert result.summary["TPut"]["mean"] == pytest.approx(expect)

    def test_fairness_gap_from_averaged_extremes(self):
        cfg = tiny_config(summary_window=3)
        result = run_experiment(cfg)
        fb = result.summary["fairness"]["TPut"]
        lo, hi = fb["min"]["mean"], fb["max"]["mean"]
        assert fb["N-Gap"] == pytest.approx((hi - lo) / hi)

    def test_determinism_same_seed(self):
        a = run_experiment(tiny_config())
        b = run_experiment(tiny_config())
        for ra, rb in zip(a.rows, b.rows):
            assert ra.tput_mbps == rb.tput_mbps and ra.collisions == rb.collisions

    def test_different_seed_differs(self):
        a = run_experiment(tiny_config())
        b = run_experiment(tiny_config(master_seed=6))
        assert any(ra.tput_mbps != rb.tput_mbps for ra, rb in zip(a.rows, b.rows))

    def test_learning_campaign_runs(self):
        result = run_experiment(learner_config(ALGO_PROPOSED))
        assert len(result.rows) == 2
        assert hasattr(result.controllers[0], "learners")


class TestOutputs:
    def test_emitted_files_exist_and_parse(self, tmp_path):
        result = run_experiment(tiny_config())
        paths = emit_outputs(result, tmp_path)
        lines = paths["episodes"].read_text().splitlines()
        assert lines[0].startswith("#") and len(lines) == 2 + len(result.rows)
        summary = json.loads(paths["summary"].read_text())
        assert summary["TPut"]["mean"] == pytest.approx(
            result.summary["TPut"]["mean"]
        )
        ts = paths["timeseries"].read_text().splitlines()
        assert len(ts) == 2 + result.config.episodes

    def test_byte_identical_reruns(self, tmp_path):
        cfg = tiny_config()
        pa = emit_outputs(run_experiment(cfg), tmp_path / "a")
        pb = emit_outputs(run_experiment(cfg), tmp_path / "b")
        for key in ("episodes", "summary", "timeseries"):
            assert pa[key].read_bytes() == pb[key].read_bytes()


class TestCheckpoints:
    @pytest.mark.parametrize("algo", [ALGO_PROPOSED, ALGO_RA_CTDE])
    def test_roundtrip_preserves_parameters(self, tmp_path, algo):
        result = run_experiment(learner_config(algo))
        ckpt = save_checkpoint(result, tmp_path)
        controller, config = load_checkpoint(ckpt, run=0)
        saved = result.controllers[0]
        for lrn_a, lrn_b in zip(saved.learners, controller.learners):
            for wa, wb in zip(lrn_a.actor.weights, lrn_b.actor.weights):
                assert np.array_equal(wa, wb)
            assert np.array_equal(lrn_a.critic.w, lrn_b.critic.w)
        assert config.algorithm == algo

    def test_loaded_controller_is_frozen(self, tmp_path):
        result = run_experiment(learner_config(ALGO_PROPOSED))
        ckpt = save_checkpoint(result, tmp_path)
        controller, _ = load_checkpoint(ckpt, run=0)
        assert controller.learn is False

    def test_non_learning_algo_saves_meta_only(self, tmp_path):
        result = run_experiment(tiny_config())
        ckpt = save_checkpoint(result, tmp_path)
        assert (ckpt / "meta.json").exists()
        assert not list(ckpt.glob("run_*.npz"))


class TestOverhead:
    def test_reference_values_at_four_devices(self):
        row = overhead_table([4])[0]
        assert row["ctde_guo"] == 120
        assert row["ctde_yu"] == 96
        assert row["decentralized"] == 12
        assert row["g_rounds"] == 3

    def test_decentralized_cheapest_for_all_sizes(self):
        for row in overhead_table(range(2, 65)):
            assert row["decentralized"] < row["ctde_guo"]
            assert row["decentralized"] < row["ctde_yu"]

    def test_invalid_count_rejected(self):
        with pytest.raises(ValueError):
            overhead_table([0])

    def test_csv_writer(self, tmp_path):
        path = tmp_path / "overhead.csv"
        write_overhead_csv(overhead_table([2, 4]), path)
        lines = path.read_text().splitlines()
        assert len(lines) == 4 and lines[1].startswith("n,")


class TestCli:
    def test_train_eval_overhead_smoke(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(
            "algorithm: proposed\nepisodes: 2\nruns: 1\nhorizon_slots: 400\n"
            "actor_width: 8\nactor_depth: 2\nhistory_len: 2\nsummary_window: 2\n"
        )
        out = tmp_path / "out"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "episodes.csv").exists()
        capsys.readouterr()

        ckpt = out / "checkpoints"
        assert main(["eval", "--checkpoint", str(ckpt), "--episodes", "2"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert "TPut" in summary

        csv = tmp_path / "oh.csv"
        assert main(["overhead", "--nmax", "4", "--out", str(csv)]) == 0
        assert csv.exists()

    def test_train_overrides(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(
            ["train", "--out", str(out), "--algo", "ra_p", "--episodes", "2",
             "--runs", "1", "--seed", "3"]
        )
        assert rc == 0
        lines = (out / "episodes.csv").read_text().splitlines()
        assert len(lines) == 4 and ",ra_p," in lines[2]
        capsys.readouterr()
