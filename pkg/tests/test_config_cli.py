import json
import os
import shutil

import numpy as np
import pytest

from koopnet.cli import main
from koopnet.config import (
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    load_config,
)


def base_config(**overrides):
    cfg = {
        "model": {"family": "erdos_renyi", "n_nodes": 4, "edge_prob": 0.4, "seed": 3},
        "dataset": {"n_samples": 100, "t_sample": 0.01, "seed": 5},
        "dual": {"gamma": 0.1},
        "topology": {"threshold": 0.1},
        "threads": 1,
    }
    for key, value in overrides.items():
        cfg[key] = value
    return cfg


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


class TestConfig:
    def test_roundtrip_lossless(self):
        cfg = config_from_dict(base_config())
        again = config_from_dict(cfg.to_dict())
        assert again.to_dict() == cfg.to_dict()

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown top-level"):
            config_from_dict(base_config(bogus={}))

    def test_unknown_nested_key(self):
        cfg = base_config()
        cfg["dataset"]["K"] = 10
        with pytest.raises(ConfigError, match="dataset.*unknown keys.*K"):
            config_from_dict(cfg)

    def test_unknown_family(self):
        cfg = base_config()
        cfg["model"]["family"] = "scale_free"
        with pytest.raises(ConfigError, match="family"):
            config_from_dict(cfg)

    def test_nonpoly_divisibility(self):
        cfg = base_config()
        cfg["model"] = {"family": "nonpolynomial", "n_nodes": 10, "seed": 1}
        with pytest.raises(ConfigError, match="multiple of 4"):
            config_from_dict(cfg)

    def test_zero_samples_rejected(self):
        cfg = base_config()
        cfg["dataset"]["n_samples"] = 0
        with pytest.raises(ConfigError, match="n_samples"):
            config_from_dict(cfg)

    def test_sweep_validation(self):
        cfg = base_config(sweep={"axis": "bananas", "values": [1], "repeats": 1})
        with pytest.raises(ConfigError, match="sweep.axis"):
            config_from_dict(cfg)

    def test_sweep_needs_values(self):
        cfg = base_config(sweep={"axis": "t_sample", "values": [], "repeats": 1})
        with pytest.raises(ConfigError, match="non-empty"):
            config_from_dict(cfg)

    def test_load_config_reports_bad_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_defaults_applied(self):
        cfg = config_from_dict(base_config())
        assert cfg.topology.penalty_fraction == 0.01
        assert cfg.local.neighbor_lift == "midpoint"
        assert cfg.metrics.paper_strict is False


class TestCLI:
    def test_simulate_identify_score_flow(self, tmp_path):
        cfg_path = write_config(tmp_path, base_config())
        sim_dir = str(tmp_path / "sim")
        assert main(["simulate", "--config", cfg_path, "--out", sim_dir]) == 0
        assert os.path.exists(os.path.join(sim_dir, "dataset", "X.csv"))
        assert os.path.exists(os.path.join(sim_dir, "model.json"))

        out_dir = str(tmp_path / "run")
        code = main([
            "identify", "--config", cfg_path,
            "--data", os.path.join(sim_dir, "dataset"), "--out", out_dir,
        ])
        assert code == 0
        for name in ("lambda.csv", "delta.csv", "topology.json",
                     "parameters.json", "score.csv", "score.txt", "roc.csv",
                     "global_A.csv", "manifest.json"):
            assert os.path.exists(os.path.join(out_dir, name)), name

        score_dir = str(tmp_path / "rescore")
        code = main([
            "score",
            "--truth", os.path.join(sim_dir, "model.json"),
            "--params", os.path.join(out_dir, "parameters.json"),
            "--topology", os.path.join(out_dir, "topology.json"),
            "--out", score_dir,
        ])
        assert code == 0
        assert os.path.exists(os.path.join(score_dir, "score.csv"))

    def test_identify_without_truth_skips_scoring(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, base_config())
        sim_dir = str(tmp_path / "sim")
        main(["simulate", "--config", cfg_path, "--out", sim_dir])
        bare = tmp_path / "bare_dataset"
        shutil.copytree(os.path.join(sim_dir, "dataset"), bare)

        out_dir = str(tmp_path / "run")
        code = main(["identify", "--config", cfg_path, "--data", str(bare), "--out", out_dir])
        assert code == 0
        assert "scoring skipped" in capsys.readouterr().out
        assert not os.path.exists(os.path.join(out_dir, "score.csv"))

    def test_baseline_dual_runs(self, tmp_path):
        cfg_path = write_config(tmp_path, base_config())
        sim_dir = str(tmp_path / "sim")
        main(["simulate", "--config", cfg_path, "--out", sim_dir])
        out_dir = str(tmp_path / "baseline")
        code = main([
            "baseline-dual", "--config", cfg_path,
            "--data", os.path.join(sim_dir, "dataset"), "--out", out_dir,
        ])
        assert code == 0
        assert os.path.exists(os.path.join(out_dir, "score.csv"))

    def test_identify_byte_identical_across_runs_and_threads(self, tmp_path):
        cfg_path = write_config(tmp_path, base_config())
        sim_dir = str(tmp_path / "sim")
        main(["simulate", "--config", cfg_path, "--out", sim_dir])
        data = os.path.join(sim_dir, "dataset")
        outs = []
        for name, threads in (("a", "1"), ("b", "1"), ("c", "2")):
            out_dir = str(tmp_path / name)
            assert main([
                "identify", "--config", cfg_path, "--data", data,
                "--out", out_dir, "--threads", threads,
            ]) == 0
            outs.append(out_dir)
        for name in ("lambda.csv", "delta.csv", "score.csv", "global_A.csv",
                     "parameters.json", "topology.json", "roc.csv"):
            ref = open(os.path.join(outs[0], name), "rb").read()
            for other in outs[1:]:
                assert open(os.path.join(other, name), "rb").read() == ref, name

    def test_simulate_deterministic(self, tmp_path):
        cfg_path = write_config(tmp_path, base_config())
        a, b = str(tmp_path / "s1"), str(tmp_path / "s2")
        main(["simulate", "--config", cfg_path, "--out", a])
        main(["simulate", "--config", cfg_path, "--out", b])
        for name in ("X.csv", "U.csv", "Y.csv"):
            assert (
                open(os.path.join(a, "dataset", name), "rb").read()
                == open(os.path.join(b, "dataset", name), "rb").read()
            )

    def test_sweep_outputs(self, tmp_path):
        cfg = base_config(sweep={
            "axis": "t_sample", "values": [0.01, 0.02], "repeats": 1,
            "method": "two_step",
        })
        cfg_path = write_config(tmp_path, cfg)
        out_dir = str(tmp_path / "sweep")
        assert main(["sweep", "--config", cfg_path, "--out", out_dir]) == 0
        lines = open(os.path.join(out_dir, "sweep.csv")).read().strip().splitlines()
        assert len(lines) == 3  # header + one row per value
        assert lines[0].startswith("axis,value,repeat,method")
        assert os.path.exists(os.path.join(out_dir, "summary.csv"))
        assert os.path.exists(os.path.join(out_dir, "timings.csv"))

    def test_sweep_deterministic_excluding_timings(self, tmp_path):
        cfg = base_config(sweep={
            "axis": "n_samples", "values": [60], "repeats": 2, "method": "two_step",
        })
        cfg_path = write_config(tmp_path, cfg)
        a, b = str(tmp_path / "sw1"), str(tmp_path / "sw2")
        main(["sweep", "--config", cfg_path, "--out", a])
        main(["sweep", "--config", cfg_path, "--out", b])
        assert (
            open(os.path.join(a, "sweep.csv"), "rb").read()
            == open(os.path.join(b, "sweep.csv"), "rb").read()
        )

    def test_bad_config_exit_code(self, tmp_path):
        cfg = base_config()
        cfg["dataset"]["n_samples"] = 0
        cfg_path = write_config(tmp_path, cfg)
        assert main(["simulate", "--config", cfg_path, "--out", str(tmp_path / "x")]) == 2

    def test_seed_override(self, tmp_path):
        cfg_path = write_config(tmp_path, base_config())
        a, b = str(tmp_path / "o1"), str(tmp_path / "o2")
        main(["simulate", "--config", cfg_path, "--out", a, "--seed-override", "99"])
        main(["simulate", "--config", cfg_path, "--out", b])
        assert (
            open(os.path.join(a, "dataset", "X.csv")).read()
            != open(os.path.join(b, "dataset", "X.csv")).read()
        )

    def test_env_var_thread_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv("KOOPNET_THREADS", "2")
        cfg_path = write_config(tmp_path, base_config())
        out = str(tmp_path / "env")
        assert main(["simulate", "--config", cfg_path, "--out", out]) == 0
