"""End-to-end CLI tests on a tiny configuration, plus config-layer units.

The pipeline fixtures run gen-data / train-lp / train-planner once per
module and the command tests reuse those artifacts.
"""

import csv
import json
import os

import pytest
import yaml

from horizonplan import cli, config as cfgmod


TINY = {
    "maze": "umaze",
    "data": {"episodes": 6, "max_steps": 150, "min_path_cells": 2},
    "distance": {
        "t_max": 24,
        "rff_features": 8,
        "hidden": [16, 16],
        "batch": 16,
        "pool_size": 32,
        "ramp_steps": 10,
        "phases": [
            {"steps": 40, "goal_mix": [0.2, 0.6, 0.2], "k_set": [1, 2],
             "relay_prob": 0.0, "mine_m": 1, "cons_scale": 0.0,
             "tri_scale": 0.0},
            {"steps": 40, "goal_mix": [0.3, 0.4, 0.3], "k_set": [1, 2, 4],
             "relay_prob": 0.3, "mine_m": 4, "cons_scale": 1.0,
             "tri_scale": 0.5},
        ],
    },
    "planner": {
        "channels": 8,
        "blocks": 2,
        "kernel": 3,
        "groups": 2,
        "temb_dim": 8,
        "dilations": [1, 2],
        "t_diff": 8,
        "steps": 25,
        "batch": 4,
        "l_min": 4,
        "t_max": 24,
    },
    "horizon": {"l_min": 4},
    "exec": {"step_budget": 60, "replan_check_every": 5},
    "eval": {"n_instances": 3, "horizons": [8, 12, 16], "max_batch": 8,
             "keep_traces": 0},
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Config file plus generated dataset and trained checkpoints."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "tiny.yaml"
    with open(cfg_path, "w") as f:
        yaml.safe_dump(TINY, f)
    out = str(root / "out")

    rc = cli.main(["gen-data", "--config", str(cfg_path), "--out", out])
    assert rc == 0
    assert os.path.exists(os.path.join(out, "dataset.mzt"))

    rc = cli.main(["train-lp", "--config", str(cfg_path), "--out", out])
    assert rc == 0
    assert os.path.exists(os.path.join(out, "distance.nna"))

    rc = cli.main(["train-planner", "--config", str(cfg_path), "--out", out])
    assert rc == 0

    rc = cli.main(["train-planner", "--config", str(cfg_path), "--out", out,
                   "--name", "fixed8.nna", "--fixed-horizon", "8",
                   "--steps", "10"])
    assert rc == 0

    return {"cfg": str(cfg_path), "out": out, "root": root}


def art(work, name):
    return os.path.join(work["out"], name)


# ---------------------------------------------------------------------------
# pipeline commands

def test_gen_data_stats_and_episode_flag(work, tmp_path, capsys):
    rc = cli.main(["gen-data", "--config", work["cfg"], "--out",
                   str(tmp_path), "--episodes", "2"])
    assert rc == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["episodes"] == 2
    assert stats["path"].endswith("dataset.mzt")


def test_training_writes_history(work):
    with open(art(work, "distance.nna.history.json")) as f:
        hist = json.load(f)
    assert len(hist) >= 1
    assert {"step", "total"} <= set(hist[0])
    with open(art(work, "planner.nna.history.json")) as f:
        hist = json.load(f)
    assert {"step", "loss", "crop"} <= set(hist[0])


def test_eval_command(work, tmp_path, capsys):
    out = str(tmp_path / "rep")
    rc = cli.main([
        "eval", "--config", work["cfg"], "--out", out,
        "--planner", art(work, "planner.nna"),
        "--lp", art(work, "distance.nna"),
        "--fixed-planner", art(work, "fixed8.nna"),
        "--methods", "adaptive,fixed:8,fixed_lp",
        "--protocols", "ss,rp",
        "--instances", "2",
        "--dump-traces", "1",
    ])
    assert rc == 0
    text = capsys.readouterr().out
    assert "[SS]" in text and "[RP]" in text
    with open(os.path.join(out, "results.csv")) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 6  # 3 methods x 2 protocols
    assert {r["method"] for r in rows} == {"adaptive", "fixed-8", "fixed_lp"}
    assert os.path.isdir(os.path.join(out, "traces"))


def test_eval_default_methods(work, tmp_path, capsys):
    out = str(tmp_path / "rep")
    rc = cli.main([
        "eval", "--config", work["cfg"], "--out", out,
        "--planner", art(work, "planner.nna"),
        "--lp", art(work, "distance.nna"),
        "--protocols", "ss",
        "--instances", "2",
    ])
    assert rc == 0
    with open(os.path.join(out, "results.csv")) as f:
        methods = {r["method"] for r in csv.DictReader(f)}
    # adaptive plus one fixed baseline per configured horizon
    assert methods == {"adaptive", "fixed-8", "fixed-12", "fixed-16"}


def test_plan_with_explicit_horizon(work, tmp_path, capsys):
    out = str(tmp_path / "p")
    rc = cli.main([
        "plan", "--config", work["cfg"], "--out", out,
        "--planner", art(work, "planner.nna"),
        "--horizon", "6", "--start", "0.5,0.5", "--goal", "2.9,0.5",
    ])
    assert rc == 0
    with open(os.path.join(out, "plan.csv")) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["index", "x", "y", "vx", "vy"]
    assert len(rows) == 7
    assert float(rows[1][1]) == pytest.approx(0.5, abs=1e-5)
    assert float(rows[-1][1]) == pytest.approx(2.9, abs=1e-5)


def test_plan_with_predicted_horizon(work, tmp_path):
    out = str(tmp_path / "p")
    rc = cli.main([
        "plan", "--config", work["cfg"], "--out", out,
        "--planner", art(work, "planner.nna"),
        "--lp", art(work, "distance.nna"),
    ])
    assert rc == 0
    with open(os.path.join(out, "plan.csv")) as f:
        n = sum(1 for _ in f) - 1
    assert 4 <= n <= 24  # within the configured horizon clamp


def test_audit_lp_command(work, capsys):
    rc = cli.main([
        "audit-lp", "--config", work["cfg"], "--out", work["out"],
        "--lp", art(work, "distance.nna"),
        "--data", art(work, "dataset.mzt"),
        "--pairs", "8",
    ])
    assert rc == 0
    result = json.loads(capsys.readouterr().out)
    assert result["n_pairs"] == 8
    for key in ("spearman", "mae", "fgg_mean", "bound_violation_rate"):
        assert key in result


def test_dump_maze(tmp_path, capsys):
    rc = cli.main(["dump-maze", "--maze", "umaze", "--out", str(tmp_path),
                   "--json"])
    assert rc == 0
    text = capsys.readouterr().out
    assert text.count("#") > 30  # walls are rendered
    path = tmp_path / "umaze.json"
    with open(path) as f:
        dump = json.load(f)
    assert dump["name"] == "umaze"
    assert len(dump["grid"]) == 19


# ---------------------------------------------------------------------------
# failure paths: exit code 1 with a message on stderr

def fails(argv, capsys, needle=""):
    rc = cli.main(argv)
    err = capsys.readouterr().err
    assert rc == 1
    assert err.startswith("error:")
    if needle:
        assert needle in err
    return err


def test_missing_checkpoint_fails(work, tmp_path, capsys):
    fails(["eval", "--config", work["cfg"], "--out", str(tmp_path),
           "--planner", "/nonexistent/planner.nna", "--instances", "1"],
          capsys)


def test_adaptive_without_lp_fails(work, tmp_path, capsys):
    fails(["eval", "--config", work["cfg"], "--out", str(tmp_path),
           "--planner", art(work, "planner.nna"),
           "--methods", "adaptive", "--instances", "1"],
          capsys, "needs --lp")


def test_unknown_method_fails(work, tmp_path, capsys):
    fails(["eval", "--config", work["cfg"], "--out", str(tmp_path),
           "--planner", art(work, "planner.nna"),
           "--methods", "teleport", "--instances", "1"],
          capsys, "unknown method")


def test_plan_without_horizon_source_fails(work, tmp_path, capsys):
    fails(["plan", "--config", work["cfg"], "--out", str(tmp_path),
           "--planner", art(work, "planner.nna")],
          capsys, "--horizon or --lp")


def test_plan_bad_state_fails(work, tmp_path, capsys):
    fails(["plan", "--config", work["cfg"], "--out", str(tmp_path),
           "--planner", art(work, "planner.nna"), "--horizon", "6",
           "--start", "1,2,3"],
          capsys, "comma-separated")


def test_dataset_maze_mismatch_fails(work, tmp_path, capsys):
    fails(["train-lp", "--config", work["cfg"], "--maze", "medium",
           "--out", str(tmp_path), "--data", art(work, "dataset.mzt")],
          capsys, "maze")


def test_wrong_checkpoint_kind_fails(work, tmp_path, capsys):
    fails(["plan", "--config", work["cfg"], "--out", str(tmp_path),
           "--planner", art(work, "distance.nna"), "--horizon", "6"],
          capsys, "not a planner")


# ---------------------------------------------------------------------------
# config layer

def test_layout_defaults():
    assert cfgmod.LAYOUTS["umaze"].eps == 0.04
    assert cfgmod.LAYOUTS["umaze"].horizons == (64, 128, 192)
    assert cfgmod.LAYOUTS["medium"].eps == 0.03
    assert cfgmod.LAYOUTS["medium"].horizons == (192, 288, 384)
    assert cfgmod.LAYOUTS["large"].horizons == (256, 384, 512)
    assert cfgmod.LAYOUTS["large"].t_max == 512


def test_default_config_sections():
    cfg = cfgmod.default_config("umaze")
    assert cfg["distance"]["t_max"] == 192
    assert cfg["planner"]["t_max"] == 192
    assert cfg["eval"]["eps"] == 0.04
    assert cfg["eval"]["n_instances"] == 1000
    assert cfg["exec"]["step_budget"] == 1500
    with pytest.raises(KeyError, match="layout"):
        cfgmod.default_config("spiral")


def test_deep_merge_nested():
    base = {"a": {"x": 1, "y": 2}, "b": 3}
    out = cfgmod.deep_merge(base, {"a": {"y": 9}, "c": 4})
    assert out == {"a": {"x": 1, "y": 9}, "b": 3, "c": 4}
    assert base["a"]["y"] == 2  # merge does not mutate the base


def test_load_config_overlay_and_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    with open(p, "w") as f:
        yaml.safe_dump({"maze": "medium", "exec": {"step_budget": 77}}, f)
    cfg = cfgmod.load_config(str(p))
    assert cfg["maze"] == "medium"
    assert cfg["exec"]["step_budget"] == 77
    assert cfg["eval"]["eps"] == 0.03  # medium defaults underneath
    cfg = cfgmod.load_config(str(p), maze="umaze", seed=5)
    assert cfg["maze"] == "umaze"
    assert cfg["seed"] == 5


def test_load_config_rejects_non_mapping(tmp_path):
    p = tmp_path / "c.yaml"
    with open(p, "w") as f:
        f.write("- just\n- a list\n")
    with pytest.raises(ValueError, match="mapping"):
        cfgmod.load_config(str(p))


def test_save_config_round_trip(tmp_path):
    cfg = cfgmod.default_config("umaze")
    p = tmp_path / "c.yaml"
    cfgmod.save_config(cfg, p)
    assert cfgmod.load_config(str(p)) == cfg


def test_section_builders():
    cfg = cfgmod.default_config("umaze")
    b = cfgmod.behavior_config(cfg)
    assert b.episodes == 2000 and b.pause_len == (5, 20)
    p = cfgmod.predictor_config(cfg)
    assert p.t_max == 192 and p.hidden == (256, 256, 256)
    assert len(p.phases) == 3  # None keeps the built-in curriculum
    d = cfgmod.denoiser_config(cfg)
    assert d.channels == 64 and d.dilations == (1, 2, 4, 8, 1, 1)
    t = cfgmod.planner_train_config(cfg)
    assert t.l_min == 16 and t.fixed_horizon is None
    h = cfgmod.horizon_config(cfg)
    assert h.t_max == 192 and h.gamma == 1.15
    e = cfgmod.exec_config(cfg)
    assert e.step_budget == 1500


def test_predictor_config_custom_phases():
    cfg = cfgmod.default_config("umaze")
    cfg["distance"]["phases"] = [
        {"steps": 10, "goal_mix": [0.5, 0.5, 0.0], "k_set": [1],
         "relay_prob": 0.0, "mine_m": 1, "cons_scale": 0.0, "tri_scale": 0.0},
    ]
    p = cfgmod.predictor_config(cfg)
    assert len(p.phases) == 1
    assert p.phases[0].goal_mix == (0.5, 0.5, 0.0)
