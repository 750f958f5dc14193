import csv

import pytest

from tractor_ems.cli import build_parser, main


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(
        "cycle.steps = 12\ncycle.segments = 3\n"
        "agent.action_bins = 20\nagent.max_episodes = 3\nagent.hidden = 8, 8\n"
        "agent.batch_size = 4\nagent.target_sync = 5\nagent.conv_window = 1\nagent.conv_windows = 1\n"
        "dp.n_actions = 20\ndp.n_soc = 30\ntabular.episodes = 2\ntabular.sparse = true\n"
        "seeds = 0\n"
    )
    return p


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for name in ("cycle", "dp", "train", "seed-gen", "run", "compare"):
        assert name in text


def test_cycle_gen(tmp_path, tiny_cfg):
    assert main(["cycle", "gen", "--config", str(tiny_cfg), "--seed", "2", "--out", str(tmp_path / "c")]) == 0
    with (tmp_path / "c" / "cycle.csv").open() as fh:
        assert len(list(csv.reader(fh))) == 1 + 12


def test_dp(tmp_path, tiny_cfg, capsys):
    assert main(["dp", "--config", str(tiny_cfg), "--out", str(tmp_path / "dp")]) == 0
    assert (tmp_path / "dp" / "dp_table.csv").exists()
    assert (tmp_path / "dp" / "trajectory.csv").exists()
    assert "dp cost" in capsys.readouterr().out


def test_train(tmp_path, tiny_cfg, capsys):
    assert main(["train", "--config", str(tiny_cfg), "--method", "DQN_shaped", "--episodes", "2",
                 "--out", str(tmp_path / "t")]) == 0
    assert len((tmp_path / "t" / "train_curve.csv").read_text().splitlines()) == 3
    assert "convergence_episode=" in capsys.readouterr().out


def test_train_rejects_non_learner(tmp_path, tiny_cfg):
    assert main(["train", "--config", str(tiny_cfg), "--method", "DP", "--out", str(tmp_path)]) == 2


def test_seed_gen_then_seeded_run(tmp_path, tiny_cfg):
    assert main(["seed-gen", "--config", str(tiny_cfg), "--expert", "dp", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "seed_dp.csv").read_text().splitlines()
    assert len(rows) == 1 + 12
    cfg = tmp_path / "seeded.cfg"
    cfg.write_text(f"include = {tiny_cfg.name}\nmethod = DDQN_shaped_dp_seed\n"
                   "seed_dp = seed_dp.csv\nseed_fraction = 0.5\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "aggregate.csv").exists()


def test_run_and_compare(tmp_path, tiny_cfg, capsys):
    for method in ("Conventional", "DP", "DDQN_shaped"):
        assert main(["run", "--config", str(tiny_cfg), "--method", method, "--out", str(tmp_path / method)]) == 0
    capsys.readouterr()
    dirs = [str(tmp_path / m) for m in ("Conventional", "DP", "DDQN_shaped")]
    assert main(["compare", *dirs, "--out", str(tmp_path / "cmp")]) == 0
    out = capsys.readouterr().out
    assert "DDQN_shaped" in out and "% of DP" in out
    assert (tmp_path / "cmp" / "comparison.csv").exists()


def test_compare_missing_baseline(tmp_path, tiny_cfg):
    assert main(["run", "--config", str(tiny_cfg), "--method", "DP", "--out", str(tmp_path / "dp")]) == 0
    assert main(["compare", str(tmp_path / "dp"), "--out", str(tmp_path / "cmp")]) == 2


def test_bad_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("agent.gamma = 7\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_out_exit_2(tiny_cfg):
    assert main(["run", "--config", str(tiny_cfg)]) == 2


def test_infeasible_exit_3(tmp_path):
    cfg = tmp_path / "inf.cfg"
    cfg.write_text("soc_init = 0.31\nsoc_terminal = 0.9\ncycle.steps = 2\ncycle.segments = 1\n"
                   "dp.n_actions = 20\ndp.n_soc = 20\nagent.action_bins = 20\n")
    assert main(["dp", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
