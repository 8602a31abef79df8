import pytest

from afferent.cli import build_parser, main

MICRO = """
m = 8
k = 3
ages = 60
seeds = 0,1
episode_len = 64
ppo.total_steps = 256
ppo.rollout_len = 128
ppo.minibatch = 32
ppo.hidden = 8
eval.episodes = 1
eval.seeds = 701
evolution.generations = 1
evolution.popsize = 4
evolution.rl_steps_short = 128
evolution.rl_steps_long = 128
evolution.eval_episodes = 1
evolution.eval_seeds = 901
predictive.samples = 200
probe.pairs = 2
probe.radius = 10.0
sim.steps = 5
sim.repeats = 1
"""


@pytest.fixture()
def micro_config(tmp_path):
    path = tmp_path / "micro.cfg"
    path.write_text(MICRO)
    return str(path)


def test_parser_requires_subcommand(capsys):
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args([])
    assert exc.value.code == 2
    capsys.readouterr()


def test_parser_rejects_unknown_choices(capsys):
    for argv in (["train", "--ablation", "no_magic"],
                 ["train", "--scenario", "lunar"],
                 ["teleport"]):
        with pytest.raises(SystemExit):
            build_parser().parse_args(argv)
    capsys.readouterr()


def test_missing_config_file_exits_2(tmp_path, capsys):
    rc = main(["simulate", "--config", str(tmp_path / "nope.cfg")])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_bad_ages_exits_2(micro_config, tmp_path, capsys):
    rc = main(["simulate", "--config", micro_config,
               "--out", str(tmp_path / "o"), "--ages", "sixty"])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_evaluate_without_policy_exits_2(micro_config, tmp_path, capsys):
    rc = main(["evaluate", "--config", micro_config, "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "policy" in capsys.readouterr().err


def test_simulate_summary_line(micro_config, tmp_path, capsys):
    out = tmp_path / "simout"
    rc = main(["simulate", "--config", micro_config, "--out", str(out)])
    assert rc == 0
    line = capsys.readouterr().out.strip()
    assert line == f"wrote 3 rollout files x 5 lines under {out}/runs"
    assert (out / "runs" / "dkt_normal_rep0.jsonl").is_file()


def test_train_summary_line(micro_config, tmp_path, capsys):
    out = tmp_path / "trainout"
    rc = main(["train", "--config", micro_config, "--out", str(out)])
    assert rc == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("trained full at age 60: d_total=")
    assert (out / "genomes" / "policy_normal_age60_seed0.bin").is_file()


def test_cli_overrides_reach_harness(micro_config, tmp_path, capsys):
    out = tmp_path / "ovr"
    rc = main(["train", "--config", micro_config, "--out", str(out),
               "--ablation", "no_cat", "--ages", "80", "--steps", "128",
               "--scenario", "meniscus_overload", "--seed", "1"])
    assert rc == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("trained no_cat at age 80:")
    assert (out / "genomes" / "policy_meniscus_overload_age80_seed1.bin").is_file()
