import json

import numpy as np
import pytest

from redistnet.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, main
from redistnet.features import FeatureCombo
from redistnet.hnet import init_h_network
from redistnet.neuralnet import save_checkpoint

FAST = ["--hidden", "16,16", "--val-size", "200", "--val-every", "20", "--warm-start-steps", "200",
        "--adv-warmup", "5", "--adv-pool", "2", "--select-adv-steps", "5"]


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("# tiny run\nn = 3\nobjective = expectation\nprior = uniform\nmax_steps = 40\n")
    return path


def test_train_then_eval(tmp_path, config_file, capsys):
    run = tmp_path / "run"
    assert main(["train", str(config_file), "--out", str(run), *FAST]) == EXIT_OK
    assert "run directory" in capsys.readouterr().out
    text = (run / "config.txt").read_text()
    assert "hidden = 16,16" in text and "max_steps = 40" in text
    code = main(["eval", str(run / "model.npz"), "--size", "500", "--prior", "uniform",
                 "--prior", "normal:0.5:0.1", "--out", str(tmp_path / "ev")])
    out = capsys.readouterr().out
    assert code in (EXIT_OK, EXIT_INFEASIBLE)
    assert out.count("alpha=") == 2
    data = json.loads((tmp_path / "ev" / "eval_uniform.json").read_text())
    assert data["test_size"] == 500
    assert (tmp_path / "ev" / "eval_normal_0.5_0.1.json").exists()


def test_flag_overrides_config(tmp_path, config_file):
    run = tmp_path / "run"
    main(["train", str(config_file), "--out", str(run), *FAST, "--max-steps", "20", "--seed", "4"])
    text = (run / "config.txt").read_text()
    assert "max_steps = 20" in text and "seed = 4" in text


def test_worstcase_eval_picks_up_adversaries(tmp_path, capsys):
    run = tmp_path / "wc"
    assert main(["train", "--n", "4", "--objective", "worstcase", "--prior", "uniform", "--max-steps", "20",
                 "--out", str(run), *FAST]) == EXIT_OK
    assert len(list(run.glob("adversary_*.npz"))) == 2
    capsys.readouterr()
    main(["eval", str(run / "model.npz"), "--grid-step", "0.25"])
    out = capsys.readouterr().out
    assert "grid_alpha=" in out
    data = json.loads((run / "eval" / "eval.json").read_text())
    assert data["test_size"] == 10_000


def test_missing_prior_is_usage_error(capsys):
    assert main(["train", "--n", "3", "--objective", "expectation"]) == EXIT_USAGE
    assert "'prior'" in capsys.readouterr().err


def test_unknown_key_in_file(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("n = 3\nobjective = expectation\nprior = uniform\nspeed = 3\n")
    assert main(["train", str(bad)]) == EXIT_USAGE
    assert "'speed'" in capsys.readouterr().err


def test_eval_arity_mismatch(tmp_path, capsys):
    params = init_h_network(3, FeatureCombo.RAW, np.random.default_rng(0), hidden=(4,))
    path = save_checkpoint(tmp_path / "m.npz", params, {"role": "model", "n": 3, "features": "raw"})
    assert main(["eval", str(path), "--n", "5"]) == EXIT_USAGE
    assert "n=3" in capsys.readouterr().err


def test_eval_infeasible_exit_code(tmp_path, capsys):
    # an untrained network is far from budget balanced
    params = init_h_network(3, FeatureCombo.RAW, np.random.default_rng(0), hidden=(4,))
    path = save_checkpoint(tmp_path / "m.npz", params, {"role": "model", "n": 3, "features": "raw"})
    assert main(["eval", str(path), "--size", "200"]) == EXIT_INFEASIBLE
    assert "INFEASIBLE" in capsys.readouterr().out


def test_compare_prints_baselines(capsys):
    assert main(["compare", "--n", "4"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "0.634" in out and "AO" in out
    main(["compare", "--objective", "expectation"])
    assert "2.079" in capsys.readouterr().out


def test_gen_data(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["gen-data", "--n", "4", "--size", "7", "--seed", "2", "--out", str(out)]) == EXIT_OK
    rows = out.read_text().splitlines()
    assert rows[0] == "theta_0,theta_1,theta_2,theta_3" and len(rows) == 8
    again = tmp_path / "e.csv"
    main(["gen-data", "--n", "4", "--size", "7", "--seed", "2", "--out", str(again)])
    assert out.read_bytes() == again.read_bytes()


def test_grad_check(capsys):
    assert main(["grad-check", "--nets", "3", "--inputs", "4"]) == EXIT_OK
    assert "ok" in capsys.readouterr().out
    assert main(["grad-check", "--nets", "2", "--inputs", "2", "--threshold", "0"]) == 2


def test_contrast_command(tmp_path, capsys):
    code = main(["contrast", "--n", "4", "--objective", "worstcase", "--prior", "uniform", "--max-steps", "20",
                 "--out", str(tmp_path), "--audit-steps", "5", "--set-size", "300", *FAST])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "A random" in out and "drop" in out


def test_bad_command_line(capsys):
    assert main(["eval"]) == EXIT_USAGE
    with pytest.raises(SystemExit):
        main(["--help"])
