"""Command-line surface: train, eval, export, sweep."""

import json

import pytest

from wolfpack.cli import main


@pytest.fixture()
def tiny_config_path(tmp_path):
    data = {
        "scenario": {"name": "pp_3_1", "episode_limit": 24},
        "mixer": {"kind": "vdn"},
        "attack": {"k_wp": 1, "t_wp": 3, "m": 1},
        "train": {"total_steps": 24 * 4, "pretrain_steps": 24 * 2,
                  "batch_episodes": 2, "buffer_episodes": 8,
                  "checkpoint_interval": 10_000},
        "planner": {"window": 8, "horizon": 6, "batch_windows": 4,
                    "label_anchors": 1},
        "eval": {"episodes": 2, "k": 4},
        "seeds": [0],
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def test_cli_train_eval_export_roundtrip(tiny_config_path, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config_path), "--seed", "0",
                 "--out", str(out)]) == 0
    artifacts = json.loads(capsys.readouterr().out)
    assert (out / "final.wlf").exists()

    assert main(["eval", "--checkpoint", artifacts["checkpoint"],
                 "--attacker", "wolfpack", "--episodes", "2", "--k", "4",
                 "--seed", "3", "--trace"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["mean_attacked_steps"] == 4.0

    assert main(["eval", "--checkpoint", artifacts["checkpoint"],
                 "--attacker", "wolfpack", "--episodes", "1", "--k", "4",
                 "--seed", "3", "--followup-mode", "random",
                 "--step-mode", "random"]) == 0
    capsys.readouterr()

    export_path = tmp_path / "curves.csv"
    assert main(["export", "--metrics", str(out), "--what", "curves",
                 "--format", "csv", "--out", str(export_path)]) == 0
    capsys.readouterr()
    assert export_path.exists()


def test_cli_sweep(tiny_config_path, tmp_path, capsys):
    grid_path = tmp_path / "grid.json"
    grid_path.write_text(json.dumps({"t_wp": [1]}), encoding="utf-8")
    assert main(["sweep", "--config", str(tiny_config_path), "--grid",
                 str(grid_path), "--out", str(tmp_path / "sweep")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["cells"] == 1


def test_cli_rejects_unknown_attacker(tiny_config_path):
    with pytest.raises(SystemExit):
        main(["eval", "--checkpoint", "x", "--attacker", "nobody",
              "--episodes", "1", "--k", "4", "--seed", "0"])
