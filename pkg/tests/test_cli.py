import json
import subprocess
import sys

import pytest

from exdm.cli import _parse_seeds, main

TINY_PRETRAIN = """
pretrain.total_steps = 300
pretrain.seed_frames = 100
pretrain.log_every = 100
model.batch = 32
model.hidden = 32
model.diffusion_hidden = 32
model.diffusion_blocks = 1
intrinsic.n_mc = 2
"""

TINY_LAB = """
lab.wendel_M = 2, 3
lab.wendel_trials = 2000
lab.volume_samples = 100000
lab.bound_trials = 2000
lab.bound_cases = 2, 2
lab.hull_trials = 5
lab.spi_instances = 3
lab.maxent_instances = 1
lab.maxent_A = 2
"""


@pytest.fixture
def cfg_file(tmp_path):
    def write(text, name="run.cfg"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return write


def test_parse_seeds():
    assert _parse_seeds("0..3") == [0, 1, 2, 3]
    assert _parse_seeds("4,1, 7") == [4, 1, 7]


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["lab", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")]) == 2
    assert "config not found" in capsys.readouterr().err


def test_invalid_config_exit_1(cfg_file, tmp_path, capsys):
    assert main(["lab", "--config", cfg_file("finetune.K = 1"), "--out", str(tmp_path / "o")]) == 1
    assert "ConfigInvalid" in capsys.readouterr().err


def test_lab_writes_report(cfg_file, tmp_path, capsys):
    out = tmp_path / "lab"
    assert main(["lab", "--config", cfg_file(TINY_LAB), "--seed", "2", "--out", str(out)]) == 0
    report = json.loads((out / "lab_report.json").read_text())
    assert report["seed"] == 2 and report["passed"]
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(x)["name"] for x in lines] == [c["name"] for c in report["checks"]]
    assert capsys.readouterr().out.count("PASS") == 6


def test_lab_failure_exit_1(cfg_file, tmp_path):
    assert main(["lab", "--config", cfg_file(TINY_LAB + "lab.n_se = 0\n"), "--out", str(tmp_path / "lab")]) == 1


def test_pretrain_then_plot(cfg_file, tmp_path):
    out = tmp_path / "pre"
    assert main(["pretrain", "--config", cfg_file(TINY_PRETRAIN), "--out", str(out)]) == 0
    for name in ("metrics.jsonl", "coverage_curve.csv", "trajectories.csv", "summary.json", "config.cfg",
                 "state_diffusion.ckpt", "action_diffusion.ckpt", "actor_critic.ckpt"):
        assert (out / name).exists(), name
    assert main(["plot", str(out)]) == 0
    first = (out / "coverage.png").read_bytes()
    assert (out / "trajectories.png").stat().st_size > 0
    assert main(["plot", str(out)]) == 0
    assert (out / "coverage.png").read_bytes() == first


def test_plot_missing_artifacts(tmp_path, capsys):
    assert main(["plot", str(tmp_path)]) == 1
    assert "MissingArtifacts" in capsys.readouterr().err


def test_finetune_needs_pretrain_dir(cfg_file, tmp_path, capsys):
    assert main(["finetune", "--config", cfg_file(TINY_PRETRAIN), "--pretrain-dir", str(tmp_path / "none"),
                 "--out", str(tmp_path / "ft")]) == 1
    assert "CheckpointMissing" in capsys.readouterr().err


def test_seeds_spawn_children(cfg_file, tmp_path):
    out = tmp_path / "multi"
    rc = subprocess.run([sys.executable, "-m", "exdm.cli", "lab", "--config", cfg_file(TINY_LAB), "--seeds", "0,1",
                         "--out", str(out)], capture_output=True, text=True)
    assert rc.returncode == 0, rc.stderr
    seeds = sorted(json.loads((out / f"lab_s{s}" / "lab_report.json").read_text())["seed"] for s in (0, 1))
    assert seeds == [0, 1]


def test_seeds_write_aggregate(cfg_file, tmp_path):
    out = tmp_path / "multi"
    rc = subprocess.run([sys.executable, "-m", "exdm.cli", "pretrain", "--config", cfg_file(TINY_PRETRAIN),
                         "--seeds", "0..1", "--out", str(out)], capture_output=True, text=True)
    assert rc.returncode == 0, rc.stderr
    agg = json.loads((out / "aggregate.json").read_text())
    assert set(agg["per_seed"]) == {"0", "1"} and agg["score"] == "coverage"
    assert agg["mean"]["ci_low"] <= agg["mean"]["value"] <= agg["mean"]["ci_high"]


def test_run_root_env(cfg_file, tmp_path, monkeypatch):
    monkeypatch.setenv("EXDM_RUN_ROOT", str(tmp_path / "root"))
    assert main(["lab", "--config", cfg_file(TINY_LAB)]) == 0
    (run,) = list((tmp_path / "root").iterdir())
    assert run.name.startswith("lab_") and (run / "lab_report.json").exists()
