import json
import os
import sys

import pytest

import localized_trajectories
from localtraj.exceptions import ParameterError

SMALL = "seed: 2\nencode:\n  K: 8\nselection:\n  sample_size: 100\nclassify:\n  epochs: 20\n"


def run(monkeypatch, *argv):
    monkeypatch.setattr(sys, "argv", ["localized_trajectories.py", *argv])
    return localized_trajectories.main()


def test_default_config(monkeypatch, capsys):
    assert run(monkeypatch, "inspect", "--default-config") == 0
    data = json.loads(capsys.readouterr().out)
    assert data["mode"] == "2d"
    assert data["localize"]["distance_threshold"] == 0.02


def test_argument_errors(monkeypatch):
    with pytest.raises(ParameterError):
        run(monkeypatch, "inspect", "--default-config", "--use-rejected")
    with pytest.raises(ParameterError):
        run(monkeypatch, "inspect", "--default-config", "--jobs", "0")
    with pytest.raises(ParameterError):
        run(monkeypatch, "inspect")
    with pytest.raises(SystemExit):
        run(monkeypatch, "extract")


def test_overrides(monkeypatch, tmp_path):
    config_file = tmp_path / "config.yaml"
    config_file.write_text(SMALL)
    parsed = {}

    def capture(args, cfg):
        parsed["cfg"] = cfg
        return 0

    monkeypatch.setattr(localized_trajectories, "run_inspect", capture)
    run(
        monkeypatch,
        "inspect",
        "--config",
        str(config_file),
        "--mode",
        "3d",
        "--seed",
        "9",
        "--global-bow",
        "--use-rejected",
    )
    cfg = parsed["cfg"]
    assert cfg.mode == "3d"
    assert cfg.seed == 9
    assert cfg.encode.K == 8
    assert cfg.encode.global_bow and cfg.encode.use_rejected


def test_full_run(monkeypatch, capsys, tmp_path):
    data = str(tmp_path / "data")
    work = str(tmp_path / "work")
    config_file = tmp_path / "config.yaml"
    config_file.write_text(SMALL)
    common = ["--config", str(config_file)]

    assert run(monkeypatch, "synth", "--videos", "12", "--subjects", "2", "--frames", "17", "--data-dir", data, *common) == 0
    manifest = os.path.join(data, "manifest.json")
    assert os.path.isfile(manifest)
    cache = str(tmp_path / "cache")
    assert run(monkeypatch, "extract", manifest, "--work-dir", work, "--cache-dir", cache, *common) == 0
    assert run(monkeypatch, "train", manifest, "--work-dir", work, *common) == 0
    capsys.readouterr()
    assert run(monkeypatch, "eval", manifest, "--work-dir", work, *common) == 0
    out = capsys.readouterr().out
    assert "Accuracy: " in out
    assert os.path.isfile(os.path.join(work, "reports", "2d-local", "confusion.svg"))

    archive_file = os.path.join(work, "archives", "2d", "v0000.tlar")
    assert run(monkeypatch, "inspect", archive_file) == 0
    assert json.loads(capsys.readouterr().out)["video"] == "v0000"
