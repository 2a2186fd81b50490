import hashlib
import json

import pytest

from cutin_acc import cli
from cutin_acc import detector as det

SMALL = """\
[run]
lstm_hidden = 8
ann_width = 8
[synth]
n_events = 12
events_per_recording = 6
[train]
max_epochs = 2
"""


def _keys(events):
    return sorted((e.recording_id, e.sv_track_id, e.pv_track_id, e.cut_in_frame) for e in events)


def _digests(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(SMALL)
    return path


def test_zero_epochs_is_config_error(tmp_path, capsys):
    assert cli.main(["train", "--out", str(tmp_path), "--max-epochs", "0"]) == 2
    assert "error[config]" in capsys.readouterr().err


@pytest.mark.parametrize(
    "flags",
    [["--ratio", "1.0"], ["--seed", "-1"], ["--controller", "pid"], ["--config", "/nonexistent.ini"]],
)
def test_bad_flags_are_config_errors(tmp_path, flags):
    assert cli.main(["synth", "--out", str(tmp_path)] + flags) == 2


def test_unknown_config_section(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[weird]\nx = 1\n")
    assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text("[train]\nlearning = 1\n")
    assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("stage", ["ingest", "detect", "build-dataset", "train", "evaluate", "simulate", "report"])
def test_missing_upstream_exit_code(tmp_path, stage, capsys):
    assert cli.main([stage, "--out", str(tmp_path / "empty")]) == 3
    assert "error[upstream]" in capsys.readouterr().err


def test_detect_recovers_planted_events(tmp_path, small_config):
    out = tmp_path / "o"
    for stage in ("synth", "ingest", "detect"):
        assert cli.main([stage, "--config", str(small_config), "--out", str(out)]) == 0
    truth = det.load_events(out / "ground_truth_events.csv")
    found = det.load_events(out / "events.csv")
    assert len(truth) == 12
    assert _keys(found) == _keys(truth)


def test_flags_override_config_file(tmp_path, small_config):
    out = tmp_path / "o"
    assert cli.main(["synth", "--config", str(small_config), "--out", str(out), "--n-events", "3", "--seed", "4"]) == 0
    manifest = json.loads((out / "manifests" / "synth.json").read_text())
    assert manifest["config"]["synth"]["n_events"] == 3
    assert manifest["config"]["seed"] == 4
    assert manifest["config"]["synth"]["events_per_recording"] == 6
    assert manifest["config"]["lstm_hidden"] == 8
    assert len(det.load_events(out / "ground_truth_events.csv")) == 3


def test_pipeline_outputs_and_manifests(tmp_path, small_config):
    out = tmp_path / "o"
    assert cli.main(["pipeline", "--config", str(small_config), "--out", str(out)]) == 0
    for rel in [
        "events.csv",
        "dataset/train.csv",
        "dataset/test.csv",
        "dataset/manifest.json",
        "checkpoints/lstm.ckpt",
        "checkpoints/ann.ckpt",
        "report/trace.csv",
        "report/metrics.csv",
        "report/residuals.csv",
        "report/sim.csv",
        "report/summary.csv",
    ]:
        assert (out / rel).is_file(), rel
    for stage in cli.STAGES:
        m = json.loads((out / "manifests" / f"{stage}.json").read_text())
        assert m["stage"] == stage
        for rel, digest in m["inputs"].items():
            assert hashlib.sha256((out / rel).read_bytes()).hexdigest() == digest
    summary = (out / "report" / "summary.csv").read_text().splitlines()
    assert summary[0].startswith("model,rmse,accuracy")
    assert [line.split(",")[0] for line in summary[1:]] == ["lstm", "ann", "mpc"]


def test_stages_do_not_mutate_inputs(tmp_path, small_config):
    out = tmp_path / "o"
    assert cli.main(["pipeline", "--config", str(small_config), "--out", str(out)]) == 0
    before = _digests(out)
    for stage in ("ingest", "detect", "build-dataset", "evaluate", "simulate", "report"):
        assert cli.main([stage, "--config", str(small_config), "--out", str(out)]) == 0
        after = _digests(out)
        # rerunning a stage on unchanged inputs reproduces every file
        assert after == before, stage


def test_simulate_with_learned_controller(tmp_path, small_config):
    out = tmp_path / "o"
    assert cli.main(["pipeline", "--config", str(small_config), "--out", str(out)]) == 0
    assert cli.main(["simulate", "--config", str(small_config), "--out", str(out), "--controller", "lstm"]) == 0
    lines = (out / "report" / "sim.csv").read_text().splitlines()
    assert lines[0] == "t,x_sv,v_sv,a_sv,a_cmd,x_pv,v_pv,gap"
    m = json.loads((out / "manifests" / "simulate.json").read_text())
    assert "checkpoints/lstm.ckpt" in m["inputs"]
