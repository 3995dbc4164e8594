"""Command-line surface: each command smoke-tested, determinism, and
byte-level agreement with direct library calls."""

import json

import numpy as np
import pytest

from evseg.cli import main, merge_config, read_loss_csv, write_loss_csv
from evseg.evaluation import load_detections_csv
from evseg.feature_stream import (generate_synthetic, load_scenario, read_all,
                                  write_stream_file)
from evseg.gating import GateConfig, sweep_detections
from evseg.losses import LossSample
from evseg.trainer import TrainerConfig, init_model, run_stream

SCENARIO = """
frames = 160
grid = 2
dim = 4
seed = 3
fps = 4
boundary_pad = 2
segment = 0 80 level=0 noise=0.05
segment = 80 160 level=2 noise=0.05
"""


@pytest.fixture()
def scenario_file(tmp_path):
    path = tmp_path / "scenario.txt"
    path.write_text(SCENARIO)
    return path


@pytest.fixture()
def stream_dir(tmp_path, scenario_file):
    out = tmp_path / "synth"
    assert main(["synth", "--input", str(scenario_file),
                 "--out", str(out)]) == 0
    return out


@pytest.fixture()
def run_dir(tmp_path, stream_dir):
    out = tmp_path / "run"
    assert main(["run", "--input", str(stream_dir / "stream.evsg"),
                 "--out", str(out), "--lr", "1e-3", "--seed", "7"]) == 0
    return out


def test_synth_smoke_and_manifest(stream_dir):
    assert (stream_dir / "stream.evsg").exists()
    assert (stream_dir / "truth.csv").exists()
    manifest = json.loads((stream_dir / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["version"]
    assert len(manifest["inputs"]) == 1
    digest = next(iter(manifest["inputs"].values()))
    assert len(digest) == 64


def test_synth_matches_direct_library_calls(stream_dir, scenario_file,
                                            tmp_path):
    scenario = load_scenario(scenario_file)
    frames, truth = generate_synthetic(scenario)
    direct = tmp_path / "direct.evsg"
    write_stream_file(direct, scenario.header(), frames)
    assert direct.read_bytes() == (stream_dir / "stream.evsg").read_bytes()
    rows = (stream_dir / "truth.csv").read_text().splitlines()[1:]
    assert rows == [f"{iv.start_frame},{iv.end_frame},{iv.label}"
                    for iv in truth]


def test_synth_is_deterministic(tmp_path, scenario_file):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        assert main(["synth", "--input", str(scenario_file),
                     "--out", str(out)]) == 0
    assert (a / "stream.evsg").read_bytes() == (b / "stream.evsg").read_bytes()


def test_run_smoke_outputs(run_dir):
    assert (run_dir / "losses.csv").exists()
    assert (run_dir / "checkpoint.evck").exists()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["config"]["lr"] == pytest.approx(1e-3)
    frames, pred, mw = read_loss_csv(run_dir / "losses.csv")
    assert len(frames) == 159
    assert np.isfinite(pred).all() and np.isfinite(mw).all()


def test_run_zero_lr_twice_identical(tmp_path, stream_dir):
    stream = str(stream_dir / "stream.evsg")
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert main(["run", "--input", stream, "--out", str(out),
                     "--lr", "0"]) == 0
        outs.append((out / "losses.csv").read_bytes())
    assert outs[0] == outs[1]


def test_run_matches_direct_library_calls(run_dir, stream_dir, tmp_path):
    header, frames = read_all(stream_dir / "stream.evsg")
    model = init_model(header.feature_dim, seed=7)
    config = TrainerConfig(learning_rate=1e-3, seed=7)
    out = run_stream(config, model, frames)
    direct = tmp_path / "direct_losses.csv"
    write_loss_csv(direct, out.losses)
    assert direct.read_bytes() == (run_dir / "losses.csv").read_bytes()


def test_run_parallel_produces_per_stream_trace_sets(tmp_path, stream_dir):
    header, frames = read_all(stream_dir / "stream.evsg")
    quarter = len(frames) // 4
    parts = []
    for i in range(4):
        chunk = frames[i * quarter:(i + 1) * quarter]
        path = tmp_path / f"part{i}.evsg"
        part_header = type(header)(grid_side=header.grid_side,
                                   feature_dim=header.feature_dim,
                                   frame_count=len(chunk),
                                   fps_num=header.fps_num,
                                   fps_den=header.fps_den)
        write_stream_file(path, part_header, chunk)
        parts.append(str(path))
    out = tmp_path / "par"
    args = ["run", "--out", str(out), "--lr", "1e-3", "--seed", "3",
            "--parallel", "4"]
    for p in parts:
        args += ["--input", p]
    assert main(args) == 0

    for i, part in enumerate(parts):
        sub = out / f"stream{i:02d}"
        assert (sub / "losses.csv").exists()
        header_i, frames_i = read_all(part)
        model = init_model(header_i.feature_dim, seed=3)
        direct = run_stream(TrainerConfig(learning_rate=1e-3, seed=3),
                            model, frames_i)
        _, pred, _ = read_loss_csv(sub / "losses.csv")
        np.testing.assert_array_equal(
            pred, np.array([s.pred_loss for s in direct.losses]))


def test_run_attention_export(tmp_path, stream_dir):
    out = tmp_path / "att"
    assert main(["run", "--input", str(stream_dir / "stream.evsg"),
                 "--out", str(out), "--lr", "0", "--attention",
                 "--attention-stride", "40"]) == 0
    lines = (out / "attention.csv").read_text().splitlines()
    assert lines[0] == "frame,w0,w1,w2,w3"
    assert [row.split(",")[0] for row in lines[1:]] == ["0", "40", "80", "120"]
    weights = np.array([[float(v) for v in row.split(",")[1:]]
                        for row in lines[1:]])
    np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-9)


def test_gate_smoke_and_oracle(tmp_path, run_dir):
    out = tmp_path / "gate"
    assert main(["gate", "--input", str(run_dir / "losses.csv"),
                 "--out", str(out), "--psi", "40", "--phi", "2",
                 "--gate", "adaptive", "--n", "4", "--m", "32"]) == 0
    events = load_detections_csv(out / "events.csv")
    assert events, "fixture should yield at least one detection"

    _, pred, _ = read_loss_csv(run_dir / "losses.csv")
    config = GateConfig(mode="adaptive", threshold=40.0, buffer_len=32,
                        smooth_window=4)
    direct = sweep_detections(pred, config, [40.0], [2])[(40.0, 2)]
    assert [(e.start_frame, e.end_frame) for e in events] == [
        (e.start_frame + 1, e.end_frame + 1) for e in direct]


def test_gate_determinism_and_grid(tmp_path, run_dir):
    args = ["gate", "--input", str(run_dir / "losses.csv"),
            "--psi", "30,60", "--phi", "0,2", "--gate", "adaptive",
            "--n", "4", "--m", "32"]
    a = tmp_path / "g1"
    b = tmp_path / "g2"
    for out in (a, b):
        assert main(args + ["--out", str(out)]) == 0
    names = sorted(p.name for p in a.glob("events_*.csv"))
    assert names == ["events_psi30_phi0.csv", "events_psi30_phi2.csv",
                     "events_psi60_phi0.csv", "events_psi60_phi2.csv"]
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert not (a / "events.csv").exists()


def test_eval_single_detections_oracle(tmp_path, run_dir, stream_dir):
    gate_out = tmp_path / "gate"
    assert main(["gate", "--input", str(run_dir / "losses.csv"),
                 "--out", str(gate_out), "--psi", "40", "--phi", "2",
                 "--gate", "adaptive", "--n", "4", "--m", "32"]) == 0
    out = tmp_path / "eval"
    assert main(["eval", "--detections", str(gate_out / "events.csv"),
                 "--annotations", str(stream_dir / "truth.csv"),
                 "--frames", "160", "--fps", "4", "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["activity"]["gt_total"] == 1
    assert metrics["activity"]["recall"] == 1.0
    assert metrics["activity"]["fp_per_min"] == 0.0
    assert metrics["frame"]["tp"] >= 1
    assert metrics["activity"]["by_label"] == {"boundary": [1, 1]}


def test_eval_sweep_writes_roc_tables(tmp_path, run_dir, stream_dir):
    out = tmp_path / "sweep"
    assert main(["eval", "--input", str(run_dir / "losses.csv"),
                 "--annotations", str(stream_dir / "truth.csv"),
                 "--fps", "4", "--psi", "30,60,90", "--phi", "0,2",
                 "--gate", "adaptive", "--n", "4", "--m", "32",
                 "--out", str(out)]) == 0
    assert (out / "frame_roc_phi0.csv").exists()
    assert (out / "activity_roc_psi30.csv").exists()
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["best_activity"]["recall"] == 1.0
    assert metrics["best_activity"]["fp_per_min"] == 0.0


def test_eval_requires_exactly_one_source(tmp_path, run_dir, stream_dir):
    out = tmp_path / "bad"
    code = main(["eval", "--annotations", str(stream_dir / "truth.csv"),
                 "--fps", "4", "--out", str(out)])
    assert code == 2


def test_config_file_precedence(tmp_path, stream_dir):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"lr": 0.5, "seed": 9}))
    out = tmp_path / "cfgrun"
    assert main(["run", "--input", str(stream_dir / "stream.evsg"),
                 "--out", str(out), "--config", str(config),
                 "--lr", "0"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["lr"] == 0.0   # flag beats file
    assert manifest["config"]["seed"] == 9   # file beats default
    assert manifest["config"]["dropout"] == pytest.approx(0.4)


def test_config_file_unknown_key_is_usage_error(tmp_path, stream_dir):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"learning": 0.5}))
    code = main(["run", "--input", str(stream_dir / "stream.evsg"),
                 "--out", str(tmp_path / "x"), "--config", str(config)])
    assert code == 2


def test_missing_input_is_runtime_error(tmp_path):
    code = main(["run", "--input", str(tmp_path / "nope.evsg"),
                 "--out", str(tmp_path / "out")])
    assert code == 1


def test_unknown_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["run", "--bogus", "1", "--input", "x", "--out", "y"])
    assert err.value.code == 2


def test_merge_config_rules():
    defaults = {"a": 1, "b": 2, "c": 3}
    merged = merge_config(defaults, {"b": 20}, {"c": 30, "a": None})
    assert merged == {"a": 1, "b": 20, "c": 30}
    with pytest.raises(ValueError):
        merge_config(defaults, {"zz": 1}, {})


def test_loss_csv_roundtrip(tmp_path):
    samples = [LossSample(t=i, pred_loss=float(i) * 1.5, mw_loss=float(i))
               for i in range(5)]
    path = tmp_path / "l.csv"
    write_loss_csv(path, samples)
    frames, pred, mw = read_loss_csv(path)
    np.testing.assert_array_equal(frames, np.arange(5))
    np.testing.assert_array_equal(pred, np.arange(5) * 1.5)
    np.testing.assert_array_equal(mw, np.arange(5).astype(float))


def test_seed_override_changes_synth_output(tmp_path, scenario_file):
    a = tmp_path / "s1"
    b = tmp_path / "s2"
    assert main(["synth", "--input", str(scenario_file), "--out", str(a)]) == 0
    assert main(["synth", "--input", str(scenario_file), "--out", str(b),
                 "--seed", "99"]) == 0
    assert (a / "stream.evsg").read_bytes() != (b / "stream.evsg").read_bytes()
    manifest = json.loads((b / "manifest.json").read_text())
    assert manifest["seed"] == 99
