"""Checkpoint file format: round trips, determinism, corruption handling."""

import io

import numpy as np
import pytest

from evseg.checkpoint import (CHECKPOINT_MAGIC, CheckpointError,
                              load_checkpoint, load_checkpoint_file,
                              save_checkpoint, save_checkpoint_file)
from evseg.trainer import (AdamState, TrainerConfig, TrainingSnapshot,
                           init_model, run_stream)
from evseg.predictor import PredictorState


def make_snapshot(seed=0, trained=True, **model_kw):
    model = init_model(3, seed=seed, **model_kw)
    if trained:
        rng = np.random.default_rng(seed)
        frames = [rng.normal(size=(4, 3)) for _ in range(12)]
        out = run_stream(TrainerConfig(learning_rate=1e-3, seed=seed),
                         model, frames)
        return TrainingSnapshot(model=out.model, adam=out.adam,
                                state=out.state, frame_step=out.steps)
    adam = AdamState.zeros_like(model.tensors())
    state = PredictorState.zeros(4, model.hidden_dim)
    return TrainingSnapshot(model=model, adam=adam, state=state, frame_step=0)


def roundtrip(snapshot):
    buf = io.BytesIO()
    save_checkpoint(buf, snapshot)
    buf.seek(0)
    return load_checkpoint(buf), buf.getvalue()


def test_roundtrip_restores_everything_to_wire_precision():
    snap, _ = roundtrip(make_snapshot(3))
    orig = make_snapshot(3)
    for key, val in orig.model.tensors().items():
        np.testing.assert_array_equal(snap.model.tensors()[key],
                                      val.astype(np.float32).astype(np.float64))
    for key in orig.adam.m:
        np.testing.assert_array_equal(
            snap.adam.m[key], orig.adam.m[key].astype(np.float32).astype(np.float64))
    assert snap.adam.step == orig.adam.step
    assert snap.frame_step == orig.frame_step
    assert snap.state.t == orig.state.t
    np.testing.assert_array_equal(
        snap.state.h, orig.state.h.astype(np.float32).astype(np.float64))


def test_resave_is_byte_identical():
    _, first_bytes = roundtrip(make_snapshot(7))
    loaded = load_checkpoint(io.BytesIO(first_bytes))
    buf = io.BytesIO()
    save_checkpoint(buf, loaded)
    assert buf.getvalue() == first_bytes


def test_flags_survive_roundtrip():
    snap, _ = roundtrip(make_snapshot(1, trained=False, strict_inputs=True,
                                      pool_hidden=True))
    assert snap.model.lstm.strict_inputs is True
    assert snap.model.attention.pool_hidden is True
    unshared, _ = roundtrip(make_snapshot(2, trained=False, grid_cells=4,
                                          shared=False))
    assert unshared.model.lstm.bank == 4


def test_loaded_checkpoint_resumes_training():
    snap, _ = roundtrip(make_snapshot(5))
    rng = np.random.default_rng(99)
    frames = [rng.normal(size=(4, 3)) for _ in range(8)]
    out = run_stream(TrainerConfig(learning_rate=1e-3, seed=5), snap.model,
                     frames, adam=snap.adam, state=snap.state)
    assert out.adam.step == 11 + 7


def test_file_roundtrip(tmp_path):
    path = tmp_path / "model.evck"
    snapshot = make_snapshot(11)
    save_checkpoint_file(path, snapshot)
    loaded = load_checkpoint_file(path)
    assert loaded.frame_step == snapshot.frame_step
    save_checkpoint_file(tmp_path / "again.evck", loaded)
    assert (tmp_path / "again.evck").read_bytes() == path.read_bytes()


def test_bad_magic_rejected():
    _, data = roundtrip(make_snapshot(0, trained=False))
    corrupted = b"XXXX" + data[4:]
    with pytest.raises(CheckpointError):
        load_checkpoint(io.BytesIO(corrupted))
    assert data[:4] == CHECKPOINT_MAGIC


def test_truncated_file_rejected():
    _, data = roundtrip(make_snapshot(0, trained=False))
    with pytest.raises(CheckpointError):
        load_checkpoint(io.BytesIO(data[: len(data) // 2]))


def test_missing_tensor_rejected_at_load():
    snapshot = make_snapshot(0, trained=False)
    del snapshot.adam.m["attn.bias"]
    buf = io.BytesIO()
    save_checkpoint(buf, snapshot)
    buf.seek(0)
    with pytest.raises(CheckpointError, match="adam.m.attn.bias"):
        load_checkpoint(buf)
