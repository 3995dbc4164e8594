"""Binary checkpoints for a training run.

Layout, all little-endian: magic ``EVCK``, format version u32, JSON metadata
block (u32 length prefix), tensor count u32, then per tensor a u16-length
utf-8 name, u8 rank, u32 dims, and the float32 payload. Tensors are written
in sorted name order, so saving a loaded checkpoint reproduces the file byte
for byte.

Parameters, Adam moments, and the recurrent state are all included; loading
restores enough to resume training exactly (up to the float32 rounding of
the wire format).
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from .attention import AttentionParams
from .predictor import GATE_NAMES, LstmParams, PredictorState
from .trainer import AdamState, ModelParams, TrainingSnapshot

CHECKPOINT_MAGIC = b"EVCK"
CHECKPOINT_VERSION = 1

_HEAD = struct.Struct("<4sI")
_U32 = struct.Struct("<I")
_U16 = struct.Struct("<H")
_U8 = struct.Struct("<B")


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or inconsistent."""


def _write_tensor(sink: BinaryIO, name: str, array: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    sink.write(_U16.pack(len(encoded)))
    sink.write(encoded)
    sink.write(_U8.pack(array.ndim))
    for dim in array.shape:
        sink.write(_U32.pack(dim))
    sink.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _read_exact(source: BinaryIO, n: int) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def _read_tensor(source: BinaryIO) -> tuple[str, np.ndarray]:
    (name_len,) = _U16.unpack(_read_exact(source, 2))
    name = _read_exact(source, name_len).decode("utf-8")
    (ndim,) = _U8.unpack(_read_exact(source, 1))
    shape = tuple(_U32.unpack(_read_exact(source, 4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(source, count * 4)
    array = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    return name, array


def save_checkpoint(sink: BinaryIO, snapshot: TrainingSnapshot) -> None:
    model = snapshot.model
    lstm = model.lstm
    meta = {
        "format": CHECKPOINT_VERSION,
        "frame_step": snapshot.frame_step,
        "adam_step": snapshot.adam.step,
        "state_step": snapshot.state.t,
        "grid_cells": snapshot.state.h.shape[0],
        "feature_dim": lstm.feature_dim,
        "hidden_dim": lstm.hidden_dim,
        "input_dim": lstm.input_dim,
        "bank": lstm.bank,
        "strict_inputs": lstm.strict_inputs,
        "pool_hidden": model.attention.pool_hidden,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")

    tensors: dict[str, np.ndarray] = dict(model.tensors())
    for name, arr in snapshot.adam.m.items():
        tensors[f"adam.m.{name}"] = arr
    for name, arr in snapshot.adam.v.items():
        tensors[f"adam.v.{name}"] = arr
    tensors["state.h"] = snapshot.state.h
    tensors["state.c"] = snapshot.state.c

    sink.write(_HEAD.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION))
    sink.write(_U32.pack(len(meta_bytes)))
    sink.write(meta_bytes)
    sink.write(_U32.pack(len(tensors)))
    for name in sorted(tensors):
        _write_tensor(sink, name, tensors[name])


def save_checkpoint_file(path, snapshot: TrainingSnapshot) -> None:
    with open(path, "wb") as sink:
        save_checkpoint(sink, snapshot)


def load_checkpoint(source: BinaryIO) -> TrainingSnapshot:
    magic, version = _HEAD.unpack(_read_exact(source, _HEAD.size))
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = _U32.unpack(_read_exact(source, 4))
    meta = json.loads(_read_exact(source, meta_len).decode("utf-8"))
    (count,) = _U32.unpack(_read_exact(source, 4))
    tensors = dict(_read_tensor(source) for _ in range(count))

    attn_keys = ("attn.w_hidden", "attn.w_input", "attn.bias", "attn.score")
    missing = [k for k in attn_keys if k not in tensors]
    if missing:
        raise CheckpointError(f"missing tensors: {missing}")
    attention = AttentionParams(
        w_hidden=tensors["attn.w_hidden"], w_input=tensors["attn.w_input"],
        bias=tensors["attn.bias"], score=tensors["attn.score"],
        pool_hidden=bool(meta["pool_hidden"]),
    )

    arrays = {}
    names = ["w_hp", "b_hp", "w_in", "b_in", "w_out", "b_out"]
    for gate in GATE_NAMES:
        names += [f"w_{gate}", f"u_{gate}", f"b_{gate}"]
    for short in names:
        key = f"lstm.{short}"
        if key not in tensors:
            raise CheckpointError(f"missing tensors: ['{key}']")
        arrays[short] = tensors[key]
    lstm = LstmParams(
        arrays=arrays, feature_dim=int(meta["feature_dim"]),
        hidden_dim=int(meta["hidden_dim"]), input_dim=int(meta["input_dim"]),
        bank=int(meta["bank"]), strict_inputs=bool(meta["strict_inputs"]),
    )
    model = ModelParams(attention=attention, lstm=lstm)

    moment_names = list(model.tensors())
    wanted = ([f"adam.m.{k}" for k in moment_names]
              + [f"adam.v.{k}" for k in moment_names]
              + ["state.h", "state.c"])
    missing = [k for k in wanted if k not in tensors]
    if missing:
        raise CheckpointError(f"missing tensors: {missing}")
    adam = AdamState(
        m={k: tensors[f"adam.m.{k}"] for k in moment_names},
        v={k: tensors[f"adam.v.{k}"] for k in moment_names},
        step=int(meta["adam_step"]),
    )
    state = PredictorState(h=tensors["state.h"], c=tensors["state.c"],
                           t=int(meta.get("state_step", 0)))
    return TrainingSnapshot(model=model, adam=adam, state=state,
                            frame_step=int(meta["frame_step"]))


def load_checkpoint_file(path) -> TrainingSnapshot:
    with open(path, "rb") as source:
        return load_checkpoint(source)
