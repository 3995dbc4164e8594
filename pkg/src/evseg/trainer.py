"""Single-pass online training loop: one gradient step per incoming frame.

For each consecutive frame pair the loop runs attention over the current
frame, one predictor step, both loss signals against the next frame,
backpropagates the configured training loss through the per-frame graph, and
applies one Adam update. Training and inference are the same pass; a frame's
data is dropped as soon as the truncation window moves past it, so memory
stays flat no matter how long the stream runs.

Backpropagation is truncated at the previous hidden state by default
(window 1, matching one optimizer step per frame on a stateful recurrence);
longer windows re-walk the retained tapes of the last k steps.
"""

from __future__ import annotations

import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .attention import (AttentionParams, NumericError, attention_backward,
                        attention_forward, init_attention)
from .losses import LossSample, compute_both
from .predictor import (LstmParams, PredictorState, init_lstm,
                        predictor_backward, predictor_forward,
                        sample_dropout_mask)

THREADS_ENV = "EVSEG_THREADS"


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dropout: float = 0.4
    training_loss: str = "prediction"   # "prediction" | "motion_weighted"
    bptt_window: int = 1
    seed: int = 0
    grad_clip: float | None = None
    mean_reduction: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.bptt_window < 1:
            raise ValueError("bptt_window must be >= 1")
        if self.training_loss not in ("prediction", "motion_weighted"):
            raise ValueError(f"unknown training loss {self.training_loss!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")


@dataclass
class ModelParams:
    """Attention head plus predictor bank; everything Adam updates."""

    attention: AttentionParams
    lstm: LstmParams

    @property
    def feature_dim(self) -> int:
        return self.lstm.feature_dim

    @property
    def hidden_dim(self) -> int:
        return self.lstm.hidden_dim

    def tensors(self) -> dict[str, np.ndarray]:
        out = self.attention.tensors()
        out.update(self.lstm.tensors())
        return out

    def clone(self) -> "ModelParams":
        return ModelParams(attention=self.attention.clone(),
                           lstm=self.lstm.clone())


def init_model(feature_dim: int, hidden_dim: int | None = None,
               attn_dim: int | None = None, input_dim: int | None = None,
               grid_cells: int | None = None, shared: bool = True,
               strict_inputs: bool = False, pool_hidden: bool = False,
               seed: int = 0) -> ModelParams:
    """Fresh model: uniform(-0.05, 0.05) weights, zero biases, forget bias 1."""
    rng = np.random.default_rng(seed)
    hidden = hidden_dim or feature_dim
    attention = init_attention(feature_dim, hidden, attn_dim, rng, pool_hidden)
    lstm = init_lstm(feature_dim, hidden, input_dim, grid_cells,
                     shared, strict_inputs, rng)
    return ModelParams(attention=attention, lstm=lstm)


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, tensors: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(t) for k, t in tensors.items()},
                   v={k: np.zeros_like(t) for k, t in tensors.items()})

    def clone(self) -> "AdamState":
        return AdamState(m={k: a.copy() for k, a in self.m.items()},
                         v={k: a.copy() for k, a in self.v.items()},
                         step=self.step)


def adam_step(tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              adam: AdamState, config: TrainerConfig) -> None:
    """One bias-corrected Adam update, in place, over every tensor.

    Raises NumericError on non-finite gradients before touching any moment
    buffer, so the caller can abort with parameters intact.
    """
    for name, grad in grads.items():
        if not np.isfinite(grad).all():
            raise NumericError(f"non-finite gradient for {name}")

    if config.grad_clip is not None:
        total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if total > config.grad_clip:
            scale = config.grad_clip / total
            grads = {k: g * scale for k, g in grads.items()}

    adam.step += 1
    t = adam.step
    b1, b2 = config.beta1, config.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, grad in grads.items():
        m = adam.m[name]
        v = adam.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        update = (m / bias1) / (np.sqrt(v / bias2) + config.epsilon)
        tensors[name] -= config.learning_rate * update


@dataclass
class TrainingSnapshot:
    """Everything needed to resume or inspect a run at a step boundary."""

    model: ModelParams
    adam: AdamState
    state: PredictorState
    frame_step: int


class DivergenceError(RuntimeError):
    """Training hit a non-finite value; carries the last finite snapshot."""

    def __init__(self, step: int, reason: str, snapshot: TrainingSnapshot):
        self.step = step
        self.snapshot = snapshot
        super().__init__(f"diverged at step {step}: {reason}")


@dataclass
class RunOutputs:
    """Traces plus final parameters/optimizer/state of one stream run."""

    losses: list[LossSample] | None
    attention: list[tuple[int, np.ndarray]] | None
    model: ModelParams
    adam: AdamState
    state: PredictorState
    steps: int


def _frame_values(frame) -> np.ndarray:
    values = frame.values if hasattr(frame, "values") else frame
    return np.asarray(values, dtype=np.float64)


def run_stream(
    config: TrainerConfig, model: ModelParams, frames: Iterable,
    loss_sink: Callable[[LossSample], None] | None = None,
    attention_sink: Callable[[int, np.ndarray], None] | None = None,
    adam: AdamState | None = None, state: PredictorState | None = None,
    collect: bool = True, record_attention: bool = False,
) -> RunOutputs:
    """Process a stream end to end, learning online; returns traces and the
    final model. Modifies ``model`` in place (clone first to keep a template).

    Emits one LossSample per consecutive frame pair, in order, before pulling
    the pair-after-next from the iterator. Raises DivergenceError with the
    last finite snapshot if training blows up, ValueError if the stream has
    fewer than two frames.
    """
    it = iter(frames)
    first = next(it, None)
    second = next(it, None)
    if first is None or second is None:
        raise ValueError("stream must yield at least 2 frames")

    cur = _frame_values(first)
    nxt = _frame_values(second)
    first = second = None
    g = cur.shape[0]
    if cur.shape[1] != model.feature_dim:
        raise ValueError(
            f"stream feature dim {cur.shape[1]} != model {model.feature_dim}"
        )

    if state is None:
        state = PredictorState.zeros(g, model.hidden_dim)
    tensors = model.tensors()
    if adam is None:
        adam = AdamState.zeros_like(tensors)
    dropout_rng = np.random.default_rng(config.seed)

    losses: list[LossSample] | None = [] if collect else None
    attn_trace: list[tuple[int, np.ndarray]] | None = (
        [] if (collect and record_attention) else None
    )
    tapes: deque = deque(maxlen=config.bptt_window)
    t = 0
    while True:
        snapshot_state = state
        try:
            weights, masked, att_tape = attention_forward(
                model.attention, state.h, cur)
            mask = None
            if config.dropout > 0.0:
                mask = sample_dropout_mask(dropout_rng, g, model.hidden_dim,
                                           config.dropout)
            y_pred, state, pred_tape = predictor_forward(
                model.lstm, state, masked, cur, mask, training=True)
            sample, grad_pred, grad_mw = compute_both(
                y_pred, cur, nxt, t, config.mean_reduction)
            if not (np.isfinite(sample.pred_loss)
                    and np.isfinite(sample.mw_loss)):
                raise NumericError("non-finite loss")

            grad_y = (grad_pred if config.training_loss == "prediction"
                      else grad_mw)
            tapes.append((att_tape, pred_tape))
            att_tape = pred_tape = None   # reachable via the deque only
            grads = _backward_window(tapes, grad_y)
            adam_step(tensors, grads, adam, config)
        except NumericError as exc:
            snap = TrainingSnapshot(model=model.clone(), adam=adam.clone(),
                                    state=snapshot_state.clone(), frame_step=t)
            raise DivergenceError(t, str(exc), snap) from exc

        if len(tapes) == tapes.maxlen:
            # The next append would evict this tape anyway; dropping it now
            # keeps its frame from outliving the truncation window.
            tapes.popleft()

        if losses is not None:
            losses.append(sample)
        if loss_sink is not None:
            loss_sink(sample)
        if attn_trace is not None:
            attn_trace.append((t, weights.copy()))
        if attention_sink is not None:
            attention_sink(t, weights)

        cur = None   # frame t stays reachable only through a retained tape
        incoming = next(it, None)
        if incoming is None:
            break
        cur = nxt
        nxt = _frame_values(incoming)
        incoming = None
        t += 1

    return RunOutputs(losses=losses, attention=attn_trace, model=model,
                      adam=adam, state=state, steps=t + 1)


def _backward_window(tapes, grad_y: np.ndarray) -> dict[str, np.ndarray]:
    """Backpropagate through the retained tapes, newest first.

    Only the newest step receives the loss gradient; older steps receive the
    recurrent state gradients flowing back from the step after them. The
    previous hidden state feeds both the attention scores and the cell, so
    both contributions join before crossing a step boundary.
    """
    total: dict[str, np.ndarray] = {}
    grad_h = None
    grad_c = None
    newest = True
    for att_tape, pred_tape in reversed(tapes):
        upstream = grad_y if newest else np.zeros_like(grad_y)
        pgrads, gh_pred, gc_prev, gmasked, _ = predictor_backward(
            pred_tape, upstream, grad_h, grad_c)
        agrads, gh_att, _ = attention_backward(att_tape, gmasked)
        for grads in (pgrads, agrads):
            for name, val in grads.items():
                if name in total:
                    total[name] += val
                else:
                    total[name] = val
        grad_h = gh_pred + gh_att
        grad_c = gc_prev
        newest = False
    return total


class ParallelRunError(RuntimeError):
    """One or more parallel streams failed; siblings ran to completion.

    ``failures`` maps stream index to the exception; ``outputs`` holds the
    completed RunOutputs (None at failed indices).
    """

    def __init__(self, failures: dict[int, Exception],
                 outputs: list[RunOutputs | None]):
        self.failures = failures
        self.outputs = outputs
        detail = "; ".join(f"stream {i}: {e}" for i, e in sorted(failures.items()))
        super().__init__(f"{len(failures)} stream(s) failed: {detail}")


def worker_cap(requested: int | None = None) -> int:
    """Worker count: min(requested, EVSEG_THREADS env, CPU count)."""
    cap = os.cpu_count() or 1
    env = os.environ.get(THREADS_ENV)
    if env:
        cap = min(cap, max(1, int(env)))
    if requested:
        cap = min(cap, max(1, requested))
    return cap


def run_parallel(
    config: TrainerConfig, model: ModelParams, streams: Sequence[Iterable],
    max_workers: int | None = None, collect: bool = True,
    record_attention: bool = False,
) -> list[RunOutputs]:
    """Train one independent model clone per stream, concurrently.

    No parameter sharing: every stream gets its own copy of ``model`` (the
    template itself is left untouched) and its own optimizer. Outputs are
    ordered like the inputs. Per-stream failures do not abort siblings; if
    any stream failed, a ParallelRunError carrying all failures and the
    completed outputs is raised at the end.
    """
    if not streams:
        raise ValueError("run_parallel needs at least one stream")
    workers = worker_cap(max_workers or len(streams))
    outputs: list[RunOutputs | None] = [None] * len(streams)
    failures: dict[int, Exception] = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {
            pool.submit(run_stream, config, model.clone(), stream,
                        collect=collect, record_attention=record_attention): i
            for i, stream in enumerate(streams)
        }
        for future, i in futures.items():
            try:
                outputs[i] = future.result()
            except Exception as exc:
                failures[i] = exc
    if failures:
        raise ParallelRunError(failures, outputs)
    return outputs  # type: ignore[return-value]
