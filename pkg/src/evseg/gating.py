"""Turns a scalar loss signal into binary frame decisions and event intervals.

Two gate modes share one threshold rule (value >= threshold -> positive):

- simple: threshold the raw signal.
- adaptive: subtract a causal trailing mean of width n first, so slow baseline
  drift (day/night, lighting) cancels and only local excursions survive. The
  filter is causal because the system is online; a centered window would need
  future frames. Warm-up frames use the mean of whatever history exists, which
  keeps the output aligned one-to-one with the input (and makes the first
  smoothed value exactly zero).

Positive frames merge into maximal runs; runs separated by a gap of at most
``join_window`` frames fuse into one interval (the gap <= join_window
convention is fixed here and used everywhere).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .feature_stream import EventInterval
from .losses import LossSample


@dataclass(frozen=True)
class GateConfig:
    """Gate settings. ``buffer_len`` (m) caps retained history in streaming
    use; only ``smooth_window`` (n) affects the smoothed value, and adaptive
    mode requires 1 <= n < m."""

    mode: str = "adaptive"              # "simple" | "adaptive"
    threshold: float = 0.0              # psi
    buffer_len: int = 64                # m
    smooth_window: int = 8              # n
    signal: str = "prediction"          # "prediction" | "motion_weighted"

    def __post_init__(self):
        if self.mode not in ("simple", "adaptive"):
            raise ValueError(f"unknown gate mode {self.mode!r}")
        if self.signal not in ("prediction", "motion_weighted"):
            raise ValueError(f"unknown signal {self.signal!r}")
        if self.mode == "adaptive":
            if not 1 <= self.smooth_window < self.buffer_len:
                raise ValueError(
                    "adaptive gate needs 1 <= smooth_window < buffer_len, got "
                    f"n={self.smooth_window}, m={self.buffer_len}"
                )


def select_signal(trace: Sequence[LossSample], which: str) -> np.ndarray:
    if which == "prediction":
        return np.array([s.pred_loss for s in trace])
    if which == "motion_weighted":
        return np.array([s.mw_loss for s in trace])
    raise ValueError(f"unknown signal {which!r}")


def smooth_adaptive(values: Sequence[float], window: int) -> np.ndarray:
    """Subtract the trailing mean of the last ``window`` values (inclusive).

    Frames earlier than a full window subtract the mean of available history.
    Empty input gives empty output.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    history = values.tolist()
    # Accumulates deviations left to right instead of averaging raw values:
    # algebraically the same, but a constant signal yields exactly zero, and
    # the incremental gate lands on identical bits.
    for t in range(len(history)):
        lo = max(0, t - window + 1)
        acc = 0.0
        for v in history[lo:t + 1]:
            acc += history[t] - v
        out[t] = acc / (t + 1 - lo)
    return out


def gate(values: Sequence[float], threshold: float) -> np.ndarray:
    """Binary decisions: 1 where value >= threshold (boundary inclusive)."""
    values = np.asarray(values, dtype=np.float64)
    return (values >= threshold).astype(np.int8)


def extract_events(binary: Sequence[int], join_window: int = 0,
                   ) -> list[EventInterval]:
    """Maximal runs of positives, merging runs whose gap is <= join_window."""
    if join_window < 0:
        raise ValueError("join_window must be >= 0")
    binary = np.asarray(binary)
    positives = np.flatnonzero(binary)
    if positives.size == 0:
        return []
    events: list[EventInterval] = []
    start = prev = int(positives[0])
    for idx in positives[1:]:
        idx = int(idx)
        if idx - prev - 1 <= join_window:
            prev = idx
        else:
            events.append(EventInterval(start_frame=start, end_frame=prev))
            start = prev = idx
    events.append(EventInterval(start_frame=start, end_frame=prev))
    return events


def prepare_signal(raw: Sequence[float], config: GateConfig) -> np.ndarray:
    """Raw signal for the simple gate, trailing-mean-smoothed for adaptive."""
    if config.mode == "adaptive":
        return smooth_adaptive(raw, config.smooth_window)
    return np.asarray(raw, dtype=np.float64)


def detect_events(raw: Sequence[float], config: GateConfig,
                  join_window: int = 0) -> list[EventInterval]:
    """Full chain: prepare -> threshold -> extract, scoring each interval with
    the peak prepared-signal value inside it."""
    prepared = prepare_signal(raw, config)
    events = extract_events(gate(prepared, config.threshold), join_window)
    for ev in events:
        ev.score = float(prepared[ev.start_frame:ev.end_frame + 1].max())
    return events


def sweep_detections(
    raw: Sequence[float], config: GateConfig,
    thresholds: Iterable[float], join_windows: Iterable[int],
) -> dict[tuple[float, int], list[EventInterval]]:
    """Detections for every (threshold, join_window) grid point.

    The prepared signal is computed once; config's own threshold is ignored.
    """
    prepared = prepare_signal(raw, config)
    out: dict[tuple[float, int], list[EventInterval]] = {}
    for psi in thresholds:
        binary = gate(prepared, psi)
        for phi in join_windows:
            events = extract_events(binary, phi)
            for ev in events:
                ev.score = float(prepared[ev.start_frame:ev.end_frame + 1].max())
            out[(psi, phi)] = events
    return out


class StreamingGate:
    """Incremental form: push one value, get one binary decision.

    Holds at most ``buffer_len`` past values in a ring buffer; the smoothed
    value at each push matches the batch smooth_adaptive output exactly.
    Single-consumer; not thread-safe.
    """

    def __init__(self, config: GateConfig):
        self.config = config
        self._buffer: deque[float] = deque(maxlen=config.buffer_len)

    def push(self, value: float) -> int:
        value = float(value)
        self._buffer.append(value)
        if self.config.mode == "adaptive":
            window = list(self._buffer)[-self.config.smooth_window:]
            acc = 0.0
            for v in window:
                acc += value - v
            smoothed = acc / len(window)
        else:
            smoothed = value
        return int(smoothed >= self.config.threshold)
