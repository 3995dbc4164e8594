"""Scores detections against ground-truth annotations.

Frame level: per-frame confusion counts against the union of truth intervals,
giving recall and false-positive rate. Activity level: one-to-one assignment
between truth and detected intervals (pairs must share at least one frame,
with an optional minimum-overlap fraction), giving activity recall and false
positives per minute of footage.

The assignment maximizes total overlapping frames; among equally-overlapping
solutions it prefers more matched pairs. All labels collapse to a single
"event" class for scoring since the detector is class-agnostic; a per-label
breakdown is available for reporting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .feature_stream import EventInterval
from .gating import GateConfig, extract_events, gate, prepare_signal


@dataclass
class AnnotationSet:
    """Ground-truth intervals over [0, total_frames) at a given fps."""

    intervals: list[EventInterval]
    total_frames: int
    fps: float

    def __post_init__(self):
        if self.total_frames < 1:
            raise ValueError("total_frames must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        for iv in self.intervals:
            if iv.start_frame < 0 or iv.end_frame >= self.total_frames:
                raise ValueError(
                    f"interval [{iv.start_frame}, {iv.end_frame}] outside "
                    f"[0, {self.total_frames})"
                )

    @property
    def duration_minutes(self) -> float:
        return self.total_frames / self.fps / 60.0


def load_annotations(path, total_frames: int, fps: float,
                     instant_pad: int = 0) -> AnnotationSet:
    """Read a ``start_frame,end_frame,label`` CSV (header row required).

    Single-frame rows (start == end) are instants; they widen by
    ``instant_pad`` frames on each side, clipped to the stream.
    """
    intervals: list[EventInterval] = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip().lower() != "start_frame":
            raise ValueError(f"{path}: expected header starting with start_frame")
        for row in reader:
            if not row or not row[0].strip():
                continue
            start, end = int(row[0]), int(row[1])
            label = row[2].strip() if len(row) > 2 and row[2].strip() else None
            if start == end and instant_pad:
                start = max(0, start - instant_pad)
                end = min(total_frames - 1, end + instant_pad)
            intervals.append(EventInterval(start, end, label=label))
    return AnnotationSet(intervals=intervals, total_frames=total_frames, fps=fps)


def write_detections_csv(path, events: Sequence[EventInterval]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_frame", "end_frame", "score"])
        for ev in events:
            writer.writerow([ev.start_frame, ev.end_frame,
                             "" if ev.score is None else repr(ev.score)])


def load_detections_csv(path) -> list[EventInterval]:
    events: list[EventInterval] = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row or not row[0].strip():
                continue
            score = float(row[2]) if len(row) > 2 and row[2].strip() else None
            events.append(EventInterval(int(row[0]), int(row[1]), score=score))
    return events


def rasterize(intervals: Iterable[EventInterval], total_frames: int) -> np.ndarray:
    """Binary frame array covering the union of the intervals."""
    out = np.zeros(total_frames, dtype=np.int8)
    for iv in intervals:
        lo = max(0, iv.start_frame)
        hi = min(total_frames - 1, iv.end_frame)
        if hi >= lo:
            out[lo:hi + 1] = 1
    return out


@dataclass(frozen=True)
class FrameMetrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def recall(self) -> float:
        pos = self.tp + self.fn
        return self.tp / pos if pos else 0.0

    @property
    def fpr(self) -> float:
        neg = self.fp + self.tn
        return self.fp / neg if neg else 0.0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def frame_level(detected: Sequence[int], truth: AnnotationSet) -> FrameMetrics:
    """Frame confusion counts for a binary detection sequence."""
    detected = np.asarray(detected)
    if detected.shape != (truth.total_frames,):
        raise ValueError(
            f"detected length {detected.shape} != ({truth.total_frames},)"
        )
    actual = rasterize(truth.intervals, truth.total_frames)
    det = detected != 0
    act = actual != 0
    tp = int(np.sum(det & act))
    fp = int(np.sum(det & ~act))
    fn = int(np.sum(~det & act))
    tn = int(np.sum(~det & ~act))
    return FrameMetrics(tp=tp, fp=fp, tn=tn, fn=fn)


def interval_overlap(a: EventInterval, b: EventInterval) -> int:
    """Number of shared frames between two closed intervals."""
    return max(0, min(a.end_frame, b.end_frame)
               - max(a.start_frame, b.start_frame) + 1)


def hungarian_match(
    gt: Sequence[EventInterval], det: Sequence[EventInterval],
    min_overlap_fraction: float = 0.0,
) -> list[tuple[int, int]]:
    """One-to-one assignment maximizing total overlapping frames.

    A pair is eligible if it shares >= 1 frame and its overlap covers at
    least ``min_overlap_fraction`` of the truth interval. Ties in total
    overlap break toward more matched pairs. Returns sorted (gt index,
    det index) pairs; unmatched items on either side are simply absent.
    """
    if not gt or not det:
        return []
    overlap = np.zeros((len(gt), len(det)), dtype=np.int64)
    for i, g in enumerate(gt):
        for j, d in enumerate(det):
            overlap[i, j] = interval_overlap(g, d)
    required = np.maximum(
        1, np.ceil(min_overlap_fraction
                   * np.array([g.length for g in gt]))[:, None]
    ).astype(np.int64)
    eligible = overlap >= required
    # Scaling overlaps leaves room for a +1 per matched pair, so cardinality
    # only ever breaks exact overlap ties.
    big = np.int64(len(gt) * len(det) + 1)
    profit = np.where(eligible, overlap * big + 1, np.int64(0))
    rows, cols = linear_sum_assignment(profit, maximize=True)
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if eligible[i, j]]
    pairs.sort()
    return pairs


@dataclass(frozen=True)
class ActivityMetrics:
    matched: int
    gt_total: int
    det_total: int
    duration_minutes: float

    @property
    def recall(self) -> float:
        return self.matched / self.gt_total if self.gt_total else 0.0

    @property
    def fp_per_min(self) -> float:
        return (self.det_total - self.matched) / self.duration_minutes


def activity_level(
    gt: Sequence[EventInterval], det: Sequence[EventInterval],
    duration_minutes: float, min_overlap_fraction: float = 0.0,
) -> ActivityMetrics:
    """Activity recall and unmatched detections per minute."""
    if duration_minutes <= 0:
        raise ValueError("duration_minutes must be positive")
    pairs = hungarian_match(gt, det, min_overlap_fraction)
    return ActivityMetrics(matched=len(pairs), gt_total=len(gt),
                           det_total=len(det),
                           duration_minutes=duration_minutes)


def label_breakdown(
    gt: Sequence[EventInterval], matches: Sequence[tuple[int, int]],
) -> dict[str, tuple[int, int]]:
    """Per-label (matched, total) counts from a matching; informational only."""
    matched_gt = {i for i, _ in matches}
    out: dict[str, tuple[int, int]] = {}
    for i, iv in enumerate(gt):
        label = iv.label or "event"
        m, n = out.get(label, (0, 0))
        out[label] = (m + (1 if i in matched_gt else 0), n + 1)
    return out


# ---------------------------------------------------------------------------
# ROC sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RocPoint:
    param: float
    recall: float
    fp_axis: float


@dataclass
class RocTables:
    """Frame-level curves keyed by join window (points swept over threshold)
    and activity-level curves keyed by threshold (points swept over join
    window)."""

    frame_curves: dict[int, list[RocPoint]] = field(default_factory=dict)
    activity_curves: dict[float, list[RocPoint]] = field(default_factory=dict)

    def write(self, out_dir) -> list[str]:
        """One CSV per curve; returns the written paths."""
        from pathlib import Path

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for phi, points in sorted(self.frame_curves.items()):
            path = out_dir / f"frame_roc_phi{phi:g}.csv"
            _write_curve(path, points, "fpr")
            written.append(str(path))
        for psi, points in sorted(self.activity_curves.items()):
            path = out_dir / f"activity_roc_psi{psi:g}.csv"
            _write_curve(path, points, "fp_per_min")
            written.append(str(path))
        return written

    def best_activity_point(self) -> dict | None:
        """Grid point with highest activity recall, ties to fewer FP/min."""
        best = None
        best_key = None
        for psi, points in sorted(self.activity_curves.items()):
            for pt in points:
                key = (pt.recall, -pt.fp_axis)
                if best_key is None or key > best_key:
                    best_key = key
                    best = {"psi": psi, "phi": pt.param,
                            "recall": pt.recall, "fp_per_min": pt.fp_axis}
        return best

    def best_frame_point(self) -> dict | None:
        """Grid point with highest frame recall, ties to lower FPR."""
        best = None
        best_key = None
        for phi, points in sorted(self.frame_curves.items()):
            for pt in points:
                key = (pt.recall, -pt.fp_axis)
                if best_key is None or key > best_key:
                    best_key = key
                    best = {"phi": phi, "psi": pt.param,
                            "recall": pt.recall, "fpr": pt.fp_axis}
        return best


def _write_curve(path, points: Sequence[RocPoint], fp_name: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "recall", fp_name])
        for pt in points:
            writer.writerow([f"{pt.param:g}", repr(pt.recall), repr(pt.fp_axis)])


def align_signal(values: Sequence[float], total_frames: int,
                 offset: int = 1) -> np.ndarray:
    """Place a per-transition trace into frame index space.

    A trace of length T-1 scores each transition into the next frame, so
    entry t lands on frame t + offset; uncovered frames are zero. A trace
    already of full length passes through unchanged.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape == (total_frames,):
        return values
    if offset < 0 or offset + len(values) > total_frames:
        raise ValueError(
            f"trace of {len(values)} at offset {offset} does not fit in "
            f"{total_frames} frames"
        )
    out = np.zeros(total_frames, dtype=np.float64)
    out[offset:offset + len(values)] = values
    return out


def roc_sweep(
    raw_signal: Sequence[float], truth: AnnotationSet, config: GateConfig,
    thresholds: Sequence[float], join_windows: Sequence[int],
    min_overlap_fraction: float = 0.0,
) -> RocTables:
    """Sweep the gate grid and score every point at both levels.

    config supplies the gate mode and smoothing; its own threshold is ignored.
    The signal length must equal truth.total_frames.
    """
    if not len(thresholds) or not len(join_windows):
        raise ValueError("sweep needs at least one threshold and one join window")
    prepared = prepare_signal(raw_signal, config)
    if prepared.shape != (truth.total_frames,):
        raise ValueError(
            f"signal length {prepared.shape} != ({truth.total_frames},)"
        )
    tables = RocTables()
    minutes = truth.duration_minutes
    for psi in thresholds:
        binary = gate(prepared, psi)
        for phi in join_windows:
            events = extract_events(binary, phi)
            fm = frame_level(rasterize(events, truth.total_frames), truth)
            am = activity_level(truth.intervals, events, minutes,
                                min_overlap_fraction)
            tables.frame_curves.setdefault(int(phi), []).append(
                RocPoint(param=float(psi), recall=fm.recall, fp_axis=fm.fpr))
            tables.activity_curves.setdefault(float(psi), []).append(
                RocPoint(param=float(phi), recall=am.recall,
                         fp_axis=am.fp_per_min))
    return tables
