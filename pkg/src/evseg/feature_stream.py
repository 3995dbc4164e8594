"""Feature-stream container format, sequential reader/writer, and a synthetic generator.

A stream holds one encoded feature frame per time step: an N x N grid of
M-dimensional float32 vectors, flattened to a (G, M) array with G = N*N.
The on-disk layout is little-endian and append-friendly:

    magic "EVSG" | version u32 | N u32 | M u32 | T u64 | fps_num u32 | fps_den u32
    then T frames (or frames until EOF when T == 0), each G*M float32,
    grid-location-major.

T == 0 marks an open-ended stream; readers treat EOF as normal termination.
The header carries fps as a rational so downstream false-positives-per-minute
metrics have an exact wall-clock duration.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

MAGIC = b"EVSG"
FORMAT_VERSION = 1
_HEADER_STRUCT = struct.Struct("<4sIIIQII")
HEADER_SIZE = _HEADER_STRUCT.size


class StreamFormatError(Exception):
    """Malformed stream container (bad magic, bad header, shape mismatch)."""


class TruncatedStreamError(StreamFormatError):
    """Stream ended mid-frame; carries the index of the incomplete frame."""

    def __init__(self, frame_index: int, got: int, expected: int):
        self.frame_index = frame_index
        super().__init__(
            f"frame {frame_index} truncated: got {got} of {expected} bytes"
        )


class InvalidFrameError(StreamFormatError):
    """Frame payload violates an invariant (non-finite values, bad shape)."""

    def __init__(self, frame_index: int, reason: str):
        self.frame_index = frame_index
        super().__init__(f"frame {frame_index}: {reason}")


@dataclass(frozen=True)
class StreamHeader:
    """Stream metadata. ``frame_count == 0`` means open-ended."""

    grid_side: int
    feature_dim: int
    frame_count: int = 0
    fps_num: int = 1
    fps_den: int = 1
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.grid_side < 1 or self.feature_dim < 1:
            raise ValueError("grid_side and feature_dim must be >= 1")
        if self.frame_count < 0:
            raise ValueError("frame_count must be >= 0")
        if self.fps_num <= 0 or self.fps_den <= 0:
            raise ValueError("fps must be a positive rational")

    @property
    def grid_cells(self) -> int:
        return self.grid_side * self.grid_side

    @property
    def fps(self) -> Fraction:
        return Fraction(self.fps_num, self.fps_den)

    @property
    def frame_bytes(self) -> int:
        return self.grid_cells * self.feature_dim * 4

    def duration_minutes(self, frames: int | None = None) -> float:
        """Wall-clock minutes covered by ``frames`` (default: frame_count)."""
        n = self.frame_count if frames is None else frames
        return n / float(self.fps) / 60.0

    def pack(self) -> bytes:
        return _HEADER_STRUCT.pack(
            MAGIC, self.version, self.grid_side, self.feature_dim,
            self.frame_count, self.fps_num, self.fps_den,
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "StreamHeader":
        if len(raw) < HEADER_SIZE:
            raise StreamFormatError(
                f"header truncated: got {len(raw)} of {HEADER_SIZE} bytes"
            )
        magic, version, n, m, t, num, den = _HEADER_STRUCT.unpack(raw[:HEADER_SIZE])
        if magic != MAGIC:
            raise StreamFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise StreamFormatError(f"unsupported stream version {version}")
        try:
            return cls(grid_side=n, feature_dim=m, frame_count=t,
                       fps_num=num, fps_den=den, version=version)
        except ValueError as exc:
            raise StreamFormatError(f"invalid header fields: {exc}") from exc


@dataclass
class FeatureFrame:
    """One time step: ``values`` is a (G, M) float32 array, G = grid_side**2."""

    index: int
    values: np.ndarray

    def validate(self, header: StreamHeader) -> None:
        expected = (header.grid_cells, header.feature_dim)
        if self.values.shape != expected:
            raise InvalidFrameError(
                self.index, f"shape {self.values.shape} != {expected}"
            )
        if not np.isfinite(self.values).all():
            raise InvalidFrameError(self.index, "non-finite values in payload")


def fps_to_rational(fps: float | str | Fraction) -> tuple[int, int]:
    """Convert an fps given as float, "num/den" string, or Fraction to (num, den)."""
    if isinstance(fps, str) and "/" in fps:
        num, den = fps.split("/", 1)
        frac = Fraction(int(num), int(den))
    else:
        frac = Fraction(str(fps)).limit_denominator(1_000_000)
    if frac <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    return frac.numerator, frac.denominator


def write_stream(header: StreamHeader, frames: Iterable[FeatureFrame],
                 sink: BinaryIO) -> int:
    """Write header then frames sequentially; returns the number of frames written.

    Frames are validated against the header before any bytes of that frame go
    out, so a shape error never leaves a half-written frame behind it.
    """
    sink.write(header.pack())
    count = 0
    for frame in frames:
        frame.validate(header)
        data = np.ascontiguousarray(frame.values, dtype="<f4")
        sink.write(data.tobytes())
        count += 1
    if header.frame_count and count != header.frame_count:
        raise StreamFormatError(
            f"header promises {header.frame_count} frames, wrote {count}"
        )
    return count


def write_stream_file(path, header: StreamHeader,
                      frames: Iterable[FeatureFrame]) -> int:
    with open(path, "wb") as sink:
        return write_stream(header, frames, sink)


def read_header(source: BinaryIO) -> StreamHeader:
    return StreamHeader.unpack(source.read(HEADER_SIZE))


def read_stream(source: BinaryIO) -> tuple[StreamHeader, Iterator[FeatureFrame]]:
    """Open a stream: returns (header, lazy frame iterator).

    The iterator validates shape and finiteness of every frame. If the header
    declares a frame count, a short read raises TruncatedStreamError; for
    open-ended streams (T == 0) EOF between frames is normal termination, but
    EOF inside a frame still raises.
    """
    header = read_header(source)
    return header, _iter_frames(source, header)


def _iter_frames(source: BinaryIO, header: StreamHeader) -> Iterator[FeatureFrame]:
    shape = (header.grid_cells, header.feature_dim)
    index = 0
    while True:
        if header.frame_count and index >= header.frame_count:
            return
        raw = source.read(header.frame_bytes)
        if not raw:
            if header.frame_count and index < header.frame_count:
                raise TruncatedStreamError(index, 0, header.frame_bytes)
            return
        if len(raw) < header.frame_bytes:
            raise TruncatedStreamError(index, len(raw), header.frame_bytes)
        values = np.frombuffer(raw, dtype="<f4").reshape(shape)
        frame = FeatureFrame(index=index, values=values)
        frame.validate(header)
        yield frame
        index += 1


def read_stream_file(path) -> tuple[StreamHeader, Iterator[FeatureFrame]]:
    """File variant of read_stream; the iterator closes the file when exhausted."""
    fh = open(path, "rb")
    try:
        header = read_header(fh)
    except Exception:
        fh.close()
        raise

    def frames():
        try:
            yield from _iter_frames(fh, header)
        finally:
            fh.close()

    return header, frames()


def read_all(path) -> tuple[StreamHeader, list[FeatureFrame]]:
    header, frames = read_stream_file(path)
    return header, list(frames)


# ---------------------------------------------------------------------------
# Synthetic streams with injected ground-truth boundaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Regime:
    """Feature distribution for one segment.

    Per grid location the mean vector is drawn once from
    Normal(mean_level, mean_spread); frames add Normal(0, noise) sample noise
    and an optional per-frame linear drift of the whole level. Drift models
    slow environmental change, abrupt level jumps model event boundaries.
    """

    mean_level: float = 0.0
    mean_spread: float = 1.0
    noise: float = 0.1
    drift: float = 0.0


@dataclass(frozen=True)
class Segment:
    start: int
    end: int  # exclusive
    regime: Regime


@dataclass(frozen=True)
class SyntheticScenario:
    """Deterministic scenario: contiguous segments covering [0, total_frames)."""

    total_frames: int
    segments: Sequence[Segment]
    grid_side: int = 4
    feature_dim: int = 16
    seed: int = 0
    fps_num: int = 4
    fps_den: int = 1
    boundary_pad: int = 3

    def __post_init__(self):
        if not self.segments:
            raise ValueError("scenario needs at least one segment")
        pos = 0
        for seg in self.segments:
            if seg.start != pos:
                raise ValueError(
                    f"segments must be contiguous: expected start {pos}, got {seg.start}"
                )
            if seg.end <= seg.start:
                raise ValueError(f"empty segment [{seg.start}, {seg.end})")
            pos = seg.end
        if pos != self.total_frames:
            raise ValueError(
                f"segments cover [0, {pos}) but total_frames is {self.total_frames}"
            )

    def header(self) -> StreamHeader:
        return StreamHeader(
            grid_side=self.grid_side, feature_dim=self.feature_dim,
            frame_count=self.total_frames,
            fps_num=self.fps_num, fps_den=self.fps_den,
        )

    def with_seed(self, seed: int) -> "SyntheticScenario":
        return dataclasses.replace(self, seed=seed)

    def with_fps(self, num: int, den: int = 1) -> "SyntheticScenario":
        return dataclasses.replace(self, fps_num=num, fps_den=den)


@dataclass
class EventInterval:
    """Closed interval [start_frame, end_frame] with optional label and score."""

    start_frame: int
    end_frame: int
    label: str | None = None
    score: float | None = None

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise ValueError(
                f"interval start {self.start_frame} > end {self.end_frame}"
            )

    @property
    def length(self) -> int:
        return self.end_frame - self.start_frame + 1


def generate_synthetic(
    scenario: SyntheticScenario,
) -> tuple[Iterator[FeatureFrame], list[EventInterval]]:
    """Generate a deterministic stream plus ground-truth boundary intervals.

    Ground truth marks each regime transition: a closed interval of
    ``boundary_pad`` frames on either side of the first frame of the new
    segment, clipped to the stream. Frames come out as float32, matching the
    on-disk format bit for bit.
    """
    rng = np.random.default_rng(scenario.seed)
    g = scenario.grid_side ** 2
    m = scenario.feature_dim
    # Mean grids are drawn up front, in segment order, so the stream is a pure
    # function of the scenario regardless of how far the iterator is consumed.
    means = [
        rng.normal(seg.regime.mean_level, seg.regime.mean_spread, size=(g, m))
        for seg in scenario.segments
    ]
    noise_seed = int(rng.integers(0, 2**63 - 1))

    truth = []
    for seg in scenario.segments[1:]:
        b = seg.start
        truth.append(EventInterval(
            start_frame=max(0, b - scenario.boundary_pad),
            end_frame=min(scenario.total_frames - 1, b + scenario.boundary_pad),
            label="boundary",
        ))

    def frames() -> Iterator[FeatureFrame]:
        noise_rng = np.random.default_rng(noise_seed)
        t = 0
        for seg, mean in zip(scenario.segments, means):
            for local in range(seg.end - seg.start):
                values = mean + seg.regime.drift * local
                if seg.regime.noise:
                    values = values + noise_rng.normal(
                        0.0, seg.regime.noise, size=(g, m)
                    )
                yield FeatureFrame(index=t, values=values.astype(np.float32))
                t += 1

    return frames(), truth


# ---------------------------------------------------------------------------
# Scenario files: line-oriented key = value text
# ---------------------------------------------------------------------------

_SCENARIO_KEYS = {"frames", "grid", "dim", "seed", "fps", "boundary_pad"}


def parse_scenario(text: str) -> SyntheticScenario:
    """Parse a scenario file.

    Schema (one ``key = value`` per line, ``#`` comments):

        frames = 5000
        grid = 4
        dim = 16
        seed = 7
        fps = 4          # or a rational like 30000/1001
        boundary_pad = 3
        segment = 0 499 level=0.0 spread=1.0 noise=0.1 drift=0.0
        segment = 499 1000 level=3.0

    Segment bounds are start (inclusive) and end (exclusive); regime keys not
    given fall back to the Regime defaults.
    """
    scalars: dict[str, str] = {}
    segments: list[Segment] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"scenario line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "segment":
            segments.append(_parse_segment(value, lineno))
        elif key in _SCENARIO_KEYS:
            scalars[key] = value
        else:
            raise ValueError(f"scenario line {lineno}: unknown key {key!r}")
    if "frames" not in scalars:
        raise ValueError("scenario is missing 'frames'")
    fps_num, fps_den = fps_to_rational(scalars.get("fps", "1"))
    return SyntheticScenario(
        total_frames=int(scalars["frames"]),
        segments=segments,
        grid_side=int(scalars.get("grid", 4)),
        feature_dim=int(scalars.get("dim", 16)),
        seed=int(scalars.get("seed", 0)),
        fps_num=fps_num,
        fps_den=fps_den,
        boundary_pad=int(scalars.get("boundary_pad", 3)),
    )


def _parse_segment(value: str, lineno: int) -> Segment:
    parts = value.split()
    if len(parts) < 2:
        raise ValueError(f"scenario line {lineno}: segment needs start and end")
    start, end = int(parts[0]), int(parts[1])
    regime_kwargs = {}
    names = {"level": "mean_level", "spread": "mean_spread",
             "noise": "noise", "drift": "drift"}
    for item in parts[2:]:
        if "=" not in item:
            raise ValueError(f"scenario line {lineno}: bad regime token {item!r}")
        k, v = item.split("=", 1)
        if k not in names:
            raise ValueError(f"scenario line {lineno}: unknown regime key {k!r}")
        regime_kwargs[names[k]] = float(v)
    return Segment(start=start, end=end, regime=Regime(**regime_kwargs))


def load_scenario(path) -> SyntheticScenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())
