"""Run a frozen backbone over a frame source and write an evseg stream.

Sources: a directory of images (sorted by name), a .npy stack (T, H, W, 3)
or (T, H, W), or a video file when opencv is installed. Frames are decoded
in a small thread pool, encoded in batches, and written strictly in order;
the header's frame count is patched in after the last frame so skips never
leave a lying header behind.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from evseg import FeatureFrame, StreamHeader, fps_to_rational, write_stream

from .backbones import BackboneError, get_backbone

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class ExportError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExportConfig:
    """What to export and how; grid and feature dims come from the backbone."""

    input_path: str
    out_path: str
    backbone: str = "inception_v3"
    stride: int = 1
    fps: str | float | None = None      # None: try source metadata, else 1
    skip_unreadable: bool = False       # False: abort on the first bad frame
    batch_size: int = 8
    decode_workers: int = 4
    backbone_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class ExportResult:
    out_path: str
    sidecar_path: str
    frames_written: int
    skipped: list[str]
    grid_side: int
    feature_dim: int
    fps: tuple[int, int]


def _load_image(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _iter_image_dir(root: Path, config: ExportConfig, skipped: list[str]):
    paths = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise ExportError(f"no image files under {root}")
    paths = paths[::config.stride]
    with ThreadPoolExecutor(max_workers=config.decode_workers) as pool:
        for start in range(0, len(paths), config.batch_size):
            chunk = paths[start:start + config.batch_size]

            def decode(path):
                try:
                    return _load_image(path)
                except Exception as exc:
                    if not config.skip_unreadable:
                        raise ExportError(f"unreadable frame {path}: {exc}") \
                            from exc
                    print(f"skipping unreadable frame {path}: {exc}",
                          file=sys.stderr)
                    skipped.append(path.name)
                    return None
            for image in pool.map(decode, chunk):
                if image is not None:
                    yield image


def _iter_npy(path: Path, config: ExportConfig):
    stack = np.load(path, mmap_mode="r")
    if stack.ndim == 3:
        stack = stack[..., None].repeat(3, axis=3)
    if stack.ndim != 4 or stack.shape[3] != 3:
        raise ExportError(f"npy stack must be (T, H, W[, 3]), got {stack.shape}")
    for t in range(0, stack.shape[0], config.stride):
        yield np.asarray(stack[t])


def _iter_video(path: Path, config: ExportConfig, meta: dict):
    try:
        import cv2
    except ImportError as exc:
        raise ExportError(
            f"reading {path.suffix} needs opencv-python-headless") from exc
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise ExportError(f"could not open video {path}")
    meta["fps"] = cap.get(cv2.CAP_PROP_FPS) or 0.0
    try:
        t = 0
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            if t % config.stride == 0:
                yield frame[:, :, ::-1]   # BGR -> RGB
            t += 1
    finally:
        cap.release()


def _frame_source(config: ExportConfig, skipped: list[str], meta: dict):
    path = Path(config.input_path)
    if path.is_dir():
        return _iter_image_dir(path, config, skipped)
    if not path.exists():
        raise ExportError(f"input {path} does not exist")
    if path.suffix.lower() == ".npy":
        return _iter_npy(path, config)
    return _iter_video(path, config, meta)


def export_features(config: ExportConfig) -> ExportResult:
    """Encode every (strided) frame and write stream + JSON sidecar.

    The output parses with the engine's stream reader; running twice on the
    same input produces byte-identical files.
    """
    backbone = get_backbone(config.backbone, **config.backbone_options)
    skipped: list[str] = []
    meta: dict = {}
    frames = _frame_source(config, skipped, meta)

    def encoded():
        batch: list[np.ndarray] = []
        index = 0
        shape = None
        for image in frames:
            if shape is None:
                shape = image.shape
            elif image.shape != shape:
                raise ExportError(
                    f"frame size changed mid-stream: {image.shape} vs {shape}")
            batch.append(image)
            if len(batch) == config.batch_size:
                features = backbone.encode(np.stack(batch))
                for row in features:
                    yield FeatureFrame(index=index, values=row)
                    index += 1
                batch.clear()
        if batch:
            features = backbone.encode(np.stack(batch))
            for row in features:
                yield FeatureFrame(index=index, values=row)
                index += 1

    out = Path(config.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)

    # frame count goes in after the fact; skips and open-ended video make it
    # unknowable up front
    gen = encoded()
    first = next(gen, None)
    if first is None:
        raise ExportError("no readable frames to export")
    if config.fps is not None:
        fps = fps_to_rational(config.fps)
    elif meta.get("fps"):
        fps = fps_to_rational(round(meta["fps"], 3))
    else:
        fps = (1, 1)

    header = StreamHeader(grid_side=backbone.grid_side,
                          feature_dim=backbone.feature_dim,
                          frame_count=0, fps_num=fps[0], fps_den=fps[1])

    def with_first():
        yield first
        yield from gen

    with open(out, "wb") as sink:
        written = write_stream(header, with_first(), sink)
        sink.seek(0)
        sink.write(dataclasses.replace(header, frame_count=written).pack())

    sidecar = out.with_suffix(out.suffix + ".json")
    payload = {
        "backbone": backbone.name,
        "grid_side": backbone.grid_side,
        "feature_dim": backbone.feature_dim,
        "preprocessing": backbone.preprocessing(),
        "stride": config.stride,
        "fps": list(fps),
        "source": str(config.input_path),
        "frames_written": written,
        "skipped": skipped,
    }
    sidecar.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")
    return ExportResult(out_path=str(out), sidecar_path=str(sidecar),
                        frames_written=written, skipped=skipped,
                        grid_side=backbone.grid_side,
                        feature_dim=backbone.feature_dim, fps=fps)
