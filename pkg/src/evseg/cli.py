"""Command-line surface: run, gate, eval, synth.

Every command takes ``--out DIR``, writes its artifacts there, and drops a
``manifest.json`` capturing the merged configuration, input hashes, outputs,
and wall-clock time, so a run can be reproduced from the manifest alone.
Config precedence is CLI flags over ``--config`` JSON file over built-in
defaults.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint_file, save_checkpoint_file
from .evaluation import (activity_level, align_signal, frame_level,
                         hungarian_match, label_breakdown, load_annotations,
                         load_detections_csv, rasterize, roc_sweep,
                         write_detections_csv)
from .feature_stream import (StreamFormatError, fps_to_rational,
                             generate_synthetic, load_scenario,
                             read_stream_file, write_stream_file)
from .gating import GateConfig, sweep_detections
from .trainer import (THREADS_ENV, DivergenceError, ParallelRunError,
                      TrainerConfig, TrainingSnapshot, init_model,
                      run_parallel, run_stream)

LOSS_NAMES = {"pred": "prediction", "mw": "motion_weighted"}


# ---------------------------------------------------------------------------
# shared plumbing

def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _load_config_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def merge_config(defaults: dict, file_cfg: dict, cli: dict) -> dict:
    """CLI flags beat the config file, which beats defaults."""
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(file_cfg)
    merged.update({k: v for k, v in cli.items() if k in defaults and v is not None})
    return merged


def _write_manifest(out_dir: Path, command: str, config: dict,
                    inputs: list, outputs: list, started: float,
                    seed=None) -> Path:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "version": __version__,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "threads_env": os.environ.get(THREADS_ENV),
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_seconds": round(time.time() - started, 3),
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_loss_csv(path, samples) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "prediction_loss", "motion_weighted_loss"])
        for s in samples:
            writer.writerow([s.t, repr(s.pred_loss), repr(s.mw_loss)])


def read_loss_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (frame indices, prediction losses, motion-weighted losses)."""
    frames, pred, mw = [], [], []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not header or header[0] != "frame":
            raise ValueError(f"{path}: not a loss trace (missing header)")
        for row in reader:
            if not row or not row[0].strip():
                continue
            frames.append(int(row[0]))
            pred.append(float(row[1]))
            mw.append(float(row[2]))
    return (np.asarray(frames, dtype=np.int64),
            np.asarray(pred, dtype=np.float64),
            np.asarray(mw, dtype=np.float64))


def _write_attention_csv(path, trace, stride: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        first = True
        for t, weights in trace:
            if t % stride:
                continue
            if first:
                writer.writerow(["frame"] + [f"w{g}" for g in range(len(weights))])
                first = False
            writer.writerow([t] + [repr(float(w)) for w in weights])


def _write_attention_pngs(directory: Path, trace, stride: int) -> list:
    from PIL import Image  # optional extra; imported only when asked for

    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for t, weights in trace:
        if t % stride:
            continue
        side = int(round(len(weights) ** 0.5))
        grid = np.asarray(weights, dtype=np.float64).reshape(side, side)
        lo, hi = grid.min(), grid.max()
        scaled = np.zeros_like(grid) if hi == lo else (grid - lo) / (hi - lo)
        img = Image.fromarray((scaled * 255.0).round().astype(np.uint8), "L")
        path = directory / f"attention_{t:06d}.png"
        img.save(path)
        written.append(path)
    return written


def _parse_float_grid(text: str) -> list[float]:
    values = [float(v) for v in str(text).split(",") if v.strip() != ""]
    if not values:
        raise ValueError(f"empty grid: {text!r}")
    return values


def _parse_int_grid(text: str) -> list[int]:
    values = [int(v) for v in str(text).split(",") if v.strip() != ""]
    if not values:
        raise ValueError(f"empty grid: {text!r}")
    return values


def _plot_losses(out_dir: Path, samples) -> Path | None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("plotting skipped: matplotlib not installed", file=sys.stderr)
        return None
    t = [s.t for s in samples]
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.plot(t, [s.pred_loss for s in samples], lw=0.6, label="prediction")
    ax.plot(t, [s.mw_loss for s in samples], lw=0.6, label="motion-weighted")
    ax.set_xlabel("frame")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    path = out_dir / "losses.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# run

RUN_DEFAULTS = {
    "lr": 1e-8, "loss": "pred", "dropout": 0.4, "seed": 0, "bptt": 1,
    "grad_clip": None, "hidden": None, "attn_dim": None, "parallel": None,
    "unshared": False, "strict_inputs": False, "pool_hidden": False,
    "attention": False, "attention_stride": 1, "attention_png": False,
    "plot": False,
}


def _trainer_config(cfg: dict) -> TrainerConfig:
    return TrainerConfig(
        learning_rate=float(cfg["lr"]),
        dropout=float(cfg["dropout"]),
        training_loss=LOSS_NAMES[cfg["loss"]],
        bptt_window=int(cfg["bptt"]),
        seed=int(cfg["seed"]),
        grad_clip=None if cfg["grad_clip"] is None else float(cfg["grad_clip"]),
    )


def cmd_run(args) -> int:
    started = time.time()
    file_cfg = _load_config_file(args.config) if args.config else {}
    cfg = merge_config(RUN_DEFAULTS, file_cfg,
                       {k: getattr(args, k, None) for k in RUN_DEFAULTS})
    if cfg["loss"] not in LOSS_NAMES:
        raise ValueError(f"--loss must be pred or mw, got {cfg['loss']!r}")
    inputs = [Path(p) for p in args.input]
    out = _out_dir(args)
    tconfig = _trainer_config(cfg)

    headers = []
    streams = []
    for path in inputs:
        header, frames = read_stream_file(path)
        headers.append(header)
        streams.append(frames)
    dims = {(h.grid_side, h.feature_dim) for h in headers}
    if len(dims) > 1:
        raise ValueError(f"input streams disagree on dimensions: {sorted(dims)}")
    grid_side, feature_dim = headers[0].grid_side, headers[0].feature_dim

    if args.resume:
        snapshot = load_checkpoint_file(args.resume)
        model = snapshot.model
        if model.feature_dim != feature_dim:
            raise ValueError(
                f"checkpoint feature dim {model.feature_dim} != stream {feature_dim}")
    else:
        snapshot = None
        model = init_model(
            feature_dim,
            hidden_dim=None if cfg["hidden"] is None else int(cfg["hidden"]),
            attn_dim=None if cfg["attn_dim"] is None else int(cfg["attn_dim"]),
            grid_cells=grid_side * grid_side if cfg["unshared"] else None,
            shared=not cfg["unshared"],
            strict_inputs=bool(cfg["strict_inputs"]),
            pool_hidden=bool(cfg["pool_hidden"]),
            seed=int(cfg["seed"]),
        )

    record_attention = bool(cfg["attention"]) or bool(cfg["attention_png"])
    outputs = []
    try:
        if len(streams) == 1:
            results = [run_stream(
                tconfig, model, streams[0],
                adam=None if snapshot is None else snapshot.adam,
                state=None if snapshot is None else snapshot.state,
                record_attention=record_attention)]
            dirs = [out]
        else:
            results = run_parallel(
                tconfig, model, streams,
                max_workers=None if cfg["parallel"] is None else int(cfg["parallel"]),
                record_attention=record_attention)
            dirs = [out / f"stream{i:02d}" for i in range(len(streams))]
    except DivergenceError as exc:
        path = out / "diverged.evck"
        save_checkpoint_file(path, exc.snapshot)
        print(f"error: {exc}; last finite checkpoint: {path}", file=sys.stderr)
        return 1

    for run_dir, result in zip(dirs, results):
        run_dir.mkdir(parents=True, exist_ok=True)
        loss_path = run_dir / "losses.csv"
        write_loss_csv(loss_path, result.losses)
        outputs.append(loss_path)
        ck_path = run_dir / "checkpoint.evck"
        save_checkpoint_file(ck_path, TrainingSnapshot(
            model=result.model, adam=result.adam, state=result.state,
            frame_step=result.steps))
        outputs.append(ck_path)
        if cfg["attention"]:
            att_path = run_dir / "attention.csv"
            _write_attention_csv(att_path, result.attention,
                                 int(cfg["attention_stride"]))
            outputs.append(att_path)
        if cfg["attention_png"]:
            outputs.extend(_write_attention_pngs(
                run_dir / "attention_png", result.attention,
                int(cfg["attention_stride"])))
        if cfg["plot"]:
            plot = _plot_losses(run_dir, result.losses)
            if plot:
                outputs.append(plot)

    outputs.append(_write_manifest(out, "run", cfg, inputs, outputs, started,
                                   seed=int(cfg["seed"])))
    return 0


# ---------------------------------------------------------------------------
# gate

GATE_DEFAULTS = {
    "loss": "pred", "gate": "adaptive", "n": 8, "m": 64,
    "psi": None, "phi": "0", "offset": 1,
}


def cmd_gate(args) -> int:
    started = time.time()
    file_cfg = _load_config_file(args.config) if args.config else {}
    cfg = merge_config(GATE_DEFAULTS, file_cfg,
                       {k: getattr(args, k, None) for k in GATE_DEFAULTS})
    if cfg["psi"] is None:
        raise ValueError("--psi is required")
    in_path = Path(args.input)
    out = _out_dir(args)
    _, pred, mw = read_loss_csv(in_path)
    raw = pred if cfg["loss"] == "pred" else mw
    psis = _parse_float_grid(cfg["psi"])
    phis = _parse_int_grid(cfg["phi"])
    offset = int(cfg["offset"])

    gconfig = GateConfig(mode=cfg["gate"], threshold=psis[0],
                         buffer_len=int(cfg["m"]), smooth_window=int(cfg["n"]),
                         signal="prediction" if cfg["loss"] == "pred"
                         else "motion_weighted")
    grid = sweep_detections(raw, gconfig, psis, phis)

    outputs = []
    for (psi, phi), events in grid.items():
        shifted = [type(ev)(ev.start_frame + offset, ev.end_frame + offset,
                            label=ev.label, score=ev.score) for ev in events]
        path = out / f"events_psi{psi:g}_phi{phi:g}.csv"
        write_detections_csv(path, shifted)
        outputs.append(path)
        if len(grid) == 1:
            alias = out / "events.csv"
            write_detections_csv(alias, shifted)
            outputs.append(alias)

    outputs.append(_write_manifest(out, "gate", cfg, [in_path], outputs, started))
    return 0


# ---------------------------------------------------------------------------
# eval

EVAL_DEFAULTS = {
    "loss": "pred", "gate": "adaptive", "n": 8, "m": 64,
    "psi": None, "phi": "0", "offset": 1, "fps": None, "frames": None,
    "min_overlap": 0.0, "instant_pad": 0,
}


def _metrics_payload(fm, am, breakdown=None) -> dict:
    payload = {
        "frame": {"tp": fm.tp, "fp": fm.fp, "tn": fm.tn, "fn": fm.fn,
                  "recall": fm.recall, "fpr": fm.fpr},
        "activity": {"matched": am.matched, "gt_total": am.gt_total,
                     "det_total": am.det_total, "recall": am.recall,
                     "fp_per_min": am.fp_per_min,
                     "duration_minutes": am.duration_minutes},
    }
    if breakdown is not None:
        payload["activity"]["by_label"] = breakdown
    return payload


def cmd_eval(args) -> int:
    started = time.time()
    file_cfg = _load_config_file(args.config) if args.config else {}
    cfg = merge_config(EVAL_DEFAULTS, file_cfg,
                       {k: getattr(args, k, None) for k in EVAL_DEFAULTS})
    if cfg["fps"] is None:
        raise ValueError("--fps is required")
    if (args.detections is None) == (args.input is None):
        raise ValueError("give exactly one of --input (loss trace) "
                         "or --detections (events file)")
    out = _out_dir(args)
    fps_num, fps_den = fps_to_rational(cfg["fps"])
    fps = fps_num / fps_den
    outputs = []

    if args.detections:
        if cfg["frames"] is None:
            raise ValueError("--frames is required with --detections")
        total = int(cfg["frames"])
        det_path = Path(args.detections)
        truth = load_annotations(args.annotations, total, fps,
                                 instant_pad=int(cfg["instant_pad"]))
        events = load_detections_csv(det_path)
        fm = frame_level(rasterize(events, total), truth)
        am = activity_level(truth.intervals, events, truth.duration_minutes,
                            float(cfg["min_overlap"]))
        matches = hungarian_match(truth.intervals, events,
                                  float(cfg["min_overlap"]))
        payload = _metrics_payload(
            fm, am, label_breakdown(truth.intervals, matches))
        inputs = [det_path, Path(args.annotations)]
    else:
        if cfg["psi"] is None:
            raise ValueError("--psi is required when sweeping a loss trace")
        in_path = Path(args.input)
        _, pred, mw = read_loss_csv(in_path)
        raw = pred if cfg["loss"] == "pred" else mw
        total = (int(cfg["frames"]) if cfg["frames"] is not None
                 else len(raw) + int(cfg["offset"]))
        truth = load_annotations(args.annotations, total, fps,
                                 instant_pad=int(cfg["instant_pad"]))
        signal = align_signal(raw, total, int(cfg["offset"]))
        gconfig = GateConfig(mode=cfg["gate"], threshold=0.0,
                             buffer_len=int(cfg["m"]),
                             smooth_window=int(cfg["n"]),
                             signal="prediction" if cfg["loss"] == "pred"
                             else "motion_weighted")
        tables = roc_sweep(signal, truth, gconfig,
                           _parse_float_grid(cfg["psi"]),
                           _parse_int_grid(cfg["phi"]),
                           float(cfg["min_overlap"]))
        outputs.extend(tables.write(out))
        payload = {"best_activity": tables.best_activity_point(),
                   "best_frame": tables.best_frame_point()}
        inputs = [in_path, Path(args.annotations)]

    metrics_path = out / "metrics.json"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append(metrics_path)
    outputs.append(_write_manifest(out, "eval", cfg, inputs, outputs, started))
    return 0


# ---------------------------------------------------------------------------
# synth

SYNTH_DEFAULTS = {"seed": None, "fps": None}


def cmd_synth(args) -> int:
    started = time.time()
    file_cfg = _load_config_file(args.config) if args.config else {}
    cfg = merge_config(SYNTH_DEFAULTS, file_cfg,
                       {k: getattr(args, k, None) for k in SYNTH_DEFAULTS})
    scenario_path = Path(args.input)
    out = _out_dir(args)
    scenario = load_scenario(scenario_path)
    if cfg["seed"] is not None:
        scenario = scenario.with_seed(int(cfg["seed"]))
    if cfg["fps"] is not None:
        num, den = fps_to_rational(cfg["fps"])
        scenario = scenario.with_fps(num, den)

    frames, truth = generate_synthetic(scenario)
    stream_path = out / "stream.evsg"
    write_stream_file(stream_path, scenario.header(), frames)

    truth_name = args.annotations if args.annotations else "truth.csv"
    truth_path = out / truth_name
    with open(truth_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start_frame", "end_frame", "label"])
        for iv in truth:
            writer.writerow([iv.start_frame, iv.end_frame, iv.label or "event"])

    outputs = [stream_path, truth_path]
    outputs.append(_write_manifest(out, "synth", cfg, [scenario_path],
                                   outputs, started, seed=scenario.seed))
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evseg",
        description="Online self-supervised temporal event segmentation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train online over a feature stream")
    run.add_argument("--input", action="append", required=True,
                     help="feature stream path (repeat for parallel runs)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--config", help="JSON config file")
    run.add_argument("--lr", type=float, help="Adam learning rate")
    run.add_argument("--loss", choices=("pred", "mw"),
                     help="training loss: plain or motion-weighted")
    run.add_argument("--dropout", type=float, help="recurrent dropout rate")
    run.add_argument("--seed", type=int, help="init and dropout seed")
    run.add_argument("--bptt", type=int, help="backprop truncation window")
    run.add_argument("--grad-clip", dest="grad_clip", type=float,
                     help="global gradient norm cap")
    run.add_argument("--hidden", type=int, help="hidden units per cell")
    run.add_argument("--attn-dim", dest="attn_dim", type=int,
                     help="attention projection width")
    run.add_argument("--parallel", type=int,
                     help="max worker threads for multiple inputs")
    run.add_argument("--unshared", action="store_true", default=None,
                     help="separate cell weights per grid location")
    run.add_argument("--strict-inputs", dest="strict_inputs",
                     action="store_true", default=None,
                     help="feed masked+raw features, no hidden projection")
    run.add_argument("--pool-hidden", dest="pool_hidden",
                     action="store_true", default=None,
                     help="score attention against the pooled hidden state")
    run.add_argument("--resume", help="checkpoint to continue from")
    run.add_argument("--attention", action="store_true", default=None,
                     help="write per-frame attention weights CSV")
    run.add_argument("--attention-stride", dest="attention_stride", type=int,
                     help="keep every k-th attention frame")
    run.add_argument("--attention-png", dest="attention_png",
                     action="store_true", default=None,
                     help="render attention grids as grayscale PNGs")
    run.add_argument("--plot", action="store_true", default=None,
                     help="render loss curves to losses.png")
    run.set_defaults(func=cmd_run)

    gate = sub.add_parser("gate", help="threshold a loss trace into events")
    gate.add_argument("--input", required=True, help="losses.csv from run")
    gate.add_argument("--out", required=True)
    gate.add_argument("--config", help="JSON config file")
    gate.add_argument("--loss", choices=("pred", "mw"),
                      help="which loss column to gate")
    gate.add_argument("--psi", help="threshold(s), comma separated")
    gate.add_argument("--phi", help="merge window(s), comma separated")
    gate.add_argument("--gate", choices=("simple", "adaptive"),
                      help="thresholding mode")
    gate.add_argument("--n", type=int, help="smoothing window (adaptive)")
    gate.add_argument("--m", type=int, help="history buffer length (adaptive)")
    gate.add_argument("--offset", type=int,
                      help="frame shift applied to detected intervals")
    gate.set_defaults(func=cmd_gate)

    ev = sub.add_parser("eval", help="score detections against annotations")
    ev.add_argument("--input", help="losses.csv to sweep into ROC tables")
    ev.add_argument("--detections", help="events.csv to score directly")
    ev.add_argument("--annotations", required=True,
                    help="ground truth CSV (start_frame,end_frame,label)")
    ev.add_argument("--out", required=True)
    ev.add_argument("--config", help="JSON config file")
    ev.add_argument("--fps", help="frames per second, float or num/den")
    ev.add_argument("--frames", type=int, help="total frame count")
    ev.add_argument("--loss", choices=("pred", "mw"))
    ev.add_argument("--psi", help="threshold grid, comma separated")
    ev.add_argument("--phi", help="merge window grid, comma separated")
    ev.add_argument("--gate", choices=("simple", "adaptive"))
    ev.add_argument("--n", type=int, help="smoothing window (adaptive)")
    ev.add_argument("--m", type=int, help="history buffer length (adaptive)")
    ev.add_argument("--offset", type=int,
                    help="frame shift between trace and stream indices")
    ev.add_argument("--min-overlap", dest="min_overlap", type=float,
                    help="fraction of a truth interval a match must cover")
    ev.add_argument("--instant-pad", dest="instant_pad", type=int,
                    help="half-width applied to single-frame annotations")
    ev.set_defaults(func=cmd_eval)

    synth = sub.add_parser("synth", help="generate a synthetic stream")
    synth.add_argument("--input", required=True, help="scenario file")
    synth.add_argument("--out", required=True)
    synth.add_argument("--config", help="JSON config file")
    synth.add_argument("--seed", type=int, help="override scenario seed")
    synth.add_argument("--fps", help="override scenario fps")
    synth.add_argument("--annotations",
                       help="file name for the truth CSV (default truth.csv)")
    synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, StreamFormatError, DivergenceError,
            ParallelRunError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
