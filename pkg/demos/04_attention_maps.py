"""Record per-frame attention weights and render them as text heat maps.

The attention head softmaxes one score per grid location, so each frame
yields a distribution over the spatial grid. Locations whose features look
unlike what the recurrent state expects pull weight toward themselves.
"""

import pathlib

import numpy as np

from evseg import TrainerConfig, init_model, read_stream_file, run_stream

OUT = pathlib.Path(__file__).parent / "out"
SHADES = " .:-=+*#%@"


def heat_rows(weights, side):
    grid = weights.reshape(side, side)
    lo, hi = grid.min(), grid.max()
    span = hi - lo if hi > lo else 1.0
    rows = []
    for row in grid:
        idx = ((row - lo) / span * (len(SHADES) - 1)).astype(int)
        rows.append("".join(SHADES[i] * 2 for i in idx))
    return rows


def main():
    path = OUT / "demo_stream.evsg"
    if not path.exists():
        raise SystemExit("run 01_synthetic_stream.py first")

    header, frames = read_stream_file(path)
    model = init_model(header.feature_dim, seed=0)
    config = TrainerConfig(learning_rate=1e-3, dropout=0.4, seed=0)
    out = run_stream(config, model, frames, record_attention=True)

    side = header.grid_side
    trace = dict(out.attention)
    uniform = 1.0 / side ** 2
    print(f"uniform weight would be {uniform:.4f} per location\n")
    for t in (5, 199, 205, 419, 425):
        weights = trace[t].ravel()
        print(f"frame {t:3d}: min {weights.min():.4f} max {weights.max():.4f}")
        for row in heat_rows(weights, side):
            print("   ", row)
        print()


if __name__ == "__main__":
    main()
