"""Bank of per-grid-location LSTM cells predicting next-frame features.

Each of the G grid locations runs one LSTM cell over its own M-dimensional
feature vector. By default all locations share one parameter set (a per-cell
parameter bank is available via ``shared=False``); parameters carry a leading
bank axis of size 1 (shared) or G (unshared) so both layouts go through the
same code path.

The cell input is built from the attention-masked features: the previous
hidden state is projected, concatenated with the masked features, and
projected again to the cell input width. Teacher forcing is structural here:
the recurrent input is always derived from the true encoded features of the
current frame, never from the previous prediction. A strict variant
(``strict_inputs=True``) instead concatenates masked features with the raw
features and drops the hidden projection from the input path.

Recurrent dropout multiplies the previous hidden state by a per-step mask
before every recurrent use (input projection and the cell's recurrent gate
terms), so a zeroed mask entry cuts the gradient path through that entry of
h_prev entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .attention import NumericError

GATE_NAMES = ("i", "f", "o", "c")


@dataclass
class LstmParams:
    """Parameter bank for the predictor.

    ``arrays`` maps tensor names to arrays with a leading bank axis of size
    ``bank`` (1 = shared across locations, G = per-location). Keys:

    - ``w_hp``, ``b_hp``: hidden projection H -> H (unused when strict_inputs)
    - ``w_in``, ``b_in``: input projection concat -> M_in
    - ``w_<g>``, ``u_<g>``, ``b_<g>`` for g in i/f/o/c: gate input, recurrent,
      and bias terms (M_in -> H and H -> H)
    - ``w_out``, ``b_out``: output map H -> M
    """

    arrays: dict[str, np.ndarray]
    feature_dim: int
    hidden_dim: int
    input_dim: int
    bank: int = 1
    strict_inputs: bool = False

    @property
    def concat_dim(self) -> int:
        if self.strict_inputs:
            return 2 * self.feature_dim
        return self.hidden_dim + self.feature_dim

    def tensors(self) -> dict[str, np.ndarray]:
        return {f"lstm.{k}": v for k, v in self.arrays.items()}

    def clone(self) -> "LstmParams":
        return LstmParams(
            arrays={k: v.copy() for k, v in self.arrays.items()},
            feature_dim=self.feature_dim, hidden_dim=self.hidden_dim,
            input_dim=self.input_dim, bank=self.bank,
            strict_inputs=self.strict_inputs,
        )


def init_lstm(feature_dim: int, hidden_dim: int | None = None,
              input_dim: int | None = None, grid_cells: int | None = None,
              shared: bool = True, strict_inputs: bool = False,
              rng: np.random.Generator | None = None) -> LstmParams:
    """Uniform(-0.05, 0.05) weights, zero biases, forget-gate bias 1.0.

    The forget bias keeps early memory open, a standard stateful-LSTM choice.
    hidden_dim and input_dim default to feature_dim. ``shared=False`` needs
    grid_cells to size the per-location bank.
    """
    rng = rng or np.random.default_rng(0)
    h = hidden_dim or feature_dim
    m_in = input_dim or feature_dim
    m = feature_dim
    if shared:
        k = 1
    else:
        if not grid_cells:
            raise ValueError("unshared parameters need grid_cells")
        k = grid_cells
    concat = 2 * m if strict_inputs else h + m

    u = lambda *shape: rng.uniform(-0.05, 0.05, size=(k, *shape))
    arrays = {
        "w_hp": u(h, h), "b_hp": np.zeros((k, h)),
        "w_in": u(m_in, concat), "b_in": np.zeros((k, m_in)),
        "w_out": u(m, h), "b_out": np.zeros((k, m)),
    }
    for gate in GATE_NAMES:
        arrays[f"w_{gate}"] = u(h, m_in)
        arrays[f"u_{gate}"] = u(h, h)
        arrays[f"b_{gate}"] = np.zeros((k, h))
    arrays["b_f"] = np.ones((k, h))
    return LstmParams(arrays=arrays, feature_dim=m, hidden_dim=h,
                      input_dim=m_in, bank=k, strict_inputs=strict_inputs)


@dataclass
class PredictorState:
    """Per-location hidden and cell states plus the step counter."""

    h: np.ndarray
    c: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, grid_cells: int, hidden_dim: int) -> "PredictorState":
        return cls(h=np.zeros((grid_cells, hidden_dim)),
                   c=np.zeros((grid_cells, hidden_dim)), t=0)

    def clone(self) -> "PredictorState":
        return PredictorState(h=self.h.copy(), c=self.c.copy(), t=self.t)


def sample_dropout_mask(rng: np.random.Generator, grid_cells: int,
                        hidden_dim: int, drop_rate: float) -> np.ndarray:
    """Inverted-scale Bernoulli keep mask: entries are 0 or 1/(1 - p)."""
    if not 0.0 <= drop_rate < 1.0:
        raise ValueError(f"drop rate must be in [0, 1), got {drop_rate}")
    if drop_rate == 0.0:
        return np.ones((grid_cells, hidden_dim))
    keep = 1.0 - drop_rate
    return (rng.random((grid_cells, hidden_dim)) < keep) / keep


# Bank-aware linear algebra: w has shape (K, out, in) with K in {1, G}.

def _apply(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    if w.shape[0] == 1:
        return x @ w[0].T
    return np.einsum("goi,gi->go", w, x)


def _bias(b: np.ndarray) -> np.ndarray:
    return b[0] if b.shape[0] == 1 else b


def _w_grad(dz: np.ndarray, x: np.ndarray, bank: int) -> np.ndarray:
    if bank == 1:
        return (dz.T @ x)[None, :, :]
    return np.einsum("go,gi->goi", dz, x)


def _b_grad(dz: np.ndarray, bank: int) -> np.ndarray:
    if bank == 1:
        return dz.sum(axis=0)[None, :]
    return dz.copy()


def _x_grad(w: np.ndarray, dz: np.ndarray) -> np.ndarray:
    if w.shape[0] == 1:
        return dz @ w[0]
    return np.einsum("goi,go->gi", w, dz)


@dataclass
class PredictorTape:
    """Forward intermediates for the backward pass.

    Gate activations are exposed so callers can check their bounds: the
    sigmoid gates live in (0, 1) and the candidate in (-1, 1).
    """

    h_drop: np.ndarray
    c_prev: np.ndarray
    concat: np.ndarray
    cell_input: np.ndarray
    gates: dict[str, np.ndarray]   # i, f, o sigmoid outputs; c candidate tanh
    c_new: np.ndarray
    tanh_c: np.ndarray
    h_new: np.ndarray
    mask: np.ndarray | None
    params: LstmParams
    step: int


def predictor_forward(
    params: LstmParams, state: PredictorState,
    masked: np.ndarray, frame: np.ndarray,
    mask: np.ndarray | None = None, training: bool = False,
) -> tuple[np.ndarray, PredictorState, PredictorTape]:
    """One step of the cell bank: returns (prediction, new state, tape).

    masked and frame are (G, M); the prediction is (G, M). Raises
    NumericError with the step index if the new state goes non-finite.
    """
    masked = np.asarray(masked, dtype=np.float64)
    frame = np.asarray(frame, dtype=np.float64)
    g = masked.shape[0]
    if masked.shape != (g, params.feature_dim):
        raise ValueError(
            f"masked shape {masked.shape} != ({g}, {params.feature_dim})"
        )
    if frame.shape != masked.shape:
        raise ValueError(f"frame shape {frame.shape} != {masked.shape}")
    if state.h.shape != (g, params.hidden_dim):
        raise ValueError(
            f"state shape {state.h.shape} != ({g}, {params.hidden_dim})"
        )
    if params.bank not in (1, g):
        raise ValueError(f"parameter bank size {params.bank} incompatible with G={g}")
    p = params.arrays

    h_drop = state.h
    used_mask = None
    if training and mask is not None:
        if mask.shape != state.h.shape:
            raise ValueError(f"mask shape {mask.shape} != {state.h.shape}")
        h_drop = state.h * mask
        used_mask = mask

    if params.strict_inputs:
        concat = np.concatenate([masked, frame], axis=1)
    else:
        projected = _apply(p["w_hp"], h_drop) + _bias(p["b_hp"])
        concat = np.concatenate([projected, masked], axis=1)
    cell_input = _apply(p["w_in"], concat) + _bias(p["b_in"])

    gates = {}
    for name in ("i", "f", "o"):
        pre = (_apply(p[f"w_{name}"], cell_input)
               + _apply(p[f"u_{name}"], h_drop) + _bias(p[f"b_{name}"]))
        gates[name] = expit(pre)
    pre_c = (_apply(p["w_c"], cell_input)
             + _apply(p["u_c"], h_drop) + _bias(p["b_c"]))
    gates["c"] = np.tanh(pre_c)

    c_new = gates["f"] * state.c + gates["i"] * gates["c"]
    tanh_c = np.tanh(c_new)
    h_new = gates["o"] * tanh_c
    if not (np.isfinite(h_new).all() and np.isfinite(c_new).all()):
        raise NumericError(f"non-finite predictor state at step {state.t}")

    prediction = _apply(p["w_out"], h_new) + _bias(p["b_out"])
    new_state = PredictorState(h=h_new, c=c_new, t=state.t + 1)
    tape = PredictorTape(
        h_drop=h_drop, c_prev=state.c, concat=concat, cell_input=cell_input,
        gates=gates, c_new=c_new, tanh_c=tanh_c, h_new=h_new,
        mask=used_mask, params=params, step=state.t,
    )
    return prediction, new_state, tape


def predictor_backward(
    tape: PredictorTape,
    grad_prediction: np.ndarray,
    grad_h_next: np.ndarray | None = None,
    grad_c_next: np.ndarray | None = None,
) -> tuple[dict[str, np.ndarray], np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Exact reverse-mode gradients for one forward step.

    Returns (param grads keyed like tensors(), grad_h_prev, grad_c_prev,
    grad_masked, grad_frame). Whether grad_h_prev keeps flowing to earlier
    steps is the trainer's truncation decision, not this function's.
    """
    params = tape.params
    p = params.arrays
    k = params.bank
    h_dim = params.hidden_dim
    m = params.feature_dim

    grad_prediction = np.asarray(grad_prediction, dtype=np.float64)
    if grad_prediction.shape != (tape.h_new.shape[0], m):
        raise ValueError(
            f"grad_prediction shape {grad_prediction.shape} != "
            f"({tape.h_new.shape[0]}, {m})"
        )
    dh = _x_grad(p["w_out"], grad_prediction)
    if grad_h_next is not None:
        dh = dh + grad_h_next
    grads = {
        "w_out": _w_grad(grad_prediction, tape.h_new, k),
        "b_out": _b_grad(grad_prediction, k),
    }

    i, f, o, cand = (tape.gates[n] for n in GATE_NAMES)
    do = dh * tape.tanh_c
    dc = dh * o * (1.0 - tape.tanh_c ** 2)
    if grad_c_next is not None:
        dc = dc + grad_c_next

    di = dc * cand
    df = dc * tape.c_prev
    dcand = dc * i
    grad_c_prev = dc * f

    pre_grads = {
        "i": di * i * (1.0 - i),
        "f": df * f * (1.0 - f),
        "o": do * o * (1.0 - o),
        "c": dcand * (1.0 - cand ** 2),
    }
    du = np.zeros_like(tape.cell_input)
    dh_drop = np.zeros_like(tape.h_drop)
    for name, dpre in pre_grads.items():
        grads[f"w_{name}"] = _w_grad(dpre, tape.cell_input, k)
        grads[f"u_{name}"] = _w_grad(dpre, tape.h_drop, k)
        grads[f"b_{name}"] = _b_grad(dpre, k)
        du += _x_grad(p[f"w_{name}"], dpre)
        dh_drop += _x_grad(p[f"u_{name}"], dpre)

    grads["w_in"] = _w_grad(du, tape.concat, k)
    grads["b_in"] = _b_grad(du, k)
    dconcat = _x_grad(p["w_in"], du)

    if params.strict_inputs:
        grad_masked = dconcat[:, :m]
        grad_frame = dconcat[:, m:].copy()
        grads["w_hp"] = np.zeros_like(p["w_hp"])
        grads["b_hp"] = np.zeros_like(p["b_hp"])
    else:
        dprojected = dconcat[:, :h_dim]
        grad_masked = dconcat[:, h_dim:]
        grads["w_hp"] = _w_grad(dprojected, tape.h_drop, k)
        grads["b_hp"] = _b_grad(dprojected, k)
        dh_drop += _x_grad(p["w_hp"], dprojected)
        grad_frame = np.zeros_like(grad_masked)

    grad_h_prev = dh_drop if tape.mask is None else dh_drop * tape.mask
    grads = {f"lstm.{name}": g for name, g in grads.items()}
    return grads, grad_h_prev, grad_c_prev, grad_masked.copy(), grad_frame
