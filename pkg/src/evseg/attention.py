"""Additive (Bahdanau-style) attention over grid locations, with exact gradients.

Per location g the score is ``v . tanh(W_h h_prev[g] + W_x x[g] + b)``; a
softmax over the G scores gives the attention map, and the masked features are
``weights[g] * x[g]``. A single bias inside the tanh is enough: separate biases
on the hidden and feature projections would sum into one, and a bias after the
score projection cancels under the softmax.

The forward pass returns a tape of intermediates; ``attention_backward``
consumes it to produce exact reverse-mode gradients for every parameter and
both inputs, including the softmax coupling across locations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NumericError(RuntimeError):
    """A non-finite value appeared where finite math was expected."""


@dataclass
class AttentionParams:
    """Parameters of the additive scoring head.

    Shapes: w_hidden (D_a, H), w_input (D_a, M), bias (D_a,), score (D_a,).
    ``pool_hidden`` switches the per-location hidden pairing to a single
    mean-pooled hidden vector shared by all locations.
    """

    w_hidden: np.ndarray
    w_input: np.ndarray
    bias: np.ndarray
    score: np.ndarray
    pool_hidden: bool = False

    @property
    def attn_dim(self) -> int:
        return self.bias.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.w_input.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            "attn.w_hidden": self.w_hidden,
            "attn.w_input": self.w_input,
            "attn.bias": self.bias,
            "attn.score": self.score,
        }

    def clone(self) -> "AttentionParams":
        return AttentionParams(
            w_hidden=self.w_hidden.copy(), w_input=self.w_input.copy(),
            bias=self.bias.copy(), score=self.score.copy(),
            pool_hidden=self.pool_hidden,
        )


def init_attention(feature_dim: int, hidden_dim: int, attn_dim: int | None = None,
                   rng: np.random.Generator | None = None,
                   pool_hidden: bool = False) -> AttentionParams:
    """Uniform(-0.05, 0.05) weights; zero bias. attn_dim defaults to M // 8."""
    rng = rng or np.random.default_rng(0)
    if attn_dim is None:
        attn_dim = max(1, feature_dim // 8)
    u = lambda *shape: rng.uniform(-0.05, 0.05, size=shape)
    return AttentionParams(
        w_hidden=u(attn_dim, hidden_dim),
        w_input=u(attn_dim, feature_dim),
        bias=np.zeros(attn_dim),
        score=u(attn_dim),
        pool_hidden=pool_hidden,
    )


@dataclass
class AttentionTape:
    """Forward intermediates needed by the backward pass."""

    h_prev: np.ndarray       # (G, H) as used for scoring (pooled if enabled)
    x: np.ndarray            # (G, M)
    pre_tanh: np.ndarray     # (G, D_a)
    activ: np.ndarray        # tanh(pre_tanh)
    scores: np.ndarray       # (G,)
    weights: np.ndarray      # (G,)
    params: AttentionParams


def softmax(scores: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max-subtracted)."""
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return e / e.sum()


def attention_forward(
    params: AttentionParams, h_prev: np.ndarray, x: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, AttentionTape]:
    """Score, normalize, and mask: returns (weights, masked features, tape).

    h_prev is (G, H), x is (G, M); weights is (G,) non-negative summing to 1,
    masked is (G, M). Raises NumericError naming the first bad location if a
    non-finite value shows up in the inputs or scores.
    """
    h_prev = np.asarray(h_prev, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    g = x.shape[0]
    if h_prev.shape != (g, params.hidden_dim):
        raise ValueError(
            f"h_prev shape {h_prev.shape} != ({g}, {params.hidden_dim})"
        )
    if x.shape[1] != params.feature_dim:
        raise ValueError(f"x has {x.shape[1]} features, expected {params.feature_dim}")

    finite = np.isfinite(x).all(axis=1) & np.isfinite(h_prev).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise NumericError(f"non-finite attention input at grid location {bad}")

    h_used = h_prev
    if params.pool_hidden:
        h_used = np.broadcast_to(h_prev.mean(axis=0), h_prev.shape)

    pre = h_used @ params.w_hidden.T + x @ params.w_input.T + params.bias
    activ = np.tanh(pre)
    scores = activ @ params.score
    if not np.isfinite(scores).all():
        bad = int(np.flatnonzero(~np.isfinite(scores))[0])
        raise NumericError(f"non-finite attention score at grid location {bad}")
    weights = softmax(scores)
    masked = weights[:, None] * x
    tape = AttentionTape(h_prev=h_used, x=x, pre_tanh=pre, activ=activ,
                         scores=scores, weights=weights, params=params)
    return weights, masked, tape


def attention_backward(
    tape: AttentionTape,
    grad_masked: np.ndarray,
    grad_weights_extra: np.ndarray | None = None,
) -> tuple[dict[str, np.ndarray], np.ndarray, np.ndarray]:
    """Reverse-mode gradients through masking, softmax, and scoring.

    grad_masked is the upstream gradient on the masked features (G, M);
    grad_weights_extra optionally adds a direct upstream gradient on the
    weights (G,). Returns (param grads keyed like tensors(), grad_h_prev,
    grad_x).
    """
    p = tape.params
    g = tape.x.shape[0]
    grad_masked = np.asarray(grad_masked, dtype=np.float64)
    if grad_masked.shape != tape.x.shape:
        raise ValueError(
            f"grad_masked shape {grad_masked.shape} != {tape.x.shape}"
        )
    grad_w = (grad_masked * tape.x).sum(axis=1)
    if grad_weights_extra is not None:
        extra = np.asarray(grad_weights_extra, dtype=np.float64)
        if extra.shape != (g,):
            raise ValueError(f"grad_weights_extra shape {extra.shape} != ({g},)")
        grad_w = grad_w + extra

    # Softmax jacobian: ds_g = w_g * (grad_w_g - sum_k grad_w_k w_k)
    w = tape.weights
    ds = w * (grad_w - grad_w @ w)

    da = ds[:, None] * p.score[None, :]
    dz = da * (1.0 - tape.activ ** 2)

    grads = {
        "attn.w_hidden": dz.T @ tape.h_prev,
        "attn.w_input": dz.T @ tape.x,
        "attn.bias": dz.sum(axis=0),
        "attn.score": tape.activ.T @ ds,
    }
    grad_h = dz @ p.w_hidden
    if p.pool_hidden:
        # scoring used the mean over locations; spread the gradient back evenly
        grad_h = np.broadcast_to(grad_h.sum(axis=0) / g, grad_h.shape).copy()
    grad_x = dz @ p.w_input + w[:, None] * grad_masked
    return grads, grad_h, grad_x
