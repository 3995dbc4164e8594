"""Recurrent predictor bank: forward against a loop reference, backward
against finite differences, dropout and state semantics."""

import numpy as np
import pytest

from evseg.attention import NumericError
from evseg.predictor import (LstmParams, PredictorState, init_lstm,
                             predictor_backward, predictor_forward,
                             sample_dropout_mask)
from oracles import central_diff, lstm_step_ref, max_rel_error

FD_STEP = 1e-4
FD_TOL = 1e-4


def make_setup(seed, g=4, m=3, h=3, shared=True, strict=False, scale=0.6):
    rng = np.random.default_rng(seed)
    params = init_lstm(m, h, None, grid_cells=None if shared else g,
                       shared=shared, strict_inputs=strict, rng=rng)
    for arr in params.arrays.values():
        arr += rng.normal(scale=scale, size=arr.shape)
    state = PredictorState(h=rng.normal(scale=scale, size=(g, h)),
                           c=rng.normal(scale=scale, size=(g, h)), t=0)
    masked = rng.normal(scale=scale, size=(g, m))
    frame = rng.normal(scale=scale, size=(g, m))
    return params, state, masked, frame


def test_init_shapes_and_forget_bias():
    params = init_lstm(4, 6, grid_cells=None, shared=True)
    assert params.arrays["w_in"].shape == (1, 4, 10)
    assert params.arrays["w_i"].shape == (1, 6, 4)
    assert params.arrays["u_i"].shape == (1, 6, 6)
    np.testing.assert_array_equal(params.arrays["b_f"], 1.0)
    np.testing.assert_array_equal(params.arrays["b_i"], 0.0)
    strict = init_lstm(4, 6, strict_inputs=True)
    assert strict.arrays["w_in"].shape == (1, 4, 8)


def test_unshared_bank_has_per_location_slices():
    params = init_lstm(3, 3, grid_cells=5, shared=False)
    assert params.bank == 5
    assert params.arrays["w_i"].shape == (5, 3, 3)


def test_initial_state_is_zero():
    state = PredictorState.zeros(9, 4)
    np.testing.assert_array_equal(state.h, 0.0)
    np.testing.assert_array_equal(state.c, 0.0)
    assert state.t == 0


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("shared,strict", [(True, False), (True, True),
                                           (False, False)])
def test_forward_matches_loop_reference(seed, shared, strict):
    params, state, masked, frame = make_setup(seed, shared=shared,
                                              strict=strict)
    pred, new_state, _ = predictor_forward(params, state, masked, frame)
    ref_pred, ref_h, ref_c = lstm_step_ref(
        params.arrays, masked, frame, state.h, state.c, strict=strict)
    np.testing.assert_allclose(pred, ref_pred, rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(new_state.h, ref_h, rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(new_state.c, ref_c, rtol=1e-11, atol=1e-13)
    assert new_state.t == 1


def test_forward_with_dropout_matches_reference():
    params, state, masked, frame = make_setup(8)
    rng = np.random.default_rng(0)
    mask = sample_dropout_mask(rng, 4, 3, 0.4)
    pred, _, _ = predictor_forward(params, state, masked, frame, mask,
                                   training=True)
    ref_pred, _, _ = lstm_step_ref(params.arrays, masked, frame,
                                   state.h, state.c, mask=mask)
    np.testing.assert_allclose(pred, ref_pred, rtol=1e-11, atol=1e-13)


def test_mask_ignored_outside_training():
    params, state, masked, frame = make_setup(8)
    mask = np.zeros((4, 3))
    with_mask, _, _ = predictor_forward(params, state, masked, frame, mask,
                                        training=False)
    without, _, _ = predictor_forward(params, state, masked, frame)
    np.testing.assert_array_equal(with_mask, without)


def test_gate_ranges():
    params, state, masked, frame = make_setup(3)
    _, _, tape = predictor_forward(params, state, masked, frame)
    for name in ("i", "f", "o"):
        assert ((tape.gates[name] > 0) & (tape.gates[name] < 1)).all()
    assert ((tape.gates["c"] > -1) & (tape.gates["c"] < 1)).all()


def test_dropout_mask_values_and_rate():
    rng = np.random.default_rng(123)
    mask = sample_dropout_mask(rng, 200, 50, 0.4)
    values = np.unique(mask)
    np.testing.assert_allclose(values, [0.0, 1.0 / 0.6], rtol=1e-12)
    assert abs((mask == 0).mean() - 0.4) < 0.02
    np.testing.assert_array_equal(sample_dropout_mask(rng, 3, 3, 0.0), 1.0)


def scalar_loss(params, state, masked, frame, mask, direction):
    pred, _, _ = predictor_forward(params, state, masked, frame, mask,
                                   training=mask is not None)
    return float(np.sum(pred * direction))


def state_loss(params, state, masked, frame, mask, dh, dc):
    _, new_state, _ = predictor_forward(params, state, masked, frame, mask,
                                        training=mask is not None)
    return float(np.sum(new_state.h * dh) + np.sum(new_state.c * dc))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("shared,strict", [(True, False), (True, True),
                                           (False, False)])
def test_param_gradients_match_finite_differences(seed, shared, strict):
    params, state, masked, frame = make_setup(seed, g=2, shared=shared,
                                              strict=strict)
    rng = np.random.default_rng(300 + seed)
    direction = rng.normal(size=masked.shape)

    _, _, tape = predictor_forward(params, state, masked, frame)
    grads, _, _, _, _ = predictor_backward(tape, direction)
    arrays = {k: v for k, v in params.arrays.items()
              if not (strict and k in ("w_hp", "b_hp"))}
    numeric = central_diff(
        lambda: scalar_loss(params, state, masked, frame, None, direction),
        arrays, FD_STEP)
    analytic = {k: grads[f"lstm.{k}"] for k in arrays}
    assert max_rel_error(analytic, numeric) < FD_TOL


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("strict", [False, True])
def test_input_gradients_match_finite_differences(seed, strict):
    params, state, masked, frame = make_setup(seed, g=2, strict=strict)
    rng = np.random.default_rng(400 + seed)
    direction = rng.normal(size=masked.shape)

    _, _, tape = predictor_forward(params, state, masked, frame)
    _, grad_h, grad_c, grad_masked, grad_frame = predictor_backward(
        tape, direction)
    arrays = {"h": state.h, "c": state.c, "masked": masked, "frame": frame}
    numeric = central_diff(
        lambda: scalar_loss(params, state, masked, frame, None, direction),
        arrays, FD_STEP)
    analytic = {"h": grad_h, "c": grad_c, "masked": grad_masked,
                "frame": grad_frame}
    assert max_rel_error(analytic, numeric) < FD_TOL


def test_state_gradients_match_finite_differences():
    # Gradients arriving through the next step's recurrent use of (h, c).
    params, state, masked, frame = make_setup(7, g=2)
    rng = np.random.default_rng(71)
    dh = rng.normal(size=state.h.shape)
    dc = rng.normal(size=state.c.shape)

    _, _, tape = predictor_forward(params, state, masked, frame)
    _, grad_h, grad_c, _, _ = predictor_backward(
        tape, np.zeros_like(masked), grad_h_next=dh, grad_c_next=dc)
    numeric = central_diff(
        lambda: state_loss(params, state, masked, frame, None, dh, dc),
        {"h": state.h, "c": state.c}, FD_STEP)
    assert max_rel_error({"h": grad_h, "c": grad_c}, numeric) < FD_TOL


def test_dropout_gradients_match_finite_differences():
    params, state, masked, frame = make_setup(9, g=2)
    rng = np.random.default_rng(91)
    mask = sample_dropout_mask(rng, 2, 3, 0.4)
    direction = rng.normal(size=masked.shape)

    _, _, tape = predictor_forward(params, state, masked, frame, mask,
                                   training=True)
    _, grad_h, _, _, _ = predictor_backward(tape, direction)
    numeric = central_diff(
        lambda: scalar_loss(params, state, masked, frame, mask, direction),
        {"h": state.h}, FD_STEP)
    assert max_rel_error({"h": grad_h}, numeric) < FD_TOL


def test_dropped_units_block_recurrent_gradient():
    params, state, masked, frame = make_setup(10)
    mask = np.ones((4, 3))
    mask[1, :] = 0.0
    mask[3, 2] = 0.0
    _, _, tape = predictor_forward(params, state, masked, frame, mask,
                                   training=True)
    _, grad_h, _, _, _ = predictor_backward(tape, np.ones_like(masked))
    np.testing.assert_array_equal(grad_h[1, :], 0.0)
    assert grad_h[3, 2] == 0.0
    assert np.any(grad_h[0, :] != 0.0)


def test_strict_mode_routes_gradient_to_frame():
    params, state, masked, frame = make_setup(11, strict=True)
    _, _, tape = predictor_forward(params, state, masked, frame)
    grads, _, _, _, grad_frame = predictor_backward(tape,
                                                    np.ones_like(masked))
    assert np.any(grad_frame != 0.0)
    np.testing.assert_array_equal(grads["lstm.w_hp"], 0.0)


def test_default_mode_frame_gradient_is_zero():
    params, state, masked, frame = make_setup(11)
    _, _, tape = predictor_forward(params, state, masked, frame)
    _, _, _, _, grad_frame = predictor_backward(tape, np.ones_like(masked))
    np.testing.assert_array_equal(grad_frame, 0.0)


def test_long_rollout_stays_finite():
    params, state, masked, frame = make_setup(12)
    rng = np.random.default_rng(5)
    for _ in range(10_000):
        masked = rng.normal(size=(4, 3))
        _, state, _ = predictor_forward(params, state, masked, masked)
    assert np.isfinite(state.h).all() and np.isfinite(state.c).all()
    assert state.t == 10_000


def test_nonfinite_state_raises_with_step():
    params, state, masked, frame = make_setup(13)
    state.h[0, 0] = np.nan
    state.t = 41
    with pytest.raises(NumericError, match="41"):
        predictor_forward(params, state, masked, frame)


def test_bank_mismatch_rejected():
    params = init_lstm(3, 3, grid_cells=5, shared=False)
    state = PredictorState.zeros(4, 3)
    x = np.zeros((4, 3))
    with pytest.raises(ValueError):
        predictor_forward(params, state, x, x)
