import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from pytest import approx, raises

from bp_layer.config import ModelParams, TrainConfig
from bp_layer.errors import InputError, NoValidPixelsError
from bp_layer.inference import read_beliefs, softmax_backward
from bp_layer.learning import (
    TrainingSample,
    TrainStep,
    deep_supervised_loss,
    downsample_target,
    huber_loss,
    metrics,
    nll_loss,
    refine_backward,
    refine_basic,
    train_toy,
)
from bp_layer.listens import Recorder
from bp_layer.oracle import fd_gradcheck


def test_nll_averages_over_valid_pixels():
    beliefs = np.array([[[0.5, 0.5], [0.25, 0.75]], [[1.0, 0.0], [0.9, 0.1]]])
    target = np.array([[0.0, 1.0], [np.nan, 7.0]])
    loss, grad = nll_loss(beliefs, target)
    assert loss == approx(-(np.log(0.5) + np.log(0.75)) / 2)
    assert grad[0, 0, 0] == approx(-1.0 / (2 * 0.5))
    assert grad[0, 1, 1] == approx(-1.0 / (2 * 0.75))
    assert not grad[1].any()


def test_nll_rounds_real_targets():
    beliefs = np.array([[[0.2, 0.8]]])
    assert nll_loss(beliefs, np.array([[0.6]]))[0] == approx(-np.log(0.8))


def test_nll_clamps_zero_beliefs():
    loss, _ = nll_loss(np.array([[[1.0, 0.0]]]), np.array([[1.0]]))
    assert np.isfinite(loss)


def test_nll_needs_a_valid_pixel():
    with raises(NoValidPixelsError):
        nll_loss(np.full((1, 2, 2), 0.5), np.array([[np.nan, np.nan]]))
    with raises(NoValidPixelsError):
        nll_loss(np.full((1, 1, 2), 0.5), np.array([[0.0]]), mask=np.array([[False]]))


def test_nll_gradient_through_softmax():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(3, 3, 4))
    target = rng.integers(0, 4, (3, 3)).astype(float)
    beliefs = read_beliefs(logits).probs
    grad = softmax_backward(beliefs, nll_loss(beliefs, target)[1])
    assert fd_gradcheck(lambda z: nll_loss(read_beliefs(z).probs, target)[0], logits, grad) < 1e-5


def test_huber_branches():
    loss, grad = huber_loss(np.array([0.5, 3.0]), np.array([0.0, 0.0]), delta=1.0)
    assert loss == approx((0.125 + 2.5) / 2)
    assert_allclose(grad, [0.25, 0.5])


def test_huber_ignores_unknown_targets():
    loss, grad = huber_loss(np.array([2.0, 9.0]), np.array([1.0, np.nan]))
    assert loss == approx(0.5)
    assert_allclose(grad, [1.0, 0.0])


def test_huber_gradient():
    rng = np.random.default_rng(1)
    y = rng.normal(size=(4, 4)) * 3
    target = rng.normal(size=(4, 4))
    _, grad = huber_loss(y, target, delta=0.7)
    assert fd_gradcheck(lambda v: huber_loss(v, target, delta=0.7)[0], y, grad) < 1e-5


def test_huber_delta_must_be_positive():
    with raises(InputError):
        huber_loss(np.zeros(2), np.zeros(2), delta=0.0)


def test_refine_weights_the_window_around_the_peak():
    beliefs = np.array([[[0.1, 0.2, 0.5, 0.2, 0.0, 0.0]]])
    y, _ = refine_basic(beliefs, tau=1)
    assert y[0, 0] == approx((0.2 * 1 + 0.5 * 2 + 0.2 * 3) / 0.9)


def test_refine_window_is_clipped_at_the_label_range():
    beliefs = np.array([[[0.6, 0.3, 0.1, 0.0]]])
    y, tape = refine_basic(beliefs, tau=2)
    assert y[0, 0] == approx(0.3 + 0.2)
    assert_array_equal(tape.window[0, 0], [True, True, True, False])


def test_refine_backward():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(3, 4, 7)) * 2
    beliefs = read_beliefs(logits).probs
    weights = rng.normal(size=(3, 4))
    _, tape = refine_basic(beliefs, tau=2)
    grad = refine_backward(tape, weights)

    def refined(b):
        return float(np.sum(weights * refine_basic(b, tau=2)[0]))

    assert fd_gradcheck(refined, beliefs, grad, step=1e-6) < 1e-4


def test_downsample_target_halves_block_means():
    target = np.array(
        [
            [2.0, 4.0, np.nan, np.nan],
            [6.0, 8.0, np.nan, np.nan],
            [1.0, 1.0, 3.0, np.nan],
            [1.0, 1.0, np.nan, np.nan],
        ]
    )
    finest, coarse = downsample_target(target, 2)
    assert_array_equal(finest, target)
    assert_allclose(coarse, [[2.5, np.nan], [0.5, 1.5]])


def test_deep_supervision_sums_levels_with_equal_weight():
    rng = np.random.default_rng(3)
    coarse = read_beliefs(rng.normal(size=(2, 2, 2))).probs
    fine = read_beliefs(rng.normal(size=(4, 4, 4))).probs
    targets = [rng.integers(0, 2, (2, 2)).astype(float), rng.integers(0, 4, (4, 4)).astype(float)]
    y = rng.normal(size=(4, 4))
    result = deep_supervised_loss([coarse, fine], targets, y, targets[1])
    expected = (
        nll_loss(coarse, targets[0])[0]
        + nll_loss(fine, targets[1])[0]
        + huber_loss(y, targets[1])[0]
    )
    assert result.loss == approx(expected)
    assert len(result.components) == 3
    assert result.d_refined.shape == (4, 4)


def test_disparity_metrics():
    pred = np.array([[0.0, 1.5], [4.0, 9.0]])
    gt = np.array([[0.0, 0.0], [1.0, np.nan]])
    result = metrics(pred, gt)
    assert result["bad1"] == approx(200.0 / 3)
    assert result["bad2"] == approx(100.0 / 3)
    assert result["bad3"] == approx(0.0)
    assert result["mae"] == approx(4.5 / 3)


def test_flow_metrics_use_endpoint_error():
    pred = np.zeros((1, 2, 2))
    gt = np.array([[[3.0, 4.0], [0.0, 0.0]]])
    result = metrics(pred, gt)
    assert result["epe"] == approx(2.5)
    assert result["bad3"] == approx(50.0)
    assert result["mae"] == approx(7.0 / 4)


def test_metrics_need_ground_truth():
    with raises(NoValidPixelsError):
        metrics(np.zeros((2, 2)), np.full((2, 2), np.nan))


def toy_sample(seed: int) -> TrainingSample:
    rng = np.random.default_rng(seed)
    fine_truth = np.repeat(np.repeat(rng.integers(0, 2, (2, 2)) * 2, 2, axis=0), 2, axis=1)
    coarse_truth = fine_truth[::2, ::2] // 2
    q_fine = read_beliefs(np.eye(4)[fine_truth] + rng.normal(scale=0.5, size=(4, 4, 4))).probs
    q_coarse = read_beliefs(np.eye(2)[coarse_truth] + rng.normal(scale=0.5, size=(2, 2, 2))).probs
    return TrainingSample(
        [q_coarse, q_fine], [coarse_truth.astype(float), fine_truth.astype(float)]
    )


def test_training_lowers_the_loss():
    cfg = TrainConfig(steps=15, learning_rate=0.05, levels=2)
    recorder = Recorder()
    samples = [toy_sample(0), toy_sample(1)]
    params, curve = train_toy(samples, ModelParams.default_jump(2), cfg, monitor=recorder)
    assert len(curve) == 15
    assert curve[-1] < curve[0]
    assert params.temperature > 0
    assert all(p >= 0 for spec in params.levels for p in spec.params.penalties)
    assert [step.loss for step in recorder.history] == curve
    assert isinstance(recorder.history[0], TrainStep)


def test_zero_learning_rate_keeps_the_parameters():
    start = ModelParams.default_jump(2)
    cfg = TrainConfig(steps=3, learning_rate=0.0, levels=2)
    params, curve = train_toy([toy_sample(2)], start, cfg)
    assert params.to_dict() == start.to_dict()
    assert curve[0] == curve[-1]


def test_training_needs_samples():
    with raises(InputError):
        train_toy([], ModelParams.default_jump(1), TrainConfig(steps=1, levels=1))
