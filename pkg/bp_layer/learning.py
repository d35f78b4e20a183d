"""Losses, sub-pixel refinement, metrics and a small gradient-descent trainer."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from bp_layer import log
from bp_layer.config import ModelParams, TrainConfig
from bp_layer.errors import (
    ERROR_HUBER_DELTA,
    ERROR_NO_LEVELS,
    ERROR_NO_SAMPLES,
    ERROR_NON_FINITE_LOSS,
    ERROR_REFINE_WINDOW,
    ERROR_SHAPE_MISMATCH,
    InputError,
    NoValidPixelsError,
    NonFiniteLossError,
)
from bp_layer.grid_model import EdgeWeights, Temperature, descend, with_weights
from bp_layer.listens import Listens
from bp_layer.pyramid import backward_hierarchy, pad_even, run_hierarchy

BELIEF_FLOOR: float = 1e-12
BAD_THRESHOLDS: Tuple[int, ...] = (1, 2, 3)
MIN_TEMPERATURE: float = 1e-6


def _valid_targets(
    target: np.ndarray, labels: int, mask: Optional[np.ndarray]
) -> Tuple[np.ndarray, np.ndarray]:
    """Rounded integer labels and the mask of usable pixels.

    A pixel is usable when its target is finite, rounds into ``[0, labels)``
    and the optional mask allows it.
    """
    target = np.asarray(target, dtype=np.float64)
    valid = np.isfinite(target)
    rounded = np.rint(np.where(valid, target, 0.0)).astype(np.int64)
    valid &= (rounded >= 0) & (rounded < labels)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    return np.where(valid, rounded, 0), valid


def nll_loss(
    beliefs: np.ndarray, target: np.ndarray, mask: Optional[np.ndarray] = None
) -> Tuple[float, np.ndarray]:
    """Mean ``-log B_i(d*_i)`` over valid pixels and its gradient in B.

    Raises:
        NoValidPixelsError: No pixel is usable.
    """
    beliefs = np.asarray(beliefs, dtype=np.float64)
    labels, valid = _valid_targets(target, beliefs.shape[-1], mask)
    count = int(valid.sum())
    if count == 0:
        raise NoValidPixelsError()
    ys, xs = np.nonzero(valid)
    picked = np.maximum(beliefs[ys, xs, labels[ys, xs]], BELIEF_FLOOR)
    loss = float(-np.log(picked).sum() / count)
    d_beliefs = np.zeros_like(beliefs)
    d_beliefs[ys, xs, labels[ys, xs]] = -1.0 / (count * picked)
    return loss, d_beliefs


def huber_loss(
    y: np.ndarray, target: np.ndarray, delta: float = 1.0, mask: Optional[np.ndarray] = None
) -> Tuple[float, np.ndarray]:
    """Mean Huber penalty ``r**2 / (2 delta)`` or ``|r| - delta / 2``.

    Raises:
        NoValidPixelsError: No pixel has a finite target inside the mask.
    """
    if delta <= 0:
        raise InputError(ERROR_HUBER_DELTA.format(delta=delta))
    y = np.asarray(y, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    valid = np.isfinite(target)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        raise NoValidPixelsError()
    r = np.where(valid, y - np.where(valid, target, 0.0), 0.0)
    inside = np.abs(r) <= delta
    penalty = np.where(inside, r * r / (2.0 * delta), np.abs(r) - delta / 2.0)
    slope = np.where(inside, r / delta, np.sign(r))
    loss = float(np.sum(np.where(valid, penalty, 0.0)) / count)
    return loss, np.where(valid, slope, 0.0) / count


@dataclass
class RefineTape:
    beliefs: np.ndarray
    window: np.ndarray
    denominator: np.ndarray
    y: np.ndarray


def refine_basic(beliefs: np.ndarray, tau: int = 3) -> Tuple[np.ndarray, RefineTape]:
    """Belief-weighted mean label in a window of ``tau`` around the argmax.

    The window is clipped at the label range.
    """
    if tau < 1:
        raise InputError(ERROR_REFINE_WINDOW.format(tau=tau))
    beliefs = np.asarray(beliefs, dtype=np.float64)
    labels = np.arange(beliefs.shape[-1])
    centre = np.argmax(beliefs, axis=-1)[..., None]
    window = np.abs(labels - centre) <= tau
    weights = np.where(window, beliefs, 0.0)
    denominator = weights.sum(axis=-1)
    y = (weights * labels).sum(axis=-1) / denominator
    return y, RefineTape(beliefs, window, denominator, y)


def refine_backward(tape: RefineTape, d_y: np.ndarray) -> np.ndarray:
    """Gradient in the beliefs, holding the window centre fixed."""
    labels = np.arange(tape.beliefs.shape[-1])
    slope = (labels - tape.y[..., None]) / tape.denominator[..., None]
    return np.where(tape.window, slope * d_y[..., None], 0.0)


def downsample_target(target: np.ndarray, levels: int) -> List[np.ndarray]:
    """Label-unit targets for every pyramid level, finest first.

    Each level averages the finite values of 2x2 blocks and halves them
    (label ranges halve with resolution); blocks without a finite value
    become NaN. Odd sizes give the last block row or column one pixel.
    """
    result = [np.asarray(target, dtype=np.float64)]
    for _ in range(levels - 1):
        current = pad_even(result[-1], fill=np.nan)
        height, width = current.shape
        blocks = current.reshape(height // 2, 2, width // 2, 2)
        valid = np.isfinite(blocks)
        count = valid.sum(axis=(1, 3))
        total = np.where(valid, blocks, 0.0).sum(axis=(1, 3))
        mean = np.divide(total, count, out=np.full(total.shape, np.nan), where=count > 0)
        result.append(mean / 2.0)
    return result


@dataclass
class SupervisedLoss:
    loss: float
    d_beliefs: List[Optional[np.ndarray]]
    d_refined: Optional[np.ndarray]
    components: List[float] = field(default_factory=list)


def deep_supervised_loss(
    per_level_beliefs: Sequence[np.ndarray],
    per_level_targets: Sequence[np.ndarray],
    refined_y: Optional[np.ndarray] = None,
    target_y: Optional[np.ndarray] = None,
    huber_delta: float = 1.0,
) -> SupervisedLoss:
    """Equal-weight sum of per-level NLL plus Huber on the refined output."""
    if not per_level_beliefs:
        raise InputError(ERROR_NO_LEVELS)
    total = 0.0
    d_beliefs: List[Optional[np.ndarray]] = []
    components: List[float] = []
    for beliefs, target in zip(per_level_beliefs, per_level_targets):
        loss, grad = nll_loss(beliefs, target)
        total += loss
        components.append(loss)
        d_beliefs.append(grad)
    d_refined = None
    if refined_y is not None and target_y is not None:
        loss, d_refined = huber_loss(refined_y, target_y, huber_delta)
        total += loss
        components.append(loss)
    return SupervisedLoss(total, d_beliefs, d_refined, components)


def metrics(
    pred: np.ndarray, gt: np.ndarray, mask: Optional[np.ndarray] = None
) -> Dict[str, float]:
    """bad1/bad2/bad3 (percent), MAE and EPE over valid pixels.

    Maps with a trailing axis of size 2 are flow fields: badX and EPE then
    use the Euclidean error length, MAE the mean absolute component error.

    Raises:
        InputError: The maps differ in shape.
        NoValidPixelsError: No finite ground truth inside the mask.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InputError(
            ERROR_SHAPE_MISMATCH.format(name="ground truth", actual=gt.shape, expected=pred.shape)
        )
    flow = pred.ndim == 3 and pred.shape[-1] == 2
    valid = np.all(np.isfinite(gt), axis=-1) if flow else np.isfinite(gt)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        raise NoValidPixelsError()
    diff = np.where(valid[..., None] if flow else valid, pred - np.nan_to_num(gt), 0.0)
    if flow:
        error = np.linalg.norm(diff, axis=-1)
        mae = float(np.abs(diff).sum() / (2 * count))
    else:
        error = np.abs(diff)
        mae = float(error.sum() / count)
    result = {f"bad{x}": float(100.0 * np.sum(valid & (error > x)) / count) for x in BAD_THRESHOLDS}
    result["mae"] = mae
    result["epe"] = float(error[valid].mean())
    return result


@dataclass
class TrainingSample:
    """One training example, levels coarse to fine.

    Attributes:
        q_levels: Matching probabilities per level.
        targets: Label-unit targets per level (NaN where unknown).
        weights: Optional edge weights per level.
    """

    q_levels: List[np.ndarray]
    targets: List[np.ndarray]
    weights: Optional[List[Optional[EdgeWeights]]] = None


@dataclass
class TrainStep:
    step: int
    loss: float
    temperature: float


def _forward_sample(
    sample: TrainingSample, params: ModelParams, cfg: TrainConfig, workers: int
):
    specs = params.levels
    if sample.weights is not None:
        specs = [with_weights(spec, w) for spec, w in zip(specs, sample.weights)]
    t = Temperature(params.temperature)
    result = run_hierarchy(sample.q_levels, specs, t, workers=workers)
    finest = result.beliefs[-1]
    refined, refine_tape = refine_basic(finest, cfg.refine_tau)
    supervised = deep_supervised_loss(
        result.beliefs, sample.targets, refined, sample.targets[-1], cfg.huber_delta
    )
    return supervised, result, refine_tape, t


def sample_loss(
    sample: TrainingSample, params: ModelParams, cfg: TrainConfig, workers: int = 1
) -> SupervisedLoss:
    """Deep-supervised loss of one sample; ``components`` run coarse to fine, Huber last."""
    return _forward_sample(sample, params, cfg, workers)[0]


def _sample_loss(
    sample: TrainingSample, params: ModelParams, cfg: TrainConfig, workers: int
):
    supervised, result, refine_tape, t = _forward_sample(sample, params, cfg, workers)
    d_beliefs = list(supervised.d_beliefs)
    if supervised.d_refined is not None:
        d_beliefs[-1] = d_beliefs[-1] + refine_backward(refine_tape, supervised.d_refined)
    grads = backward_hierarchy(result, d_beliefs, t)
    return supervised.loss, grads


def train_toy(
    samples: Sequence[TrainingSample],
    params: ModelParams,
    cfg: TrainConfig,
    workers: int = 1,
    monitor: Optional[Listens] = None,
) -> Tuple[ModelParams, List[float]]:
    """Full-batch projected gradient descent on the temperature and pairwise models.

    Every step averages the deep-supervised loss over all samples. The
    temperature stays positive and the pairwise scores non-negative.

    Returns:
        The trained parameters and the loss before each step.

    Raises:
        NonFiniteLossError: The loss became NaN or infinite.
    """
    if not samples:
        raise InputError(ERROR_NO_SAMPLES)
    curve: List[float] = []
    log.info(f"Training on {len(samples)} samples for {cfg.steps} steps...")
    for step in range(cfg.steps):
        loss = 0.0
        d_temperature = 0.0
        d_pairwise = None
        for sample in samples:
            value, grads = _sample_loss(sample, params, cfg, workers)
            loss += value / len(samples)
            d_temperature += grads.d_temperature / len(samples)
            if d_pairwise is None:
                d_pairwise = grads.d_pairwise
            else:
                for accumulated, grad in zip(d_pairwise, grads.d_pairwise):
                    accumulated += grad
        if not np.isfinite(loss):
            raise NonFiniteLossError(ERROR_NON_FINITE_LOSS.format(loss=loss, step=step))
        curve.append(loss)

        scale = 1.0 / len(samples)
        levels = []
        for spec, grad in zip(params.levels, d_pairwise):
            grad.weights = None
            levels.append(descend(spec, _scaled(grad, scale), cfg.learning_rate))
        temperature = max(params.temperature - cfg.learning_rate * d_temperature, MIN_TEMPERATURE)
        params = ModelParams(temperature, levels)
        log.debug(f"Step {step}: loss {loss:.6f}, temperature {temperature:.4f}")
        if monitor is not None:
            monitor.status = TrainStep(step, loss, temperature)
    log.info("Training done!")
    return params, curve


def _scaled(grad, scale: float):
    if hasattr(grad, "penalties"):
        grad.penalties = grad.penalties * scale
    else:
        grad.horizontal = grad.horizontal * scale
        grad.vertical = grad.vertical * scale
    return grad
