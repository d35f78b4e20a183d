"""Stereo, flow and segmentation pipelines from images to label maps."""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from bp_layer import log
from bp_layer.config import ModelParams, TrainConfig
from bp_layer.errors import (
    ERROR_COARSE_LABELS,
    ERROR_LEVEL_DIVISIBILITY,
    ERROR_SHAPE_MISMATCH,
    InputError,
)
from bp_layer.grid_model import (
    EdgeWeights,
    FullMatrix,
    PairwiseSpec,
    Temperature,
    UnaryVolume,
    image_edge_weights,
    with_weights,
)
from bp_layer.inference import read_beliefs, sgm, sweep_bp_forward, wta
from bp_layer.learning import TrainingSample, downsample_target, refine_basic
from bp_layer.matching import census_features, flow_unaries, stereo_unaries
from bp_layer.pyramid import build_levels, combine_level, level_sizes, run_hierarchy


@dataclass
class StereoLevels:
    """Per-level inputs, coarse to fine."""

    q: List[np.ndarray]
    weights: List[EdgeWeights]


@dataclass
class LabelResult:
    """Output of a pipeline run.

    Attributes:
        values: Refined real-valued labels (or WTA labels as reals).
        beliefs: Finest-level beliefs; matching probabilities for WTA.
    """

    values: np.ndarray
    beliefs: np.ndarray


def _check_radius(radius: int, levels: int) -> None:
    # label u + r of a level must land on label 2u + R of the next finer one
    factor = 2 ** (levels - 1)
    if radius % factor:
        raise InputError(
            ERROR_LEVEL_DIVISIBILITY.format(name="radius", value=radius, factor=factor, levels=levels)
        )


def _edge_weights(image: np.ndarray, beta: float) -> EdgeWeights:
    peak = max(float(np.max(image)), 1.0)
    return image_edge_weights(image / peak, beta)


def stereo_levels(left: np.ndarray, right: np.ndarray, cfg: TrainConfig, levels: int) -> StereoLevels:
    """Census matching probabilities and edge weights on every level.

    Level ``k`` (0 = finest) searches ``ceil((max_disp + 1) / 2**k)``
    disparities, so every level has twice the labels of the next coarser
    one or one less.
    """
    if left.shape != right.shape:
        raise InputError(
            ERROR_SHAPE_MISMATCH.format(name="right image", actual=right.shape, expected=left.shape)
        )
    labels = level_sizes(cfg.max_disp + 1, levels)
    if labels[-1] < 2:
        raise InputError(ERROR_COARSE_LABELS.format(name="max_disp", value=cfg.max_disp, levels=levels))
    lefts = build_levels(left, levels)
    rights = build_levels(right, levels)
    q, weights = [], []
    for k in range(levels - 1, -1, -1):
        max_disp = labels[k] - 1
        feat0 = census_features(lefts[k], cfg.census_window)
        feat1 = census_features(rights[k], cfg.census_window)
        q.append(stereo_unaries(feat0, feat1, max_disp))
        weights.append(_edge_weights(lefts[k], cfg.beta))
    return StereoLevels(q, weights)


def _weighted(specs: List[PairwiseSpec], weights: List[EdgeWeights]) -> List[PairwiseSpec]:
    return [with_weights(spec, w) for spec, w in zip(specs, weights)]


def _level_specs(params: ModelParams, levels: int) -> List[PairwiseSpec]:
    if len(params.levels) < levels:
        raise InputError(
            f"Parameters hold {len(params.levels)} pairwise levels, {levels} are needed"
        )
    return list(params.levels[-levels:])


def run_labels(
    q_levels: List[np.ndarray],
    weights: List[EdgeWeights],
    params: ModelParams,
    algo: str,
    refine_tau: int,
    workers: int = 1,
) -> LabelResult:
    """Labels from per-level matching probabilities with the chosen algorithm.

    ``bp`` runs the whole hierarchy; ``sgm`` and ``wta`` use the finest level.
    """
    q = q_levels[-1]
    if algo == "wta":
        return LabelResult(wta(q).astype(np.float64), q)
    t = Temperature(params.temperature)
    if algo == "sgm":
        spec = with_weights(_level_specs(params, 1)[0], weights[-1])
        log_beliefs, _ = sgm(combine_level(q, None, t), spec, workers=workers)
        beliefs = read_beliefs(log_beliefs).probs
    else:
        specs = _weighted(_level_specs(params, len(q_levels)), weights)
        beliefs = run_hierarchy(q_levels, specs, t, workers=workers).beliefs[-1]
    values, _ = refine_basic(beliefs, refine_tau)
    return LabelResult(values, beliefs)


def run_stereo(
    left: np.ndarray,
    right: np.ndarray,
    params: ModelParams,
    cfg: TrainConfig,
    workers: int = 1,
) -> LabelResult:
    levels = cfg.levels if cfg.algo == "bp" else 1
    log.info(f"Running {cfg.algo} stereo on {left.shape[0]}x{left.shape[1]} over {levels} levels...")
    inputs = stereo_levels(left, right, cfg, levels)
    return run_labels(inputs.q, inputs.weights, params, cfg.algo, cfg.refine_tau, workers)


def stereo_sample(
    left: np.ndarray, right: np.ndarray, disparity: np.ndarray, cfg: TrainConfig
) -> TrainingSample:
    inputs = stereo_levels(left, right, cfg, cfg.levels)
    targets = downsample_target(disparity, cfg.levels)[::-1]
    return TrainingSample(inputs.q, targets, inputs.weights)


def run_flow(
    image0: np.ndarray,
    image1: np.ndarray,
    radius: int,
    params: ModelParams,
    cfg: TrainConfig,
    workers: int = 1,
) -> Tuple[LabelResult, LabelResult]:
    """Flow components (rows, columns), each labelled by its own hierarchy.

    Level ``k`` (0 = finest) searches radius ``radius / 2**k``; the values
    returned are displacements, not labels.
    """
    levels = cfg.levels if cfg.algo == "bp" else 1
    if image0.shape != image1.shape:
        raise InputError(
            ERROR_SHAPE_MISMATCH.format(name="second image", actual=image1.shape, expected=image0.shape)
        )
    _check_radius(radius, levels)
    firsts = build_levels(image0, levels)
    seconds = build_levels(image1, levels)
    q1, q2, weights = [], [], []
    for k in range(levels - 1, -1, -1):
        feat0 = census_features(firsts[k], cfg.census_window)
        feat1 = census_features(seconds[k], cfg.census_window)
        rows, cols = flow_unaries(feat0, feat1, radius // 2**k)
        q1.append(rows)
        q2.append(cols)
        weights.append(_edge_weights(firsts[k], cfg.beta))
    log.info(f"Running {cfg.algo} flow at radius {radius} over {levels} levels...")
    results = []
    for q in (q1, q2):
        result = run_labels(q, weights, params, cfg.algo, cfg.refine_tau, workers)
        results.append(LabelResult(result.values - radius, result.beliefs))
    return results[0], results[1]


def run_segmentation(
    probs: np.ndarray,
    spec: FullMatrix,
    temperature: float = 1.0,
    image: Optional[np.ndarray] = None,
    beta: float = 1.0,
    workers: int = 1,
) -> LabelResult:
    """Sweep BP with a compatibility matrix, then WTA of the beliefs."""
    labels = probs.shape[-1]
    if spec.matrix.labels != labels:
        raise InputError(
            ERROR_SHAPE_MISMATCH.format(
                name="compatibility matrix",
                actual=spec.matrix.horizontal.shape,
                expected=(labels, labels),
            )
        )
    if image is not None:
        if image.shape != probs.shape[:2]:
            raise InputError(
                ERROR_SHAPE_MISMATCH.format(name="image", actual=image.shape, expected=probs.shape[:2])
            )
        spec = with_weights(spec, _edge_weights(image, beta))
    g = UnaryVolume(temperature * np.asarray(probs, dtype=np.float64))
    beliefs, _ = sweep_bp_forward(g, spec, workers=workers)
    return LabelResult(wta(beliefs.probs).astype(np.float64), beliefs.probs)
