"""Unary construction from images: census features, stereo and flow volumes."""

from pathlib import Path
from typing import Tuple, Union

import numpy as np
from scipy.special import softmax

from bp_layer import log
from bp_layer.errors import (
    ERROR_CENSUS_WINDOW,
    ERROR_MAX_DISP,
    ERROR_RADIUS,
    ERROR_SHAPE_MISMATCH,
    InputError,
)
from bp_layer.formats.volume import read_volume

ROW_SUM_TOLERANCE: float = 1e-6


def census_features(image: np.ndarray, window: int = 5) -> np.ndarray:
    """Census transform with clamped borders.

    Bit ``k`` of a pixel is 1 when the ``k``-th window neighbour (row-major,
    centre skipped) is darker than the pixel itself, so the L1 distance of
    two feature vectors is their Hamming distance.

    Returns:
        ``(H, W, window**2 - 1)`` array of zeros and ones.
    """
    if window < 3 or window % 2 == 0:
        raise InputError(ERROR_CENSUS_WINDOW.format(window=window))
    image = np.asarray(image, dtype=np.float64)
    height, width = image.shape
    radius = window // 2
    padded = np.pad(image, radius, mode="edge")
    bits = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            neighbour = padded[radius + dy : radius + dy + height, radius + dx : radius + dx + width]
            bits.append(neighbour < image)
    return np.stack(bits, axis=-1).astype(np.float64)


def _check_features(feat0: np.ndarray, feat1: np.ndarray) -> None:
    if feat0.shape != feat1.shape:
        raise InputError(
            ERROR_SHAPE_MISMATCH.format(name="feat1", actual=feat1.shape, expected=feat0.shape)
        )
    if feat0.ndim != 3:
        raise InputError(
            ERROR_SHAPE_MISMATCH.format(name="feat0", actual=feat0.shape, expected="(H, W, C)")
        )


def stereo_distances(feat0: np.ndarray, feat1: np.ndarray, max_disp: int) -> np.ndarray:
    """L1 feature distances ``(H, W, D + 1)`` between pixel x and x - k.

    Disparities reaching outside the right image get the pixel's largest
    in-range distance.
    """
    feat0 = np.asarray(feat0, dtype=np.float64)
    feat1 = np.asarray(feat1, dtype=np.float64)
    _check_features(feat0, feat1)
    height, width, _ = feat0.shape
    if not 1 <= max_disp < width:
        raise InputError(ERROR_MAX_DISP.format(max_disp=max_disp, width=width))

    distances = np.full((height, width, max_disp + 1), np.nan)
    for k in range(max_disp + 1):
        distances[:, k:, k] = np.abs(feat0[:, k:] - feat1[:, : width - k]).sum(axis=-1)
    fill = np.nanmax(distances, axis=-1, keepdims=True)
    return np.where(np.isnan(distances), fill, distances)


def stereo_unaries(feat0: np.ndarray, feat1: np.ndarray, max_disp: int) -> np.ndarray:
    """Matching distributions ``q_i(k) = softmax_k(-|f0(i) - f1(i - k)|_1)``."""
    log.debug(f"Computing stereo unaries up to disparity {max_disp}...")
    return softmax(-stereo_distances(feat0, feat1, max_disp), axis=-1)


def _shift_window(
    feat1: np.ndarray, du: int, dv: int
) -> Tuple[np.ndarray, np.ndarray]:
    """``feat1`` sampled at ``(y + du, x + dv)`` and the in-image mask."""
    height, width = feat1.shape[:2]
    ys = np.arange(height) + du
    xs = np.arange(width) + dv
    valid = ((ys >= 0) & (ys < height))[:, None] & ((xs >= 0) & (xs < width))[None, :]
    sampled = feat1[np.clip(ys, 0, height - 1)][:, np.clip(xs, 0, width - 1)]
    return sampled, valid


def flow_unaries(
    feat0: np.ndarray, feat1: np.ndarray, radius: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-component flow distributions from streamed min-projections.

    Component 1 is the vertical displacement ``u1`` (rows) and component 2
    the horizontal ``u2`` (columns); label ``u + radius`` encodes
    displacement ``u``. Each of the ``(2R + 1)**2`` candidate shifts is
    scored once and folded into two running maxima, so no 4-D volume is
    ever held.

    Returns:
        ``(q1, q2)``, each ``(H, W, 2R + 1)``.
    """
    feat0 = np.asarray(feat0, dtype=np.float64)
    feat1 = np.asarray(feat1, dtype=np.float64)
    _check_features(feat0, feat1)
    height, width, _ = feat0.shape
    limit = min(height, width)
    if not 1 <= radius < limit:
        raise InputError(ERROR_RADIUS.format(radius=radius, limit=limit))

    size = 2 * radius + 1
    best1 = np.full((height, width, size), -np.inf)
    best2 = np.full((height, width, size), -np.inf)
    worst = np.zeros((height, width))
    log.debug(f"Streaming {size * size} flow candidates...")
    for i, du in enumerate(range(-radius, radius + 1)):
        for j, dv in enumerate(range(-radius, radius + 1)):
            sampled, valid = _shift_window(feat1, du, dv)
            distance = np.abs(feat0 - sampled).sum(axis=-1)
            worst = np.where(valid, np.maximum(worst, distance), worst)
            score = np.where(valid, -distance, -np.inf)
            best1[..., i] = np.maximum(best1[..., i], score)
            best2[..., j] = np.maximum(best2[..., j], score)
    # a slice with no in-image sample holds only the neutral fill
    neutral = -worst[..., None]
    best1 = np.where(np.isfinite(best1), best1, neutral)
    best2 = np.where(np.isfinite(best2), best2, neutral)
    return softmax(best1, axis=-1), softmax(best2, axis=-1)


def load_probability_volume(path: Union[str, Path]) -> np.ndarray:
    """Read a CSV probability volume, renormalizing rows that drift.

    Raises:
        InputError: Malformed file or negative, non-finite or all-zero rows.
    """
    volume = read_volume(path)
    if not np.all(np.isfinite(volume)) or np.any(volume < 0):
        raise InputError(f"{path}: probabilities must be finite and non-negative")
    sums = volume.sum(axis=-1, keepdims=True)
    if np.any(sums <= 0):
        raise InputError(f"{path}: a pixel has zero total probability")
    drift = np.abs(sums - 1.0) > ROW_SUM_TOLERANCE
    if np.any(drift):
        log.warning(f"{path}: renormalizing {int(drift.sum())} rows that do not sum to 1")
        volume = np.where(drift, volume / sums, volume)
    return volume
