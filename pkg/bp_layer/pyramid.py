"""Coarse-to-fine inference over a resolution pyramid."""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from bp_layer import log
from bp_layer.errors import (
    ERROR_IMAGE_TOO_SMALL,
    ERROR_UPSAMPLE_SHAPE,
    InputError,
)
from bp_layer.grid_model import (
    GradBundle,
    PairwiseGrad,
    PairwiseSpec,
    Temperature,
    UnaryVolume,
)
from bp_layer.inference import SweepTape, sweep_bp_backward, sweep_bp_forward

DEFAULT_LEVELS: int = 3


def coarser(size: int) -> int:
    """Size of the next pyramid level along one axis."""
    return (size + 1) // 2


def level_sizes(size: int, num_levels: int) -> List[int]:
    """``size`` halved ``num_levels - 1`` times with ceil division, finest first."""
    sizes = [size]
    for _ in range(num_levels - 1):
        sizes.append(coarser(sizes[-1]))
    return sizes


def pad_even(array: np.ndarray, fill: Optional[float] = None) -> np.ndarray:
    """Pad odd leading axes by one row or column.

    The copy repeats the border unless ``fill`` is given.
    """
    height, width = array.shape[:2]
    pad = [(0, height % 2), (0, width % 2)] + [(0, 0)] * (array.ndim - 2)
    if fill is None:
        return np.pad(array, pad, mode="edge")
    return np.pad(array, pad, mode="constant", constant_values=fill)


def pool2(array: np.ndarray) -> np.ndarray:
    """2x2 average pooling over the two leading axes; odd sizes repeat their border."""
    array = pad_even(np.asarray(array, dtype=np.float64))
    height, width = array.shape[:2]
    blocks = array.reshape(height // 2, 2, width // 2, 2, *array.shape[2:])
    return blocks.mean(axis=(1, 3))


def build_levels(array: np.ndarray, num_levels: int = DEFAULT_LEVELS) -> List[np.ndarray]:
    """Pyramid of an image or a volume, finest level first.

    Level ``k`` holds ``ceil(n / 2**k)`` pixels along an axis of ``n``.

    Raises:
        InputError: The array is smaller than ``2**(num_levels - 1)``.
    """
    if num_levels < 1:
        raise InputError(f"Pyramids need at least one level, got {num_levels}")
    array = np.asarray(array, dtype=np.float64)
    height, width = array.shape[:2]
    factor = 2 ** (num_levels - 1)
    if height < factor or width < factor:
        raise InputError(
            ERROR_IMAGE_TOO_SMALL.format(height=height, width=width, levels=num_levels)
        )
    levels = [array]
    for _ in range(num_levels - 1):
        levels.append(pool2(levels[-1]))
    return levels


def _spatial_matrix(size: int, fine: int) -> np.ndarray:
    """Linear interpolation ``fine x size`` with half-pixel centres."""
    position = np.clip((np.arange(fine) + 0.5) / 2.0 - 0.5, 0.0, size - 1)
    return _interpolation_rows(position, size)


def _label_matrix(coarse: int, fine: int) -> np.ndarray:
    """Coarse label k lands on fine label 2k; labels beyond the last clamp."""
    position = np.clip(np.arange(fine) / 2.0, 0.0, coarse - 1)
    return _interpolation_rows(position, coarse)


def _interpolation_rows(position: np.ndarray, size: int) -> np.ndarray:
    low = np.floor(position).astype(np.int64)
    high = np.minimum(low + 1, size - 1)
    frac = position - low
    matrix = np.zeros((len(position), size))
    rows = np.arange(len(position))
    np.add.at(matrix, (rows, low), 1.0 - frac)
    np.add.at(matrix, (rows, high), frac)
    return matrix


@dataclass(frozen=True, eq=False)
class Upsampler:
    """Separable trilinear map ``(h, w, l) -> (H, W, L)``.

    Every fine size is twice the coarse one or one less. ``apply`` and
    ``adjoint`` are exact transposes of each other.
    """

    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray

    @classmethod
    def for_shape(cls, coarse: Tuple[int, int, int], fine: Tuple[int, int, int]) -> "Upsampler":
        if any(size not in (2 * low, 2 * low - 1) for low, size in zip(coarse, fine)):
            raise InputError(ERROR_UPSAMPLE_SHAPE.format(coarse=tuple(coarse), fine=tuple(fine)))
        height, width, labels = coarse
        return cls(
            _spatial_matrix(height, fine[0]),
            _spatial_matrix(width, fine[1]),
            _label_matrix(labels, fine[2]),
        )

    def apply(self, volume: np.ndarray) -> np.ndarray:
        return np.einsum("Yy,Xx,Ll,yxl->YXL", self.rows, self.cols, self.labels, volume, optimize=True)

    def adjoint(self, volume: np.ndarray) -> np.ndarray:
        return np.einsum("Yy,Xx,Ll,YXL->yxl", self.rows, self.cols, self.labels, volume, optimize=True)


def upsample_beliefs(
    coarse: np.ndarray, fine_shape: Optional[Tuple[int, int, int]] = None
) -> np.ndarray:
    """Trilinearly upsample beliefs and renormalize every pixel.

    Args:
        coarse: ``(h, w, l)`` beliefs.
        fine_shape: ``(H, W, L)`` where each size is twice the coarse one
            or one less; ``(2h, 2w, 2l)`` when omitted.

    Raises:
        InputError: ``fine_shape`` is not the next finer level.
    """
    coarse = np.asarray(coarse, dtype=np.float64)
    if fine_shape is None:
        fine_shape = tuple(2 * size for size in coarse.shape)
    upsampler = Upsampler.for_shape(coarse.shape, fine_shape)
    raw = upsampler.apply(coarse)
    return raw / raw.sum(axis=-1, keepdims=True)


def upsample_backward(coarse: np.ndarray, upsampled: np.ndarray, d_upsampled: np.ndarray) -> np.ndarray:
    """Gradient in the coarse beliefs given one in the renormalized output."""
    upsampler = Upsampler.for_shape(coarse.shape, upsampled.shape)
    sums = upsampler.apply(coarse).sum(axis=-1, keepdims=True)
    inner = np.sum(d_upsampled * upsampled, axis=-1, keepdims=True)
    return upsampler.adjoint((d_upsampled - inner) / sums)


def combine_level(q: np.ndarray, b_up: Optional[np.ndarray], t: Temperature) -> UnaryVolume:
    """Unaries ``T * (q + B_up)``; the coarsest level passes ``b_up=None``."""
    if b_up is None:
        return UnaryVolume(t.t * np.asarray(q, dtype=np.float64))
    return UnaryVolume(t.t * (np.asarray(q, dtype=np.float64) + b_up))


@dataclass
class HierarchyResult:
    """Per-level outputs of run_hierarchy, coarse to fine.

    Attributes:
        beliefs: Sweep BP beliefs per level; the last entry is the finest.
        tapes: Sweep BP tapes per level.
        q: Matching probabilities per level.
        b_up: Upsampled beliefs entering each level (None at the coarsest).
    """

    beliefs: List[np.ndarray] = field(default_factory=list)
    tapes: List[SweepTape] = field(default_factory=list)
    q: List[np.ndarray] = field(default_factory=list)
    b_up: List[Optional[np.ndarray]] = field(default_factory=list)


def run_hierarchy(
    q_levels: Sequence[np.ndarray],
    specs: Sequence[PairwiseSpec],
    t: Temperature,
    normalize: bool = True,
    workers: int = 1,
) -> HierarchyResult:
    """Sweep BP on every level, each seeded with the upsampled level below.

    Args:
        q_levels: Matching probabilities, coarse to fine.
        specs: One pairwise model per level, coarse to fine.
        t: Temperature shared by all levels.
        normalize: Normalize messages inside each sweep.
        workers: Threads per chain batch.
    """
    if len(q_levels) != len(specs):
        raise InputError(f"Got {len(q_levels)} levels of unaries but {len(specs)} pairwise models")
    result = HierarchyResult()
    previous: Optional[np.ndarray] = None
    for level, (q, spec) in enumerate(zip(q_levels, specs)):
        b_up = None if previous is None else upsample_beliefs(previous, q.shape)
        beliefs, tape = sweep_bp_forward(combine_level(q, b_up, t), spec, normalize, workers)
        log.debug(f"Level {level} of {len(specs)} done at {q.shape[0]}x{q.shape[1]}x{q.shape[2]}")
        result.beliefs.append(beliefs.probs)
        result.tapes.append(tape)
        result.q.append(np.asarray(q, dtype=np.float64))
        result.b_up.append(b_up)
        previous = beliefs.probs
    return result


@dataclass
class HierarchyGrad:
    d_temperature: float
    d_pairwise: List[PairwiseGrad]
    d_q: List[np.ndarray]


def backward_hierarchy(
    result: HierarchyResult,
    d_beliefs: Sequence[Optional[np.ndarray]],
    t: Temperature,
) -> HierarchyGrad:
    """Backpropagate per-level belief gradients through every level.

    ``d_beliefs`` runs coarse to fine like the result; None means no loss
    is attached to that level.
    """
    levels = len(result.tapes)
    d_temperature = 0.0
    d_pairwise: List[Optional[PairwiseGrad]] = [None] * levels
    d_q: List[Optional[np.ndarray]] = [None] * levels
    carried: Optional[np.ndarray] = None
    for level in range(levels - 1, -1, -1):
        d_level = np.zeros_like(result.beliefs[level])
        if d_beliefs[level] is not None:
            d_level = d_level + d_beliefs[level]
        if carried is not None:
            d_level = d_level + carried
        bundle: GradBundle = sweep_bp_backward(result.tapes[level], d_level)
        inputs = result.q[level]
        b_up = result.b_up[level]
        if b_up is not None:
            inputs = inputs + b_up
        d_temperature += float(np.sum(bundle.d_unary * inputs))
        d_q[level] = t.t * bundle.d_unary
        d_pairwise[level] = bundle.d_pairwise
        carried = None
        if b_up is not None:
            carried = upsample_backward(result.beliefs[level - 1], b_up, t.t * bundle.d_unary)
    return HierarchyGrad(d_temperature, d_pairwise, d_q)
