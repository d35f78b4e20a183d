"""Core data types for grid CRFs and pairwise score evaluation."""

from dataclasses import dataclass, field, replace
from enum import Enum, auto
from typing import Dict, Optional, Tuple, Union

import numpy as np

from bp_layer.errors import (
    ERROR_FEW_LABELS,
    ERROR_LABEL_RANGE,
    ERROR_NEGATIVE,
    ERROR_NON_FINITE,
    ERROR_PIXEL_RANGE,
    ERROR_SHAPE_MISMATCH,
    ERROR_TEMPERATURE,
    InputError,
)

# Order of the jump penalties wherever they travel as a vector.
JUMP_FIELDS: Tuple[str, ...] = ("p1_pos", "p1_neg", "p2_pos", "p2_neg", "p3")


class Direction(Enum):
    """Travel direction of a message.

    Attributes:
        LEFT: Right-to-left sweep along rows.
        RIGHT: Left-to-right sweep along rows.
        UP: Bottom-to-top sweep along columns.
        DOWN: Top-to-bottom sweep along columns.
    """

    LEFT = auto()
    RIGHT = auto()
    UP = auto()
    DOWN = auto()

    @property
    def horizontal(self) -> bool:
        return self in (Direction.LEFT, Direction.RIGHT)

    @property
    def reversed(self) -> bool:
        """Whether chain order runs against increasing grid coordinates."""
        return self in (Direction.LEFT, Direction.UP)

    @property
    def forward(self) -> "Direction":
        """The direction along increasing coordinates on the same axis."""
        return Direction.RIGHT if self.horizontal else Direction.DOWN

    @property
    def opposite(self) -> "Direction":
        return {
            Direction.LEFT: Direction.RIGHT,
            Direction.RIGHT: Direction.LEFT,
            Direction.UP: Direction.DOWN,
            Direction.DOWN: Direction.UP,
        }[self]

    @property
    def step(self) -> Tuple[int, int]:
        return {
            Direction.LEFT: (0, -1),
            Direction.RIGHT: (0, 1),
            Direction.UP: (-1, 0),
            Direction.DOWN: (1, 0),
        }[self]


HORIZONTAL = (Direction.RIGHT, Direction.LEFT)
VERTICAL = (Direction.DOWN, Direction.UP)


def _check_finite(name: str, values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise InputError(ERROR_NON_FINITE.format(name=name))


@dataclass(frozen=True)
class GridShape:
    height: int
    width: int
    labels: int

    def __post_init__(self) -> None:
        if min(self.height, self.width, self.labels) < 1:
            raise InputError(f"Grid dimensions must be positive, got {self}")

    def require_inference(self) -> None:
        if self.labels < 2:
            raise InputError(ERROR_FEW_LABELS.format(labels=self.labels))


@dataclass(frozen=True, eq=False)
class UnaryVolume:
    """Per-pixel per-label scores g, higher is better."""

    scores: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 3:
            raise InputError(
                ERROR_SHAPE_MISMATCH.format(
                    name="unaries", actual=scores.shape, expected="(H, W, L)"
                )
            )
        _check_finite("unaries", scores)
        object.__setattr__(self, "scores", scores)

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.scores.shape)


@dataclass(frozen=True, eq=False)
class BeliefVolume:
    """Per-pixel label distributions; every row sums to one."""

    probs: np.ndarray

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.probs.shape)


@dataclass(frozen=True)
class Temperature:
    t: float

    def __post_init__(self) -> None:
        if not self.t > 0 or not np.isfinite(self.t):
            raise InputError(ERROR_TEMPERATURE.format(value=self.t))


@dataclass(frozen=True, eq=False)
class EdgeWeights:
    """Per-pixel edge weights, indexed by the sending pixel of each direction."""

    left: np.ndarray
    right: np.ndarray
    up: np.ndarray
    down: np.ndarray

    def __post_init__(self) -> None:
        for name in ("left", "right", "up", "down"):
            values = np.asarray(getattr(self, name), dtype=np.float64)
            _check_finite(f"{name} weights", values)
            if np.any(values < 0):
                raise InputError(ERROR_NEGATIVE.format(name=f"{name} weights"))
            object.__setattr__(self, name, values)
        shapes = {self.left.shape, self.right.shape, self.up.shape, self.down.shape}
        if len(shapes) != 1:
            raise InputError(f"Edge weight arrays disagree in shape: {sorted(shapes)}")

    def __getitem__(self, direction: Direction) -> np.ndarray:
        return getattr(self, direction.name.lower())

    @property
    def shape(self) -> Tuple[int, int]:
        return self.left.shape

    @classmethod
    def ones(cls, height: int, width: int) -> "EdgeWeights":
        return cls(*(np.ones((height, width)) for _ in range(4)))

    @classmethod
    def from_mapping(cls, mapping: Dict[Direction, np.ndarray]) -> "EdgeWeights":
        return cls(**{d.name.lower(): mapping[d] for d in Direction})


def image_edge_weights(image: np.ndarray, beta: float = 1.0) -> EdgeWeights:
    """Edge-aware weights w = exp(-beta * |I(receiver) - I(sender)|).

    Edges leaving the grid keep weight 1; they are never used.
    """
    image = np.asarray(image, dtype=np.float64)
    weights = {}
    for direction in Direction:
        dy, dx = direction.step
        diff = np.zeros_like(image)
        ys = slice(max(0, -dy), image.shape[0] - max(0, dy))
        xs = slice(max(0, -dx), image.shape[1] - max(0, dx))
        yr = slice(ys.start + dy, ys.stop + dy)
        xr = slice(xs.start + dx, xs.stop + dx)
        diff[ys, xs] = np.abs(image[yr, xr] - image[ys, xs])
        weights[direction] = np.exp(-beta * diff)
    return EdgeWeights.from_mapping(weights)


@dataclass(frozen=True)
class JumpParams:
    """Truncated asymmetric jump penalties, stored as non-negative magnitudes."""

    p1_pos: float = 0.0
    p1_neg: float = 0.0
    p2_pos: float = 0.0
    p2_neg: float = 0.0
    p3: float = 0.0
    per_pixel_weights: Optional[EdgeWeights] = None

    def __post_init__(self) -> None:
        penalties = self.penalties
        _check_finite("jump penalties", penalties)
        if np.any(penalties < 0):
            raise InputError(ERROR_NEGATIVE.format(name="jump penalties"))

    @property
    def penalties(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in JUMP_FIELDS], dtype=np.float64)

    @classmethod
    def from_penalties(
        cls, penalties: np.ndarray, per_pixel_weights: Optional[EdgeWeights] = None
    ) -> "JumpParams":
        values = {name: float(v) for name, v in zip(JUMP_FIELDS, penalties)}
        return cls(per_pixel_weights=per_pixel_weights, **values)

    def theta(self, delta: int) -> float:
        """Penalty magnitude of the label jump delta = t - s."""
        if delta == 0:
            return 0.0
        return float(self.penalties[jump_bin(delta)])


@dataclass(frozen=True, eq=False)
class CompatMatrix:
    """Label compatibility scores; ``vertical[s][t]`` scores s above t."""

    horizontal: np.ndarray
    vertical: np.ndarray

    def __post_init__(self) -> None:
        for name in ("horizontal", "vertical"):
            values = np.asarray(getattr(self, name), dtype=np.float64)
            if values.ndim != 2 or values.shape[0] != values.shape[1]:
                raise InputError(
                    ERROR_SHAPE_MISMATCH.format(name=name, actual=values.shape, expected="(L, L)")
                )
            _check_finite(f"{name} matrix", values)
            if np.any(values < 0):
                raise InputError(ERROR_NEGATIVE.format(name=f"{name} matrix"))
            object.__setattr__(self, name, values)
        if self.horizontal.shape != self.vertical.shape:
            raise InputError("Horizontal and vertical matrices differ in size")

    @property
    def labels(self) -> int:
        return self.horizontal.shape[0]


@dataclass(frozen=True)
class TruncatedJump:
    params: JumpParams

    @property
    def weights(self) -> Optional[EdgeWeights]:
        return self.params.per_pixel_weights


@dataclass(frozen=True)
class FullMatrix:
    matrix: CompatMatrix
    weights: Optional[EdgeWeights] = None


PairwiseSpec = Union[TruncatedJump, FullMatrix]


def jump_bin(delta: int) -> int:
    """Slot of JUMP_FIELDS scoring the jump ``delta``; callers handle delta=0."""
    if delta == 1:
        return 0
    if delta == -1:
        return 1
    if delta == 2:
        return 2
    if delta == -2:
        return 3
    return 4


def jump_bins(delta: np.ndarray) -> np.ndarray:
    """Vectorized jump_bin; the free zero jump maps to -1."""
    bins = np.full(np.shape(delta), 4, dtype=np.int64)
    bins[delta == 1] = 0
    bins[delta == -1] = 1
    bins[delta == 2] = 2
    bins[delta == -2] = 3
    bins[delta == 0] = -1
    return bins


def edge_weight(spec: PairwiseSpec, pixel: Tuple[int, int], direction: Direction) -> float:
    weights = spec.weights
    if weights is None:
        return 1.0
    return float(weights[direction][pixel])


def eval_pairwise(
    spec: PairwiseSpec, pixel: Tuple[int, int], direction: Direction, s: int, t: int
) -> float:
    """Score of sending label s from ``pixel`` to its neighbour labelled t.

    Raises:
        AssertionError: Label or pixel out of range.
    """
    if isinstance(spec, TruncatedJump):
        labels = None
    else:
        labels = spec.matrix.labels
    for label in (s, t):
        if label < 0 or (labels is not None and label >= labels):
            raise AssertionError(ERROR_LABEL_RANGE.format(label=label, labels=labels))
    if spec.weights is not None:
        height, width = spec.weights.shape
        y, x = pixel
        if not (0 <= y < height and 0 <= x < width):
            raise AssertionError(
                ERROR_PIXEL_RANGE.format(pixel=pixel, height=height, width=width)
            )
    w = edge_weight(spec, pixel, direction)
    if isinstance(spec, TruncatedJump):
        return -w * spec.params.theta(t - s)
    matrix = spec.matrix.horizontal if direction.horizontal else spec.matrix.vertical
    if direction.reversed:
        return w * float(matrix[t, s])
    return w * float(matrix[s, t])


def apply_temperature(q: np.ndarray, t: Temperature) -> UnaryVolume:
    """Unary scores g = T q."""
    return UnaryVolume(t.t * np.asarray(q, dtype=np.float64))


@dataclass(frozen=True)
class MessageField:
    """Grid-ordered log-domain messages keyed by travel direction."""

    values: Dict[Direction, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, direction: Direction) -> np.ndarray:
        return self.values[direction]


@dataclass(frozen=True)
class ArgmaxRecord:
    """Chain-ordered maximizers o saved by the forward DP, per direction."""

    o: Dict[Direction, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, direction: Direction) -> np.ndarray:
        return self.o[direction]


@dataclass
class JumpGrad:
    penalties: np.ndarray
    weights: Optional[Dict[Direction, np.ndarray]] = None

    def __iadd__(self, other: "JumpGrad") -> "JumpGrad":
        self.penalties = self.penalties + other.penalties
        self.weights = _add_weights(self.weights, other.weights)
        return self


@dataclass
class MatrixGrad:
    horizontal: np.ndarray
    vertical: np.ndarray
    weights: Optional[Dict[Direction, np.ndarray]] = None

    def __iadd__(self, other: "MatrixGrad") -> "MatrixGrad":
        self.horizontal = self.horizontal + other.horizontal
        self.vertical = self.vertical + other.vertical
        self.weights = _add_weights(self.weights, other.weights)
        return self


PairwiseGrad = Union[JumpGrad, MatrixGrad]
LearnableScores = Union[np.ndarray, Tuple[np.ndarray, np.ndarray]]


def _add_weights(mine, theirs):
    if theirs is None:
        return mine
    if mine is None:
        return {d: v.copy() for d, v in theirs.items()}
    return {d: mine[d] + theirs[d] for d in mine}


def zero_grad(spec: PairwiseSpec, height: int, width: int) -> PairwiseGrad:
    weights = None
    if spec.weights is not None:
        weights = {d: np.zeros((height, width)) for d in Direction}
    if isinstance(spec, TruncatedJump):
        return JumpGrad(np.zeros(len(JUMP_FIELDS)), weights)
    size = spec.matrix.labels
    return MatrixGrad(np.zeros((size, size)), np.zeros((size, size)), weights)


@dataclass
class GradBundle:
    d_unary: np.ndarray
    d_pairwise: PairwiseGrad
    d_temperature: float = 0.0


def project_nonnegative(spec: PairwiseSpec, scores: LearnableScores) -> PairwiseSpec:
    """``spec`` with its learnable scores replaced by ``scores`` clamped to >= 0.

    ``scores`` holds the five penalties of a jump model or the horizontal
    and vertical matrices of a matrix model.
    """
    if isinstance(spec, TruncatedJump):
        penalties = np.maximum(np.asarray(scores, dtype=np.float64), 0.0)
        return TruncatedJump(JumpParams.from_penalties(penalties, spec.weights))
    horizontal, vertical = scores
    matrix = CompatMatrix(np.maximum(horizontal, 0.0), np.maximum(vertical, 0.0))
    return replace(spec, matrix=matrix)


def descend(spec: PairwiseSpec, grad: PairwiseGrad, learning_rate: float) -> PairwiseSpec:
    """One projected gradient-descent step on the pairwise parameters.

    Per-pixel weights are inputs derived from the image and stay fixed.
    """
    if isinstance(spec, TruncatedJump):
        return project_nonnegative(spec, spec.params.penalties - learning_rate * grad.penalties)
    return project_nonnegative(
        spec,
        (
            spec.matrix.horizontal - learning_rate * grad.horizontal,
            spec.matrix.vertical - learning_rate * grad.vertical,
        ),
    )


def with_weights(spec: PairwiseSpec, weights: Optional[EdgeWeights]) -> PairwiseSpec:
    if isinstance(spec, TruncatedJump):
        return TruncatedJump(replace(spec.params, per_pixel_weights=weights))
    return replace(spec, weights=weights)
