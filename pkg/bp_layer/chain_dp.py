"""Dynamic programming along chains of grid pixels.

Chains are handled in batches: all rows (or all columns) of one sweep
direction form a single ``ChainView`` with arrays shaped ``(B, n, L)``.
The forward pass records the maximizing source label of every message
entry; the backward pass walks the chain in reverse and routes each
gradient entry to exactly one source, which keeps it linear in ``n * L``.
"""

from dataclasses import dataclass, replace
from typing import List, Optional, Tuple, Union

import numpy as np

from bp_layer.errors import ERROR_COEFFS, InputError
from bp_layer.grid_model import (
    JUMP_FIELDS,
    Direction,
    FullMatrix,
    PairwiseGrad,
    PairwiseSpec,
    TruncatedJump,
    jump_bins,
)
from bp_layer.parallel import run_split

NEAR_JUMPS: Tuple[int, ...] = tuple(range(-3, 4))
FAR_JUMP: int = 4


def _prefix_max(h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Running maximum of ``h[:, :k+1]`` and its smallest maximizer."""
    size = h.shape[1]
    values = np.maximum.accumulate(h, axis=1)
    previous = np.concatenate(
        [np.full((h.shape[0], 1), -np.inf), values[:, :-1]], axis=1
    )
    starts = np.where(h > previous, np.arange(size), 0)
    return values, np.maximum.accumulate(starts, axis=1)


def _suffix_max(h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Maximum of ``h[:, k:]`` and its smallest maximizer."""
    size = h.shape[1]
    values = np.maximum.accumulate(h[:, ::-1], axis=1)[:, ::-1]
    records = np.where(h == values, np.arange(size), size)
    return values, np.minimum.accumulate(records[:, ::-1], axis=1)[:, ::-1]


@dataclass
class ChainPairwiseGrad:
    """Pairwise gradients of one chain batch.

    ``params`` is laid out like the stored parameter (the 5 jump penalties,
    or the L x L matrix in its stored orientation); ``weights`` holds one
    partial per chain edge.
    """

    params: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True, eq=False)
class JumpChain:
    """Truncated jump scores ``-w_i * theta(t - s)`` along a chain batch.

    ``flipped`` scores the jump as ``s - t``; reversed chains use it when an
    edge must keep the score of its forward orientation.
    """

    penalties: np.ndarray
    weights: np.ndarray
    flipped: bool = False

    def bins(self, delta: np.ndarray) -> np.ndarray:
        return jump_bins(-delta if self.flipped else delta)

    def theta(self, delta: np.ndarray) -> np.ndarray:
        bins = self.bins(np.asarray(delta))
        return np.where(bins < 0, 0.0, self.penalties[np.maximum(bins, 0)])

    def take(self, rows: slice) -> "JumpChain":
        return replace(self, weights=self.weights[rows])

    def zero_grad(self) -> ChainPairwiseGrad:
        return ChainPairwiseGrad(np.zeros(len(JUMP_FIELDS)), np.zeros_like(self.weights))

    def edge_matrices(self, i: int, labels: int) -> np.ndarray:
        """Dense scores ``[b, s, t]`` of edge ``i``; used by the oracles."""
        s = np.arange(labels)
        delta = s[None, :] - s[:, None]
        return -self.weights[:, i, None, None] * self.theta(delta)[None]

    def max_step(self, h: np.ndarray, i: int) -> Tuple[np.ndarray, np.ndarray]:
        chains, size = h.shape
        w = self.weights[:, i][:, None]
        t = np.arange(size)
        values: List[np.ndarray] = []
        sources: List[np.ndarray] = []
        for delta in NEAR_JUMPS:
            s = t - delta
            valid = (s >= 0) & (s < size)
            s = np.clip(s, 0, size - 1)
            penalty = float(self.theta(np.array(delta)))
            values.append(np.where(valid, h[:, s] - w * penalty, -np.inf))
            sources.append(np.broadcast_to(s, (chains, size)))

        p3 = self.penalties[-1]
        below, below_arg = _prefix_max(h)
        lo = t - FAR_JUMP
        valid = lo >= 0
        lo = np.clip(lo, 0, size - 1)
        values.append(np.where(valid, below[:, lo] - w * p3, -np.inf))
        sources.append(below_arg[:, lo])

        above, above_arg = _suffix_max(h)
        hi = t + FAR_JUMP
        valid = hi < size
        hi = np.clip(hi, 0, size - 1)
        values.append(np.where(valid, above[:, hi] - w * p3, -np.inf))
        sources.append(above_arg[:, hi])

        values = np.stack(values, axis=1)
        sources = np.stack(sources, axis=1)
        best = values.max(axis=1)
        # smallest source label among all maximizers
        argmax = np.where(values == best[:, None], sources, size).min(axis=1)
        return best, argmax

    def backward_step(
        self, i: int, src: np.ndarray, z: np.ndarray, grad: ChainPairwiseGrad
    ) -> None:
        delta = np.arange(src.shape[1])[None] - src
        bins = self.bins(delta)
        theta = np.where(bins < 0, 0.0, self.penalties[np.maximum(bins, 0)])
        w = self.weights[:, i][:, None]
        moved = bins >= 0
        grad.params += np.bincount(
            bins[moved], weights=(-w * z)[moved], minlength=len(JUMP_FIELDS)
        )
        grad.weights[:, i] += (-theta * z).sum(axis=1)


@dataclass(frozen=True, eq=False)
class MatrixChain:
    """Full compatibility scores ``w_i * matrix[s, t]`` along a chain batch.

    ``matrix`` is oriented sender x receiver; ``transposed`` records that it
    is the transpose of the stored parameter.
    """

    matrix: np.ndarray
    weights: np.ndarray
    transposed: bool = False

    def take(self, rows: slice) -> "MatrixChain":
        return replace(self, weights=self.weights[rows])

    def zero_grad(self) -> ChainPairwiseGrad:
        return ChainPairwiseGrad(np.zeros_like(self.matrix), np.zeros_like(self.weights))

    def edge_matrices(self, i: int, labels: int) -> np.ndarray:
        return self.weights[:, i, None, None] * self.matrix[None]

    def max_step(self, h: np.ndarray, i: int) -> Tuple[np.ndarray, np.ndarray]:
        w = self.weights[:, i][:, None, None]
        scores = h[:, :, None] + w * self.matrix[None]
        return scores.max(axis=1), scores.argmax(axis=1)

    def backward_step(
        self, i: int, src: np.ndarray, z: np.ndarray, grad: ChainPairwiseGrad
    ) -> None:
        size = self.matrix.shape[0]
        t = np.arange(size)[None]
        w = self.weights[:, i][:, None]
        flat = (src * size + t).ravel()
        d_matrix = np.bincount(flat, weights=(w * z).ravel(), minlength=size * size)
        d_matrix = d_matrix.reshape(size, size)
        grad.params += d_matrix.T if self.transposed else d_matrix
        grad.weights[:, i] += (self.matrix[src, t] * z).sum(axis=1)


ChainPairwise = Union[JumpChain, MatrixChain]


@dataclass(frozen=True, eq=False)
class ChainView:
    """A batch of equally long chains in processing order.

    Attributes:
        unaries: Scores ``(B, n, L)``; node 0 is the first node of each chain.
        pairwise: Edge scores; edge ``i`` joins nodes ``i`` and ``i + 1``.
        direction: The grid direction the chains were cut along.
    """

    unaries: np.ndarray
    pairwise: ChainPairwise
    direction: Direction = Direction.RIGHT

    @property
    def n_chains(self) -> int:
        return self.unaries.shape[0]

    @property
    def length(self) -> int:
        return self.unaries.shape[1]

    @property
    def labels(self) -> int:
        return self.unaries.shape[2]

    def with_unaries(self, unaries: np.ndarray) -> "ChainView":
        return replace(self, unaries=unaries)

    def take(self, rows: slice) -> "ChainView":
        return replace(self, unaries=self.unaries[rows], pairwise=self.pairwise.take(rows))


@dataclass(frozen=True, eq=False)
class RedistCoeffs:
    """Redistribution coefficients r, one per chain node, each in [0, 1]."""

    r: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.r, dtype=np.float64)
        if np.any(r < 0) or np.any(r > 1) or not np.all(np.isfinite(r)):
            raise InputError(ERROR_COEFFS)
        object.__setattr__(self, "r", r)


def default_redistribution(chains: int, length: int, interior: float = 0.5) -> RedistCoeffs:
    """``interior`` inside each chain, 1 at both chain ends."""
    r = np.full((chains, length), interior)
    r[:, 0] = 1.0
    r[:, -1] = 1.0
    return RedistCoeffs(r)


@dataclass
class ChainGrad:
    """Backward result of one chain batch.

    Attributes:
        d_unary: Gradient in the unaries (or in g-tilde for rDP).
        d_edges: ``z[b, i, t]``, the gradient of edge score
            ``f_{i,i+1}(o_{i+1}(t), t)``; all other edge entries get zero.
        pairwise: ``d_edges`` routed into the active parameterization.
    """

    d_unary: np.ndarray
    d_edges: np.ndarray
    pairwise: ChainPairwiseGrad


def to_chains(array: np.ndarray, direction: Direction) -> np.ndarray:
    """Reorder a grid array ``(H, W, ...)`` into chain order ``(B, n, ...)``."""
    if not direction.horizontal:
        array = array.swapaxes(0, 1)
    if direction.reversed:
        array = array[:, ::-1]
    return np.ascontiguousarray(array)


def from_chains(array: np.ndarray, direction: Direction) -> np.ndarray:
    """Inverse of ``to_chains``."""
    if direction.reversed:
        array = array[:, ::-1]
    if not direction.horizontal:
        array = array.swapaxes(0, 1)
    return np.ascontiguousarray(array)


def chain_pairwise(
    spec: PairwiseSpec,
    direction: Direction,
    height: int,
    width: int,
    undirected: bool = False,
) -> ChainPairwise:
    """Restrict a pairwise model to the chains of one sweep direction.

    Directed scoring uses ``eval_pairwise`` with the sweep direction. In
    undirected mode every edge keeps the score of its forward orientation
    (RIGHT or DOWN, seen from the left or upper pixel) in both sweeps.
    """
    weights = spec.weights
    source = direction.forward if undirected else direction
    if weights is None:
        grid = np.ones((height, width))
    else:
        grid = weights[source]
    w = to_chains(grid, source)[:, :-1]
    if undirected and direction.reversed:
        w = w[:, ::-1]
    w = np.ascontiguousarray(w)

    if isinstance(spec, TruncatedJump):
        return JumpChain(spec.params.penalties, w, flipped=undirected and direction.reversed)
    matrix = spec.matrix.horizontal if direction.horizontal else spec.matrix.vertical
    if direction.reversed:
        return MatrixChain(np.ascontiguousarray(matrix.T), w, transposed=True)
    return MatrixChain(matrix, w)


def grid_chains(
    volume: np.ndarray, spec: PairwiseSpec, direction: Direction, undirected: bool = False
) -> ChainView:
    height, width = volume.shape[:2]
    return ChainView(
        to_chains(volume, direction),
        chain_pairwise(spec, direction, height, width, undirected),
        direction,
    )


def route_pairwise_grad(
    grad: PairwiseGrad,
    chain_grad: ChainPairwiseGrad,
    direction: Direction,
    undirected: bool = False,
) -> None:
    """Add a chain batch's pairwise gradient into the grid-level gradient."""
    if hasattr(grad, "penalties"):
        grad.penalties = grad.penalties + chain_grad.params
    elif direction.horizontal:
        grad.horizontal = grad.horizontal + chain_grad.params
    else:
        grad.vertical = grad.vertical + chain_grad.params
    if grad.weights is None:
        return
    d_weights = chain_grad.weights
    target = direction
    if undirected:
        target = direction.forward
        if direction.reversed:
            d_weights = d_weights[:, ::-1]
    full = np.zeros((d_weights.shape[0], d_weights.shape[1] + 1))
    full[:, :-1] = d_weights
    grad.weights[target] = grad.weights[target] + from_chains(full, target)


def _forward(
    view: ChainView, coeffs: Optional[np.ndarray] = None, normalize: bool = True
) -> Tuple[np.ndarray, np.ndarray]:
    g = view.unaries
    messages = np.zeros_like(g)
    argmaxes = np.zeros(g.shape, dtype=np.int64)
    for i in range(view.length - 1):
        if coeffs is None:
            h = g[:, i] + messages[:, i]
        else:
            h = g[:, i] + coeffs[:, i, None] * messages[:, i]
        values, argmax = view.pairwise.max_step(h, i)
        if normalize:
            values = values - values.max(axis=1, keepdims=True)
        messages[:, i + 1] = values
        argmaxes[:, i + 1] = argmax
    return messages, argmaxes


def _backward(
    view: ChainView,
    argmaxes: np.ndarray,
    d_messages: np.ndarray,
    coeffs: Optional[np.ndarray] = None,
) -> ChainGrad:
    chains, length, labels = d_messages.shape
    d_unary = np.zeros((chains, length, labels))
    d_edges = np.zeros((chains, max(length - 1, 0), labels))
    grad = view.pairwise.zero_grad()
    offsets = (np.arange(chains) * labels)[:, None]
    for i in range(length - 2, -1, -1):
        carried = d_unary[:, i + 1]
        if coeffs is not None:
            carried = coeffs[:, i + 1, None] * carried
        z = d_messages[:, i + 1] + carried
        src = argmaxes[:, i + 1]
        d_unary[:, i] += np.bincount(
            (offsets + src).ravel(), weights=z.ravel(), minlength=chains * labels
        ).reshape(chains, labels)
        d_edges[:, i] = z
        view.pairwise.backward_step(i, src, z, grad)
    return ChainGrad(d_unary, d_edges, grad)


def _merge_grads(parts: List[ChainGrad]) -> ChainGrad:
    if len(parts) == 1:
        return parts[0]
    params = parts[0].pairwise.params.copy()
    for part in parts[1:]:
        params += part.pairwise.params
    return ChainGrad(
        np.concatenate([p.d_unary for p in parts]),
        np.concatenate([p.d_edges for p in parts]),
        ChainPairwiseGrad(params, np.concatenate([p.pairwise.weights for p in parts])),
    )


def dp_forward(
    view: ChainView, normalize: bool = True, workers: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    """Messages ``m`` and maximizers ``o`` along every chain of the batch.

    ``m[:, 0]`` is zero; with ``normalize`` each new message has its maximum
    over labels subtracted.
    """
    parts = run_split(
        lambda rows: _forward(view.take(rows), normalize=normalize),
        view.n_chains,
        workers,
    )
    return (
        np.concatenate([m for m, _ in parts]),
        np.concatenate([o for _, o in parts]),
    )


def dp_backward(
    view: ChainView, argmaxes: np.ndarray, d_messages: np.ndarray, workers: int = 1
) -> ChainGrad:
    parts = run_split(
        lambda rows: _backward(view.take(rows), argmaxes[rows], d_messages[rows]),
        view.n_chains,
        workers,
    )
    return _merge_grads(parts)


def redistributed_unaries(
    unaries: np.ndarray, right_messages: np.ndarray, coeffs: RedistCoeffs
) -> np.ndarray:
    """g-tilde = g + (1 - r) m^R."""
    return unaries + (1.0 - coeffs.r)[..., None] * right_messages


def rdp_forward(
    view: ChainView,
    right_messages: np.ndarray,
    coeffs: RedistCoeffs,
    workers: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """Redistribution DP: ``m_{i+1}(t) = max_s(g~_i(s) + r_i m_i(s) + f(s, t))``.

    Messages are left unnormalized so the recursion stays literal.
    """
    tilde = view.with_unaries(redistributed_unaries(view.unaries, right_messages, coeffs))
    r = coeffs.r
    parts = run_split(
        lambda rows: _forward(tilde.take(rows), coeffs=r[rows], normalize=False),
        view.n_chains,
        workers,
    )
    return (
        np.concatenate([m for m, _ in parts]),
        np.concatenate([o for _, o in parts]),
    )


def rdp_backward(
    view: ChainView,
    argmaxes: np.ndarray,
    coeffs: RedistCoeffs,
    d_messages: np.ndarray,
    workers: int = 1,
) -> ChainGrad:
    """Backprop of ``rdp_forward``; ``d_unary`` is the gradient in g-tilde.

    Split it with ``d_g = d_unary`` and ``d_right = (1 - r) * d_unary``.
    """
    r = coeffs.r
    parts = run_split(
        lambda rows: _backward(view.take(rows), argmaxes[rows], d_messages[rows], r[rows]),
        view.n_chains,
        workers,
    )
    return _merge_grads(parts)


def chain_max_marginals(
    view: ChainView, reverse: ChainView, normalize: bool = True, workers: int = 1
) -> np.ndarray:
    """``g + m_forward + m_backward`` in ``view``'s chain order.

    ``reverse`` must hold the same chains in the opposite order.
    """
    forward, _ = dp_forward(view, normalize, workers)
    backward, _ = dp_forward(reverse, normalize, workers)
    return view.unaries + forward + backward[:, ::-1]
