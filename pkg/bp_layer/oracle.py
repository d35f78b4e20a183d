"""Slow, independent references for testing the fast kernels.

Everything here trades speed for obviousness: labelings are enumerated,
scores come from the scalar ``eval_pairwise`` and derivatives from
central differences.
"""

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from bp_layer import log
from bp_layer.chain_dp import ChainView
from bp_layer.errors import (
    ERROR_ENUMERATION_TOO_LARGE,
    ERROR_NON_FINITE_EVALUATION,
    InputError,
)
from bp_layer.grid_model import Direction, PairwiseSpec, eval_pairwise

ENUMERATION_LIMIT: int = 10**6
TIE_NOISE: float = 1e-3

# (node i, node j, scores[x_i, x_j])
Edge = Tuple[int, int, np.ndarray]


def perturb_ties(g: np.ndarray, rng: np.random.Generator, scale: float = TIE_NOISE) -> np.ndarray:
    """Add uniform ``[0, scale]`` noise so every argmax is unique almost surely."""
    return g + rng.uniform(0.0, scale, size=np.shape(g))


def brute_max_marginals(
    unaries: np.ndarray, edges: Sequence[Edge], limit: int = ENUMERATION_LIMIT
) -> np.ndarray:
    """Max-marginals of a small graph by enumerating every labeling.

    Args:
        unaries: ``(n, L)`` node scores.
        edges: Edge score tables.
        limit: Largest number of labelings to enumerate.

    Returns:
        ``(n, L)`` array; entry ``[i, s]`` is the best total score among
        labelings with ``x_i = s``.

    Raises:
        InputError: ``L ** n`` exceeds ``limit``.
    """
    unaries = np.asarray(unaries, dtype=np.float64)
    nodes, labels = unaries.shape
    count = labels**nodes
    if count > limit:
        raise InputError(ERROR_ENUMERATION_TOO_LARGE.format(count=count, limit=limit))
    labelings = np.stack(np.unravel_index(np.arange(count), (labels,) * nodes), axis=1)
    scores = unaries[np.arange(nodes), labelings].sum(axis=1)
    for i, j, table in edges:
        scores = scores + table[labelings[:, i], labelings[:, j]]
    result = np.full((nodes, labels), -np.inf)
    for i in range(nodes):
        np.maximum.at(result[i], labelings[:, i], scores)
    return result


def _directed_table(
    spec: PairwiseSpec, sender: Tuple[int, int], direction: Direction, labels: int
) -> np.ndarray:
    return np.array(
        [[eval_pairwise(spec, sender, direction, s, t) for t in range(labels)] for s in range(labels)]
    )


def cross_tree_edges(
    spec: PairwiseSpec, height: int, width: int, labels: int, root: Tuple[int, int]
) -> List[Edge]:
    """The tree one sweep-BP belief is exact on, with edges scored toward the root.

    The tree holds the root's column plus every row, each row hanging off
    the pixel it shares with that column. Nodes are numbered ``y * width + x``
    and every edge table is indexed ``[x_sender, x_receiver]``.
    """
    root_y, root_x = root
    edges: List[Edge] = []
    for y in range(height):
        for x in range(width - 1):
            if x + 1 <= root_x:
                sender, receiver, direction = (y, x), (y, x + 1), Direction.RIGHT
            else:
                sender, receiver, direction = (y, x + 1), (y, x), Direction.LEFT
            edges.append(
                (
                    sender[0] * width + sender[1],
                    receiver[0] * width + receiver[1],
                    _directed_table(spec, sender, direction, labels),
                )
            )
    for y in range(height - 1):
        if y + 1 <= root_y:
            sender, receiver, direction = (y, root_x), (y + 1, root_x), Direction.DOWN
        else:
            sender, receiver, direction = (y + 1, root_x), (y, root_x), Direction.UP
        edges.append(
            (
                sender[0] * width + sender[1],
                receiver[0] * width + receiver[1],
                _directed_table(spec, sender, direction, labels),
            )
        )
    return edges


def grid_edges(spec: PairwiseSpec, height: int, width: int, labels: int) -> List[Edge]:
    """All grid edges scored in their forward orientation (RIGHT or DOWN)."""
    edges: List[Edge] = []
    for y in range(height):
        for x in range(width):
            if x + 1 < width:
                table = _directed_table(spec, (y, x), Direction.RIGHT, labels)
                edges.append((y * width + x, y * width + x + 1, table))
            if y + 1 < height:
                table = _directed_table(spec, (y, x), Direction.DOWN, labels)
                edges.append((y * width + x, (y + 1) * width + x, table))
    return edges


def chain_edges(view: ChainView, chain: int = 0) -> List[Edge]:
    """Dense edge tables of one chain of a batch, nodes in chain order."""
    return [
        (i, i + 1, view.pairwise.edge_matrices(i, view.labels)[chain])
        for i in range(view.length - 1)
    ]


def smax(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Smooth maximum ``log sum exp``."""
    return logsumexp(values, axis=axis)


def smax_chain_messages(view: ChainView) -> np.ndarray:
    """Chain messages with every max over the sender label replaced by smax."""
    g = view.unaries
    messages = np.zeros_like(g)
    for i in range(view.length - 1):
        table = view.pairwise.edge_matrices(i, view.labels)
        h = g[:, i] + messages[:, i]
        messages[:, i + 1] = smax(h[:, :, None] + table, axis=1)
    return messages


def max_chain_messages(view: ChainView) -> np.ndarray:
    """Unnormalized max-product messages from the dense edge tables."""
    g = view.unaries
    messages = np.zeros_like(g)
    for i in range(view.length - 1):
        table = view.pairwise.edge_matrices(i, view.labels)
        h = g[:, i] + messages[:, i]
        messages[:, i + 1] = (h[:, :, None] + table).max(axis=1)
    return messages


def _central_difference(
    function: Callable[[np.ndarray], float], point: np.ndarray, direction: np.ndarray, step: float
) -> float:
    upper = function(point + step * direction)
    lower = function(point - step * direction)
    if not (np.isfinite(upper) and np.isfinite(lower)):
        raise FloatingPointError(ERROR_NON_FINITE_EVALUATION)
    return (upper - lower) / (2.0 * step)


def fd_gradcheck(
    function: Callable[[np.ndarray], float],
    point: np.ndarray,
    gradient: np.ndarray,
    directions: Optional[Sequence[np.ndarray]] = None,
    step: float = 1e-4,
    count: int = 8,
    seed: int = 0,
    kink_guard: bool = True,
) -> float:
    """Worst relative error between analytic and central-difference slopes.

    Args:
        function: Scalar function of an array.
        point: Where to check.
        gradient: Analytic gradient of ``function`` at ``point``.
        directions: Directions to test; ``count`` random unit directions
            when omitted.
        step: Central-difference step.
        count: Number of random directions.
        seed: Seed of the random directions.
        kink_guard: Skip directions whose stencil crosses a kink of a
            piecewise smooth function, detected by the slopes at ``step``
            and ``step / 2`` disagreeing with each other.

    Returns:
        The largest ``|fd - analytic| / max(|fd|, |analytic|, 1e-6)``, or
        infinity when the kink guard skipped every direction.

    Raises:
        FloatingPointError: A perturbed evaluation is not finite.
    """
    point = np.asarray(point, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    if directions is None:
        rng = np.random.default_rng(seed)
        directions = []
        for _ in range(count):
            direction = rng.normal(size=point.shape)
            directions.append(direction / np.linalg.norm(direction))

    worst = 0.0
    skipped = 0
    for direction in directions:
        analytic = float(np.sum(gradient * direction))
        numeric = _central_difference(function, point, direction, step)
        if kink_guard:
            finer = _central_difference(function, point, direction, step / 2)
            if abs(finer - numeric) > 1e-6 * max(abs(finer), abs(numeric), 1.0):
                skipped += 1
                continue
        error = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, error)
    if len(directions) > 0 and skipped == len(directions):
        log.warning("Every tested direction crossed a kink; nothing was compared")
        return float("inf")
    if skipped:
        log.debug(f"Skipped {skipped} of {len(directions)} directions crossing a kink")
    return worst
