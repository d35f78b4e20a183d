"""Full-grid inference drivers.

Sweep BP and SGM keep a tape of every chain batch they ran so their
backward passes can replay Backprop DP; TRW-T and TBCA are forward-only.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import softmax

from bp_layer import log
from bp_layer.chain_dp import (
    ChainView,
    RedistCoeffs,
    chain_max_marginals,
    default_redistribution,
    dp_backward,
    dp_forward,
    from_chains,
    grid_chains,
    rdp_forward,
    redistributed_unaries,
    route_pairwise_grad,
    to_chains,
)
from bp_layer.errors import ERROR_ITERATIONS, ERROR_TAPE_MISMATCH, InputError
from bp_layer.grid_model import (
    HORIZONTAL,
    VERTICAL,
    ArgmaxRecord,
    BeliefVolume,
    Direction,
    GradBundle,
    MessageField,
    PairwiseSpec,
    UnaryVolume,
    zero_grad,
)
from bp_layer.listens import Listens

# Summation order of the SGM directions; RIGHT then LEFT reproduces the
# horizontal half of a sweep bit for bit.
SGM_ORDER: Tuple[Direction, ...] = (
    Direction.RIGHT,
    Direction.LEFT,
    Direction.DOWN,
    Direction.UP,
)


def read_beliefs(log_beliefs: np.ndarray) -> BeliefVolume:
    """Per-pixel softmax over labels, shifted by the per-pixel maximum."""
    return BeliefVolume(softmax(np.asarray(log_beliefs, dtype=np.float64), axis=-1))


def softmax_backward(beliefs: np.ndarray, d_beliefs: np.ndarray) -> np.ndarray:
    """Gradient in the log-beliefs: ``B * (dB - sum_t dB_t B_t)``."""
    inner = np.sum(d_beliefs * beliefs, axis=-1, keepdims=True)
    return beliefs * (d_beliefs - inner)


def wta(volume: np.ndarray) -> np.ndarray:
    """Winner-takes-all label map; the smallest label wins ties."""
    return np.argmax(volume, axis=-1)


@dataclass
class ChainTape:
    view: ChainView
    argmaxes: np.ndarray


@dataclass
class SweepTape:
    """Everything sweep_bp_backward needs from the forward pass.

    Attributes:
        spec: The pairwise model of the forward pass.
        a: Unaries of the vertical pass (g plus both horizontal messages).
        log_beliefs: b of the forward pass.
        beliefs: softmax of ``log_beliefs``.
        messages: Grid-ordered messages per travel direction.
        argmaxes: Chain-ordered maximizers per travel direction.
        chains: The chain batches the forward pass ran, per direction.
    """

    spec: PairwiseSpec
    a: np.ndarray
    log_beliefs: np.ndarray
    beliefs: np.ndarray
    messages: MessageField
    argmaxes: ArgmaxRecord
    chains: Dict[Direction, ChainTape] = field(default_factory=dict)
    workers: int = 1


@dataclass
class SgmTape:
    spec: PairwiseSpec
    shape: Tuple[int, int, int]
    messages: MessageField
    chains: Dict[Direction, ChainTape] = field(default_factory=dict)
    workers: int = 1


def _run_direction(
    volume: np.ndarray,
    spec: PairwiseSpec,
    direction: Direction,
    normalize: bool,
    workers: int,
) -> Tuple[np.ndarray, ChainTape]:
    view = grid_chains(volume, spec, direction)
    messages, argmaxes = dp_forward(view, normalize, workers)
    return from_chains(messages, direction), ChainTape(view, argmaxes)


def sweep_bp_forward(
    g: UnaryVolume, spec: PairwiseSpec, normalize: bool = True, workers: int = 1
) -> Tuple[BeliefVolume, SweepTape]:
    """Sweep BP: a horizontal pass on g, then a vertical pass on a.

    Args:
        g: Unary scores.
        spec: Pairwise model, scored in each message's travel direction.
        normalize: Subtract each new message's maximum over labels.
        workers: Threads per chain batch.

    Returns:
        The beliefs softmax(b) and the tape for sweep_bp_backward.
    """
    g.shape.require_inference()
    volume = g.scores
    messages: Dict[Direction, np.ndarray] = {}
    chains: Dict[Direction, ChainTape] = {}

    for direction in HORIZONTAL:
        messages[direction], chains[direction] = _run_direction(
            volume, spec, direction, normalize, workers
        )
    a = volume + messages[Direction.RIGHT] + messages[Direction.LEFT]
    for direction in VERTICAL:
        messages[direction], chains[direction] = _run_direction(
            a, spec, direction, normalize, workers
        )
    b = a + messages[Direction.DOWN] + messages[Direction.UP]
    beliefs = read_beliefs(b)

    tape = SweepTape(
        spec=spec,
        a=a,
        log_beliefs=b,
        beliefs=beliefs.probs,
        messages=MessageField(messages),
        argmaxes=ArgmaxRecord({d: c.argmaxes for d, c in chains.items()}),
        chains=chains,
        workers=workers,
    )
    return beliefs, tape


def _backward_directions(
    chains: Dict[Direction, ChainTape],
    directions: Tuple[Direction, ...],
    d_out: np.ndarray,
    d_in: np.ndarray,
    grad,
    workers: int,
) -> None:
    for direction in directions:
        tape = chains[direction]
        chain_grad = dp_backward(
            tape.view, tape.argmaxes, to_chains(d_out, direction), workers
        )
        d_in += from_chains(chain_grad.d_unary, direction)
        route_pairwise_grad(grad, chain_grad.pairwise, direction)


def sweep_bp_log_backward(tape: SweepTape, d_log_beliefs: np.ndarray) -> GradBundle:
    """Backward pass from a gradient in the log-beliefs b."""
    if d_log_beliefs.shape != tape.a.shape:
        raise AssertionError(
            ERROR_TAPE_MISMATCH.format(actual=d_log_beliefs.shape, expected=tape.a.shape)
        )
    height, width, _ = tape.a.shape
    grad = zero_grad(tape.spec, height, width)
    d_a = np.array(d_log_beliefs, dtype=np.float64)
    _backward_directions(tape.chains, VERTICAL, d_log_beliefs, d_a, grad, tape.workers)
    d_g = d_a.copy()
    _backward_directions(tape.chains, HORIZONTAL, d_a, d_g, grad, tape.workers)
    return GradBundle(d_g, grad)


def sweep_bp_backward(tape: SweepTape, d_beliefs: np.ndarray) -> GradBundle:
    """Gradients of a scalar loss, given its gradient in the beliefs."""
    d_beliefs = np.asarray(d_beliefs, dtype=np.float64)
    if d_beliefs.shape != tape.beliefs.shape:
        raise AssertionError(
            ERROR_TAPE_MISMATCH.format(actual=d_beliefs.shape, expected=tape.beliefs.shape)
        )
    return sweep_bp_log_backward(tape, softmax_backward(tape.beliefs, d_beliefs))


def sgm(
    g: UnaryVolume, spec: PairwiseSpec, normalize: bool = True, workers: int = 1
) -> Tuple[np.ndarray, SgmTape]:
    """Semi-global matching: ``b = g + sum of the four directional messages``."""
    g.shape.require_inference()
    volume = g.scores
    messages: Dict[Direction, np.ndarray] = {}
    chains: Dict[Direction, ChainTape] = {}
    b = volume
    for direction in SGM_ORDER:
        messages[direction], chains[direction] = _run_direction(
            volume, spec, direction, normalize, workers
        )
        b = b + messages[direction]
    return b, SgmTape(spec, volume.shape, MessageField(messages), chains, workers)


def sgm_backward(tape: SgmTape, d_log_beliefs: np.ndarray) -> GradBundle:
    d_log_beliefs = np.asarray(d_log_beliefs, dtype=np.float64)
    if d_log_beliefs.shape != tape.shape:
        raise AssertionError(
            ERROR_TAPE_MISMATCH.format(actual=d_log_beliefs.shape, expected=tape.shape)
        )
    height, width, _ = tape.shape
    grad = zero_grad(tape.spec, height, width)
    d_g = d_log_beliefs.copy()
    _backward_directions(tape.chains, SGM_ORDER, d_log_beliefs, d_g, grad, tape.workers)
    return GradBundle(d_g, grad)


def grid_max_marginals(
    volume: np.ndarray,
    spec: PairwiseSpec,
    forward: Direction,
    undirected: bool = True,
    normalize: bool = True,
    workers: int = 1,
) -> np.ndarray:
    """Exact max-marginals of every chain along ``forward``'s axis, grid ordered."""
    view = grid_chains(volume, spec, forward, undirected)
    reverse = grid_chains(volume, spec, forward.opposite, undirected)
    return from_chains(chain_max_marginals(view, reverse, normalize, workers), forward)


@dataclass
class TrwState:
    iteration: int
    g_h: np.ndarray
    g_v: np.ndarray
    b: np.ndarray


def trw_t(
    g: UnaryVolume,
    spec: PairwiseSpec,
    iters: int,
    workers: int = 1,
    monitor: Optional[Listens] = None,
) -> np.ndarray:
    """Tree-reweighted BP over the row and column trees.

    The unaries are split evenly between the two tree families; every
    iteration moves each family's share towards half of the summed
    max-marginals, which keeps ``g_h + g_v == g``.
    """
    g.shape.require_inference()
    if iters < 1:
        raise InputError(ERROR_ITERATIONS.format(name="TRW-T", iters=iters))
    g_h = 0.5 * g.scores
    g_v = 0.5 * g.scores
    b = g.scores
    for iteration in range(iters):
        b_h = grid_max_marginals(g_h, spec, Direction.RIGHT, workers=workers)
        b_v = grid_max_marginals(g_v, spec, Direction.DOWN, workers=workers)
        b = b_h + b_v
        g_h = g_h + (0.5 * b - b_h)
        g_v = g_v + (0.5 * b - b_v)
        if monitor is not None:
            monitor.status = TrwState(iteration, g_h, g_v, b)
    return b


@dataclass
class TbcaState:
    """Reparametrization after one TBCA pass.

    ``incoming[d]`` holds, at every pixel, the message travelling in
    direction ``d`` into that pixel.
    """

    iteration: int
    direction: Direction
    dual: float
    incoming: Dict[Direction, np.ndarray]


def tbca_upper_bound(
    volume: np.ndarray, spec: PairwiseSpec, incoming: Dict[Direction, np.ndarray]
) -> float:
    """Sum over nodes and edges of their maximal reparametrized score.

    This bounds the best total score of any labeling from above.
    """
    labels = volume.shape[2]
    theta = volume + sum(incoming[d] for d in Direction)
    total = float(theta.max(axis=-1).sum())
    for forward in (Direction.RIGHT, Direction.DOWN):
        view = grid_chains(volume, spec, forward, undirected=True)
        into_sender = to_chains(incoming[forward.opposite], forward)
        into_receiver = to_chains(incoming[forward], forward)
        for i in range(view.length - 1):
            edge = (
                view.pairwise.edge_matrices(i, labels)
                - into_sender[:, i, :, None]
                - into_receiver[:, i + 1, None, :]
            )
            total += float(edge.max(axis=(1, 2)).sum())
    return total


def tbca_readout(
    volume: np.ndarray,
    spec: PairwiseSpec,
    incoming: Dict[Direction, np.ndarray],
    workers: int = 1,
) -> np.ndarray:
    """Row max-marginals under the vertical messages, then column max-marginals.

    Horizontal messages only shift score between row nodes and row edges,
    so reading the rows with the original edges keeps the edge leftovers.
    The vertical messages are taken out again before the column chains,
    which score the original vertical edges.
    """
    vertical = sum(incoming[d] for d in VERTICAL)
    rows = grid_max_marginals(volume + vertical, spec, Direction.RIGHT, workers=workers)
    return grid_max_marginals(rows - vertical, spec, Direction.DOWN, workers=workers)


def _tbca_pass(
    volume: np.ndarray,
    spec: PairwiseSpec,
    incoming: Dict[Direction, np.ndarray],
    forward: Direction,
    coeffs: RedistCoeffs,
    workers: int,
) -> None:
    """Exact block update of every chain along ``forward``'s axis.

    The backward DP on the reparametrized unaries a gives the exact right
    messages; the redistribution DP then hands each node the share
    ``(1 - r) * (a + m_fwd + m_back)`` of the chain optimum and leaves
    every chain edge with maximum score zero.
    """
    reverse = forward.opposite
    across = VERTICAL if forward.horizontal else HORIZONTAL
    a = volume + sum(incoming[d] for d in across)

    back_view = grid_chains(a, spec, reverse, undirected=True)
    m_back, _ = dp_forward(back_view, normalize=False, workers=workers)
    m_back = to_chains(from_chains(m_back, reverse), forward)

    view = grid_chains(a, spec, forward, undirected=True)
    r = coeffs.r[..., None]
    scaled = view.with_unaries(r * view.unaries)
    m_fwd, _ = rdp_forward(scaled, -m_back, coeffs, workers)
    h = redistributed_unaries(scaled.unaries, -m_back, coeffs) + r * m_fwd
    back_in = -h
    back_in[:, -1] = 0.0

    incoming[forward] = from_chains(m_fwd, forward)
    incoming[reverse] = from_chains(back_in, forward)


def tbca(
    g: UnaryVolume,
    spec: PairwiseSpec,
    iters: int,
    coeffs: Optional[Tuple[RedistCoeffs, RedistCoeffs]] = None,
    workers: int = 1,
    monitor: Optional[Listens] = None,
) -> Tuple[np.ndarray, List[float]]:
    """Tree block coordinate ascent, alternating row and column blocks.

    Args:
        g: Unary scores.
        spec: Pairwise model, scored undirected.
        iters: Number of (row pass, column pass) iterations.
        coeffs: Redistribution coefficients for the row chains ``(H, W)``
            and the column chains ``(W, H)``; by default 0.5 inside each
            chain and 1 at its ends.
        workers: Threads per chain batch.
        monitor: Receives a TbcaState after every pass.

    Returns:
        The readout of tbca_readout and the dual trace, one entry per
        pass. Each entry is minus tbca_upper_bound, the sum over nodes of
        the best reparametrized unary plus the sum over edges of the best
        reparametrized pair. The bound holds for every labeling, so
        the trace sits below minus the best total score and never
        decreases. With all pairwise scores zero every entry is minus the
        sum over pixels of max_s g_i(s).
    """
    g.shape.require_inference()
    if iters < 1:
        raise InputError(ERROR_ITERATIONS.format(name="TBCA", iters=iters))
    volume = g.scores
    height, width, _ = volume.shape
    if coeffs is None:
        coeffs = (default_redistribution(height, width), default_redistribution(width, height))
    incoming = {d: np.zeros_like(volume) for d in Direction}
    trace: List[float] = []
    for iteration in range(iters):
        for forward, block in zip((Direction.RIGHT, Direction.DOWN), coeffs):
            _tbca_pass(volume, spec, incoming, forward, block, workers)
            dual = -tbca_upper_bound(volume, spec, incoming)
            trace.append(dual)
            log.debug(f"TBCA iteration {iteration} {forward.name} pass: dual {dual:.6f}")
            if monitor is not None:
                monitor.status = TbcaState(
                    iteration, forward, dual, {d: v.copy() for d, v in incoming.items()}
                )
    return tbca_readout(volume, spec, incoming, workers), trace
