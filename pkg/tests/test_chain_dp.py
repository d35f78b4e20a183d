from dataclasses import replace

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from pytest import mark, raises

from bp_layer.chain_dp import (
    ChainView,
    JumpChain,
    MatrixChain,
    RedistCoeffs,
    default_redistribution,
    dp_backward,
    dp_forward,
    from_chains,
    rdp_backward,
    rdp_forward,
    to_chains,
)
from bp_layer.errors import InputError
from bp_layer.grid_model import Direction, JumpParams, TruncatedJump
from bp_layer.inference import grid_max_marginals
from bp_layer.oracle import (
    brute_max_marginals,
    chain_edges,
    fd_gradcheck,
    grid_edges,
    max_chain_messages,
    perturb_ties,
)

POTTS = np.ones(5)


def potts_chain(g) -> ChainView:
    g = np.asarray(g, dtype=np.float64)[None]
    return ChainView(g, JumpChain(POTTS, np.ones((1, g.shape[1] - 1))))


def test_single_node_gives_zero_message():
    messages, _ = dp_forward(potts_chain([[0.3, 1.2]]), normalize=False)
    assert_array_equal(messages, np.zeros((1, 1, 2)))


def test_hand_computed_messages_and_argmaxes():
    messages, argmaxes = dp_forward(potts_chain([[0, 2], [1, 0], [0, 0]]), normalize=False)
    assert_array_equal(messages[0], [[0, 0], [1, 2], [2, 2]])
    assert_array_equal(argmaxes[0, 1:], [[1, 1], [0, 1]])


def test_hand_computed_backward():
    view = potts_chain([[0, 2], [1, 0], [0, 0]])
    _, argmaxes = dp_forward(view, normalize=False)
    d_messages = np.zeros((1, 3, 2))
    d_messages[0, 2, 0] = 1.0
    grad = dp_backward(view, argmaxes, d_messages)
    assert_array_equal(grad.d_unary[0], [[0, 1], [1, 0], [0, 0]])
    # z lands on f(1, 0) of edge 0 (a -1 jump) and f(0, 0) of edge 1
    assert_array_equal(grad.d_edges[0], [[1, 0], [1, 0]])
    assert_array_equal(grad.pairwise.params, [0, -1, 0, 0, 0])
    assert_array_equal(grad.pairwise.weights, [[-1, 0]])


def test_zero_gradient_in_gives_zero_gradient_out():
    view = potts_chain([[0, 2], [1, 0], [0, 0]])
    _, argmaxes = dp_forward(view)
    grad = dp_backward(view, argmaxes, np.zeros((1, 3, 2)))
    assert not grad.d_unary.any()
    assert not grad.pairwise.params.any()


def test_zero_pairwise_messages_are_flat():
    g = np.array([[[0.5, -1.0, 2.0], [0.0, 0.25, 0.1], [1.0, 1.0, 1.0]]])
    view = ChainView(g, JumpChain(np.zeros(5), np.ones((1, 2))))
    messages, _ = dp_forward(view, normalize=False)
    assert_allclose(messages[0, 1], [2.0, 2.0, 2.0])
    assert_allclose(messages[0, 2], [2.25, 2.25, 2.25])


def test_normalized_messages_peak_at_zero():
    rng = np.random.default_rng(3)
    view = ChainView(rng.normal(size=(4, 6, 5)), JumpChain(rng.uniform(0, 1, 5), np.ones((4, 5))))
    messages, _ = dp_forward(view)
    assert_allclose(messages[:, 1:].max(axis=-1), 0.0)


def test_constant_shift_of_one_node_shifts_later_messages():
    rng = np.random.default_rng(4)
    g = rng.normal(size=(2, 5, 4))
    view = ChainView(g, JumpChain(rng.uniform(0, 1, 5), np.ones((2, 4))))
    shifted = g.copy()
    shifted[:, 1] += 0.75
    before, _ = dp_forward(view, normalize=False)
    after, _ = dp_forward(view.with_unaries(shifted), normalize=False)
    assert_allclose(after[:, 2:] - before[:, 2:], 0.75)
    assert_array_equal(after[:, :2], before[:, :2])


@settings(max_examples=40, deadline=None)
@given(
    labels=st.integers(min_value=1, max_value=12),
    length=st.integers(min_value=1, max_value=6),
    seed=st.integers(min_value=0, max_value=2**16),
)
def test_jump_shortcut_matches_dense_scores(labels, length, seed):
    """The shifted-window maxima equal the dense max, ties included."""
    rng = np.random.default_rng(seed)
    penalties = rng.integers(0, 4, 5).astype(np.float64)
    g = rng.integers(-3, 4, (3, length, labels)).astype(np.float64)
    weights = np.ones((3, max(length - 1, 0)))
    jump = ChainView(g, JumpChain(penalties, weights))
    s = np.arange(labels)
    dense_matrix = -JumpChain(penalties, weights).theta(s[None, :] - s[:, None])
    dense = ChainView(g, MatrixChain(dense_matrix, weights))
    jump_messages, jump_argmaxes = dp_forward(jump, normalize=False)
    dense_messages, dense_argmaxes = dp_forward(dense, normalize=False)
    assert_array_equal(jump_messages, dense_messages)
    assert_array_equal(jump_argmaxes, dense_argmaxes)
    assert_array_equal(jump_messages, max_chain_messages(jump))


@mark.parametrize("workers", [1, 3])
def test_split_batches_match_single_batch(workers):
    rng = np.random.default_rng(5)
    pairwise = MatrixChain(rng.uniform(0, 1, (4, 4)), rng.uniform(0.5, 1.5, (7, 4)))
    view = ChainView(rng.normal(size=(7, 5, 4)), pairwise)
    messages, argmaxes = dp_forward(view)
    split_messages, split_argmaxes = dp_forward(view, workers=workers)
    assert_array_equal(messages, split_messages)
    assert_array_equal(argmaxes, split_argmaxes)
    d = rng.normal(size=messages.shape)
    whole = dp_backward(view, argmaxes, d)
    split = dp_backward(view, argmaxes, d, workers=workers)
    assert_allclose(whole.d_unary, split.d_unary)
    assert_allclose(whole.pairwise.params, split.pairwise.params)


@mark.parametrize("seed", range(4))
@mark.parametrize("model", ["jump", "matrix"])
def test_dp_backward_matches_finite_differences(seed, model):
    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.5, 1.5, (2, 4))
    g = perturb_ties(rng.normal(size=(2, 5, 4)), rng)
    if model == "jump":
        pairwise = JumpChain(rng.uniform(0.1, 1.0, 5), weights)
    else:
        pairwise = MatrixChain(rng.uniform(0, 1, (4, 4)), weights)
    view = ChainView(g, pairwise)
    upstream = rng.normal(size=g.shape)
    _, argmaxes = dp_forward(view, normalize=False)
    grad = dp_backward(view, argmaxes, upstream)

    def total(unaries):
        return float(np.sum(upstream * dp_forward(view.with_unaries(unaries), normalize=False)[0]))

    def total_in_weights(w):
        changed = ChainView(g, replace(pairwise, weights=w))
        return float(np.sum(upstream * dp_forward(changed, normalize=False)[0]))

    assert fd_gradcheck(total, g, grad.d_unary, step=1e-5) < 1e-4
    assert fd_gradcheck(total_in_weights, weights, grad.pairwise.weights, step=1e-5) < 1e-4


def test_rdp_with_unit_coefficients_is_plain_dp():
    rng = np.random.default_rng(6)
    view = ChainView(rng.normal(size=(2, 5, 3)), JumpChain(rng.uniform(0, 1, 5), np.ones((2, 4))))
    coeffs = RedistCoeffs(np.ones((2, 5)))
    right = rng.normal(size=(2, 5, 3))
    messages, argmaxes = rdp_forward(view, right, coeffs)
    plain, plain_argmaxes = dp_forward(view, normalize=False)
    assert_allclose(messages, plain)
    assert_array_equal(argmaxes, plain_argmaxes)
    d = rng.normal(size=messages.shape)
    assert_allclose(
        rdp_backward(view, argmaxes, coeffs, d).d_unary,
        dp_backward(view, plain_argmaxes, d).d_unary,
    )


def test_rdp_with_zero_coefficients_does_not_recurse():
    rng = np.random.default_rng(7)
    g = rng.normal(size=(1, 4, 3))
    right = rng.normal(size=(1, 4, 3))
    view = ChainView(g, MatrixChain(rng.uniform(0, 1, (3, 3)), np.ones((1, 3))))
    messages, _ = rdp_forward(view, right, RedistCoeffs(np.zeros((1, 4))))
    for i in range(3):
        expected = (g[0, i] + right[0, i])[:, None] + view.pairwise.matrix
        assert_allclose(messages[0, i + 1], expected.max(axis=0))


def test_rdp_follows_its_recurrence():
    g = np.array([[[0.0, 2.0], [1.0, 0.0], [0.0, 0.0]]])
    view = potts_chain(g[0])
    reverse = potts_chain(g[0, ::-1])
    right = dp_forward(reverse, normalize=False)[0][:, ::-1]
    r = np.full((1, 3), 0.5)
    messages, _ = rdp_forward(view, right, RedistCoeffs(r))
    f = np.array([[0.0, -1.0], [-1.0, 0.0]])
    expected = np.zeros((3, 2))
    for i in range(2):
        h = g[0, i] + 0.5 * right[0, i] + 0.5 * expected[i]
        expected[i + 1] = (h[:, None] + f).max(axis=0)
    assert_allclose(messages[0], expected)


@mark.parametrize("seed", range(3))
def test_rdp_backward_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    g = perturb_ties(rng.normal(size=(2, 4, 3)), rng)
    view = ChainView(g, JumpChain(rng.uniform(0.1, 1.0, 5), rng.uniform(0.5, 1.5, (2, 3))))
    right = rng.normal(size=g.shape)
    coeffs = RedistCoeffs(rng.uniform(0, 1, (2, 4)))
    _, argmaxes = rdp_forward(view, right, coeffs)
    upstream = rng.normal(size=g.shape)
    grad = rdp_backward(view, argmaxes, coeffs, upstream)

    def total(unaries):
        return float(np.sum(upstream * rdp_forward(view.with_unaries(unaries), right, coeffs)[0]))

    assert fd_gradcheck(total, g, grad.d_unary, step=1e-5) < 1e-4


def test_coefficients_outside_unit_interval_are_rejected():
    with raises(InputError):
        RedistCoeffs(np.array([0.5, 1.5]))


def test_default_redistribution_pins_chain_ends():
    r = default_redistribution(2, 4).r
    assert_array_equal(r, [[1, 0.5, 0.5, 1], [1, 0.5, 0.5, 1]])


@mark.parametrize("direction", list(Direction))
def test_chain_order_round_trips(direction):
    grid = np.arange(24.0).reshape(3, 4, 2)
    chains = to_chains(grid, direction)
    assert chains.shape[0] == (3 if direction.horizontal else 4)
    assert_array_equal(from_chains(chains, direction), grid)


def test_to_chains_orders_left_sweeps_right_to_left():
    grid = np.arange(6.0).reshape(2, 3)
    assert_array_equal(to_chains(grid, Direction.LEFT), [[2, 1, 0], [5, 4, 3]])
    assert_array_equal(to_chains(grid, Direction.UP), [[3, 0], [4, 1], [5, 2]])


@mark.parametrize("seed", range(5))
def test_undirected_row_max_marginals_are_exact(seed):
    """Both sweeps of an undirected row score each edge the same way."""
    rng = np.random.default_rng(seed)
    width, labels = 5, 4
    spec = TruncatedJump(JumpParams.from_penalties(rng.uniform(0.1, 2.0, 5)))
    g = rng.normal(size=(1, width, labels))
    got = grid_max_marginals(g, spec, Direction.RIGHT, normalize=False)[0]
    expected = brute_max_marginals(g[0], grid_edges(spec, 1, width, labels))
    assert_allclose(got, expected, atol=1e-12)


def test_chain_edges_reproduce_messages():
    rng = np.random.default_rng(8)
    pairwise = JumpChain(rng.uniform(0, 1, 5), rng.uniform(0.5, 1.5, (1, 3)))
    view = ChainView(rng.normal(size=(1, 4, 3)), pairwise)
    messages, _ = dp_forward(view, normalize=False)
    # the last node's max-marginal with only forward messages equals g + m there
    expected = brute_max_marginals(view.unaries[0], chain_edges(view))[-1]
    assert_allclose(view.unaries[0, -1] + messages[0, -1], expected)
