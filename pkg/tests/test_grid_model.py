import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from pytest import mark, raises

from bp_layer.errors import InputError
from bp_layer.grid_model import (
    CompatMatrix,
    Direction,
    EdgeWeights,
    FullMatrix,
    JumpGrad,
    JumpParams,
    MatrixGrad,
    Temperature,
    TruncatedJump,
    UnaryVolume,
    apply_temperature,
    descend,
    eval_pairwise,
    image_edge_weights,
    jump_bins,
    project_nonnegative,
    with_weights,
    zero_grad,
)

JUMP = TruncatedJump(JumpParams(p1_pos=1, p1_neg=1, p2_pos=2, p2_neg=2, p3=5))


@mark.parametrize(
    "s, t, expected",
    [(3, 3, 0.0), (3, 4, -1.0), (4, 3, -1.0), (0, 7, -5.0), (5, 3, -2.0)],
)
def test_jump_scores(s, t, expected):
    assert eval_pairwise(JUMP, (0, 0), Direction.RIGHT, s, t) == expected


def test_jump_scores_depend_only_on_the_jump():
    spec = TruncatedJump(JumpParams(p1_pos=0.1, p1_neg=0.2, p2_pos=0.3, p2_neg=0.4, p3=0.9))
    for delta in range(-6, 7):
        scores = {
            eval_pairwise(spec, (0, 0), Direction.DOWN, s, s + delta)
            for s in range(0, 10)
            if s + delta >= 0
        }
        assert len(scores) == 1


def test_asymmetric_jump_penalties():
    spec = TruncatedJump(JumpParams(p1_pos=0.1, p1_neg=0.2, p2_pos=0.3, p2_neg=0.4, p3=0.9))
    assert eval_pairwise(spec, (0, 0), Direction.RIGHT, 2, 3) == -0.1
    assert eval_pairwise(spec, (0, 0), Direction.RIGHT, 3, 2) == -0.2
    assert eval_pairwise(spec, (0, 0), Direction.RIGHT, 2, 4) == -0.3
    assert eval_pairwise(spec, (0, 0), Direction.RIGHT, 4, 2) == -0.4


def test_matrix_opposite_directions_transpose():
    rng = np.random.default_rng(0)
    vertical = rng.uniform(0, 1, (3, 3))
    vertical[1, 2] = 0.3
    spec = FullMatrix(CompatMatrix(rng.uniform(0, 1, (3, 3)), vertical))
    assert eval_pairwise(spec, (0, 0), Direction.DOWN, 1, 2) == 0.3
    assert eval_pairwise(spec, (0, 0), Direction.UP, 1, 2) == vertical[2, 1]
    for s in range(3):
        for t in range(3):
            assert eval_pairwise(spec, (0, 0), Direction.RIGHT, s, t) == eval_pairwise(
                spec, (0, 0), Direction.LEFT, t, s
            )


def test_per_pixel_weights_scale_scores():
    weights = EdgeWeights.ones(2, 3)
    weights.right[1, 2] = 0.5
    spec = with_weights(JUMP, weights)
    assert eval_pairwise(spec, (1, 2), Direction.RIGHT, 0, 7) == -2.5
    assert eval_pairwise(spec, (1, 2), Direction.LEFT, 0, 7) == -5.0


@mark.parametrize("s, t", [(-1, 0), (0, 3)])
def test_labels_out_of_range_violate_the_contract(s, t):
    spec = FullMatrix(CompatMatrix(np.eye(3), np.eye(3)))
    with raises(AssertionError):
        eval_pairwise(spec, (0, 0), Direction.RIGHT, s, t)


def test_pixel_out_of_range_violates_the_contract():
    with raises(AssertionError):
        eval_pairwise(with_weights(JUMP, EdgeWeights.ones(2, 2)), (2, 0), Direction.DOWN, 0, 1)


def test_jump_bins():
    assert_array_equal(jump_bins(np.arange(-4, 5)), [4, 4, 3, 1, -1, 0, 2, 4, 4])


def test_apply_temperature():
    assert_allclose(apply_temperature(np.array([[[0.1, 0.9]]]), Temperature(2.0)).scores, [[[0.2, 1.8]]])
    q = np.random.default_rng(1).uniform(size=(2, 2, 3))
    assert_array_equal(apply_temperature(q, Temperature(1.0)).scores, q)


@mark.parametrize("value", [0.0, -1.0, float("nan"), float("inf")])
def test_temperature_must_be_positive(value):
    with raises(InputError):
        Temperature(value)


def test_unaries_must_be_finite_volumes():
    with raises(InputError):
        UnaryVolume(np.array([[[0.0, np.nan]]]))
    with raises(InputError):
        UnaryVolume(np.zeros((2, 2)))


def test_inference_needs_two_labels():
    with raises(InputError):
        UnaryVolume(np.zeros((2, 2, 1))).shape.require_inference()


def test_negative_parameters_are_rejected():
    with raises(InputError):
        JumpParams(p1_pos=-0.1)
    with raises(InputError):
        CompatMatrix(-np.eye(2), np.eye(2))
    with raises(InputError):
        EdgeWeights(*(np.full((2, 2), -1.0) for _ in range(4)))


def test_descend_projects_onto_nonnegative_scores():
    spec = TruncatedJump(JumpParams(p1_pos=0.1, p1_neg=0.5, p2_pos=0.2, p2_neg=0.2, p3=1.0))
    grad = JumpGrad(np.array([1.0, -1.0, 0.0, 0.0, 0.5]))
    stepped = descend(spec, grad, 0.5)
    assert_allclose(stepped.params.penalties, [0.0, 1.0, 0.2, 0.2, 0.75])

    matrix = FullMatrix(CompatMatrix(np.eye(2), np.eye(2)))
    grad = MatrixGrad(np.full((2, 2), 4.0), np.zeros((2, 2)))
    stepped = descend(matrix, grad, 0.5)
    assert_array_equal(stepped.matrix.horizontal, np.zeros((2, 2)))
    assert_array_equal(stepped.matrix.vertical, np.eye(2))


def test_projection_clamps_scores_and_keeps_weights():
    weights = EdgeWeights(*(np.full((2, 3), 0.5) for _ in range(4)))
    spec = with_weights(JUMP, weights)
    projected = project_nonnegative(spec, np.array([-1.0, 0.3, -0.2, 0.4, 2.0]))
    assert_array_equal(projected.params.penalties, [0.0, 0.3, 0.0, 0.4, 2.0])
    assert projected.weights is weights

    matrix = FullMatrix(CompatMatrix(np.eye(2), np.eye(2)))
    projected = project_nonnegative(matrix, (np.array([[1.0, -2.0], [0.5, 1.0]]), -np.eye(2)))
    assert_array_equal(projected.matrix.horizontal, [[1.0, 0.0], [0.5, 1.0]])
    assert_array_equal(projected.matrix.vertical, np.zeros((2, 2)))

def test_gradients_accumulate():
    spec = with_weights(JUMP, EdgeWeights.ones(2, 2))
    total = zero_grad(spec, 2, 2)
    part = zero_grad(spec, 2, 2)
    part.penalties[0] = 1.0
    part.weights[Direction.UP][0, 1] = 2.0
    total += part
    total += part
    assert total.penalties[0] == 2.0
    assert total.weights[Direction.UP][0, 1] == 4.0


def test_image_edge_weights():
    image = np.array([[0.0, 0.5, 0.5], [0.0, 0.0, 1.0]])
    weights = image_edge_weights(image, beta=2.0)
    assert weights.right[0, 0] == np.exp(-1.0)
    assert weights.left[0, 1] == np.exp(-1.0)
    assert weights.down[0, 2] == np.exp(-1.0)
    assert weights.up[1, 1] == np.exp(-1.0)
    assert weights.right[0, 1] == 1.0
    # edges that leave the grid keep weight one
    assert weights.right[0, 2] == 1.0
    assert_array_equal(image_edge_weights(np.ones((3, 3))).down, np.ones((3, 3)))


def test_direction_geometry():
    assert Direction.LEFT.reversed and Direction.UP.reversed
    assert Direction.LEFT.forward is Direction.RIGHT
    assert Direction.UP.forward is Direction.DOWN
    assert Direction.DOWN.opposite is Direction.UP
    assert Direction.RIGHT.step == (0, 1)
