import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from pytest import mark, raises

from bp_layer.config import ModelParams, TrainConfig
from bp_layer.errors import InputError
from bp_layer.grid_model import CompatMatrix, FullMatrix
from bp_layer.learning import metrics
from bp_layer.pipeline import run_flow, run_segmentation, run_stereo, stereo_sample
from bp_layer.synthetic import flow_scene, segmentation_scene, stereo_scene


def test_stereo_scene_is_consistent():
    scene = stereo_scene(8, 16, 5, seed=1)
    ys, xs = np.nonzero(np.isfinite(scene.disparity))
    d = scene.disparity[ys, xs].astype(int)
    assert_array_equal(scene.left[ys, xs], scene.right[ys, xs - d])
    assert (np.isnan(scene.disparity[:, 0]) | (scene.disparity[:, 0] == 0)).all()
    assert np.nanmax(scene.disparity) <= 5


def test_blurred_texture_keeps_the_disparity_and_the_gray_range():
    sharp = stereo_scene(32, 32, 7, seed=5)
    smooth = stereo_scene(32, 32, 7, seed=5, blur=2.0)
    assert_array_equal(smooth.disparity, sharp.disparity)
    assert smooth.right.min() == 0 and smooth.right.max() == 255
    smooth_step = np.abs(np.diff(smooth.right, axis=1)).mean()
    sharp_step = np.abs(np.diff(sharp.right, axis=1)).mean()
    assert smooth_step < 0.5 * sharp_step


def test_flow_scene_is_consistent():
    scene = flow_scene(10, 10, (2, -1), seed=2)
    assert_array_equal(scene.image0[0:8, 1:10], scene.image1[2:10, 0:9])
    assert np.isnan(scene.flow[9, 5]).all()
    assert_array_equal(scene.flow[0, 5], [2, -1])


def test_segmentation_scene_noise_rate():
    scene = segmentation_scene(32, 32, 4, seed=3, noise=0.0)
    assert_array_equal(scene.noisy, scene.truth)
    assert_allclose(scene.probs.sum(axis=-1), 1.0)


@mark.parametrize("algo", ["bp", "sgm", "wta"])
def test_stereo_recovers_a_clean_scene(algo):
    scene = stereo_scene(16, 32, 7, seed=0)
    cfg = TrainConfig(levels=2, max_disp=7, algo=algo)
    result = run_stereo(scene.left, scene.right, ModelParams.default_jump(2), cfg)
    assert result.values.shape == (16, 32)
    assert result.beliefs.shape == (16, 32, 8)
    assert (result.values >= 0).all() and (result.values <= 7).all()
    assert metrics(result.values, scene.disparity)["bad3"] < 30.0


def test_stereo_rejects_bad_inputs():
    scene = stereo_scene(16, 32, 6, seed=0)
    with raises(InputError):
        run_stereo(scene.left, scene.right, ModelParams.default_jump(3), TrainConfig(levels=3, max_disp=2))
    with raises(InputError):
        run_stereo(scene.left, scene.right[:, :16], ModelParams.default_jump(2), TrainConfig(levels=2, max_disp=7))


def test_stereo_accepts_odd_sizes_and_label_counts():
    scene = stereo_scene(15, 30, 6, seed=0)
    cfg = TrainConfig(levels=3, max_disp=6)
    result = run_stereo(scene.left, scene.right, ModelParams.default_jump(3), cfg)
    assert result.values.shape == (15, 30)
    assert result.beliefs.shape == (15, 30, 7)
    sample = stereo_sample(scene.left, scene.right, scene.disparity, cfg)
    assert [q.shape for q in sample.q_levels] == [(4, 8, 2), (8, 15, 4), (15, 30, 7)]
    assert [t.shape for t in sample.targets] == [(4, 8), (8, 15), (15, 30)]


def test_stereo_needs_a_model_per_level():
    scene = stereo_scene(16, 32, 7, seed=0)
    with raises(InputError):
        run_stereo(scene.left, scene.right, ModelParams.default_jump(1), TrainConfig(levels=2, max_disp=7))


def test_stereo_sample_levels():
    scene = stereo_scene(16, 32, 7, seed=4)
    sample = stereo_sample(scene.left, scene.right, scene.disparity, TrainConfig(levels=2, max_disp=7))
    assert [q.shape for q in sample.q_levels] == [(8, 16, 4), (16, 32, 8)]
    assert [t.shape for t in sample.targets] == [(8, 16), (16, 32)]


def test_flow_wta_finds_the_displacement():
    scene = flow_scene(16, 16, (1, -2), seed=5)
    rows, cols = run_flow(scene.image0, scene.image1, 4, ModelParams.default_jump(1), TrainConfig(levels=1, algo="wta"))
    assert_array_equal(rows.values[6:10, 6:10], 1.0)
    assert_array_equal(cols.values[6:10, 6:10], -2.0)


def test_flow_hierarchy_shapes():
    scene = flow_scene(16, 16, (1, 1), seed=6)
    rows, cols = run_flow(scene.image0, scene.image1, 4, ModelParams.default_jump(2), TrainConfig(levels=2))
    assert rows.beliefs.shape == cols.beliefs.shape == (16, 16, 9)
    assert (np.abs(rows.values) <= 4).all()
    with raises(InputError):
        run_flow(scene.image0, scene.image1, 3, ModelParams.default_jump(2), TrainConfig(levels=2))


def test_segmentation_removes_label_noise():
    scene = segmentation_scene(24, 24, 3, seed=7, noise=0.2)
    spec = FullMatrix(CompatMatrix(2 * np.eye(3), 2 * np.eye(3)))
    result = run_segmentation(scene.probs, spec)
    before = np.mean(scene.noisy != scene.truth)
    after = np.mean(result.values != scene.truth)
    assert after < before


def test_segmentation_checks_shapes():
    probs = np.full((4, 4, 3), 1.0 / 3)
    with raises(InputError):
        run_segmentation(probs, FullMatrix(CompatMatrix(np.eye(2), np.eye(2))))
    with raises(InputError):
        run_segmentation(probs, FullMatrix(CompatMatrix(np.eye(3), np.eye(3))), image=np.zeros((4, 5)))
