import numpy as np
import pytest

from pcalign import heatmap
from pcalign.geometry import CameraIntrinsics, PointCloud, PoseParams


def test_identical_images_are_blue(rng):
    img = rng.uniform(size=(4, 5, 3))
    out = heatmap.difference_heatmap(img, img)
    assert np.array_equal(out, np.broadcast_to([0.0, 0.0, 1.0], out.shape))


def test_maximal_difference_is_yellow():
    out = heatmap.difference_heatmap(np.zeros((1, 1, 3)), np.ones((1, 1, 3)))
    np.testing.assert_allclose(out[0, 0], [1, 1, 0], atol=1e-15)


def test_colormap_monotone():
    rgb = heatmap.colormap(np.linspace(0, 1, 101))
    assert np.all(np.diff(rgb[:, 0]) > 0) and np.all(np.diff(rgb[:, 1]) > 0)
    assert np.all(np.diff(rgb[:, 2]) < 0)


def test_uncovered_pixels_black(rng):
    a, b = rng.uniform(size=(2, 3, 3, 3))
    cov = np.ones((3, 3), dtype=bool)
    cov[1, 2] = False
    out = heatmap.difference_heatmap(a, b, cov)
    assert np.all(out[1, 2] == 0) and np.all(out[cov].sum(axis=1) > 0)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        heatmap.difference_heatmap(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


def test_render_keeps_nearest_point():
    K = CameraIntrinsics(10, 10, 5, 5, 11, 11)
    pc = PointCloud(np.array([[0, 0, 2.0], [0, 0, 1.0], [0.2, 0, 1.0]]),
                    np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1.0]]))
    img, cov = heatmap.render_point_cloud(pc, K, PoseParams.identity())
    assert cov.sum() == 2
    np.testing.assert_array_equal(img[5, 5], [0, 1, 0])
    np.testing.assert_array_equal(img[5, 7], [0, 0, 1])
    assert np.all(img[~cov] == 0)
