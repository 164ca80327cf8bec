import math

import numpy as np
import pytest

from maskcount import numerics
from maskcount.errors import ShapeError


def test_global_average_pool():
    volume = np.array([[[1.0, 3.0], [5.0, 7.0]], [[0.0, 0.0], [0.0, 2.0]]])
    np.testing.assert_allclose(numerics.global_average_pool(volume), [4.0, 0.5])


def test_as_grid_rejects_bad_input():
    with pytest.raises(ValueError):
        numerics.as_grid(np.zeros(3))
    with pytest.raises(ValueError):
        numerics.as_grid([[1.0, np.nan]])


def test_dot_and_shape_mismatch():
    assert numerics.dot([1, 2, 3], [4, 5, 6]) == 32.0
    with pytest.raises(ShapeError):
        numerics.dot([1, 2], [1, 2, 3])


def test_cosine():
    assert numerics.cosine([1.0, 0.0], [0.0, 0.0]) == 0.0
    assert numerics.cosine([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.0)
    assert numerics.cosine([1.0, 0.0], [-3.0, 0.0]) == pytest.approx(-1.0)
    assert -1.0 <= numerics.cosine([0.1, 0.3], [0.1000001, 0.3]) <= 1.0


def test_cosine_ignores_positive_scaling():
    rng = np.random.default_rng(11)
    for _ in range(200):
        a, b = rng.normal(size=(2, 6))
        scale = float(rng.uniform(1e-3, 1e3))
        assert numerics.cosine(scale * a, b) == pytest.approx(numerics.cosine(a, b), abs=1e-12)


def test_gaussian_smooth_conserves_mass():
    rng = np.random.default_rng(4)
    for _ in range(20):
        grid = rng.uniform(0, 1, size=(16, 16))
        assert numerics.gaussian_smooth(grid, 2.0).sum() == pytest.approx(grid.sum(), abs=1e-9)


def test_gaussian_smooth_single_impulse_spreads_symmetrically():
    grid = np.zeros((15, 15))
    grid[7, 7] = 1.0
    smooth = numerics.gaussian_smooth(grid, 1.5)
    np.testing.assert_allclose(smooth, smooth.T, atol=1e-14)
    np.testing.assert_allclose(smooth, smooth[::-1, ::-1], atol=1e-14)
    assert smooth.argmax() == 7 * 15 + 7


@pytest.mark.parametrize("cell", [(0, 0), (1, 2), (0, 7), (7, 7)])
def test_gaussian_smooth_keeps_border_peaks_in_place(cell):
    grid = np.zeros((8, 8))
    grid[cell] = 1.0
    smooth = numerics.gaussian_smooth(grid, 2.0)
    assert np.unravel_index(smooth.argmax(), smooth.shape) == cell
    assert smooth.sum() == pytest.approx(1.0, abs=1e-12)


def test_gaussian_smooth_zero_grid():
    np.testing.assert_array_equal(numerics.gaussian_smooth(np.zeros((5, 6)), 1.0), np.zeros((5, 6)))


def test_gaussian_smooth_needs_positive_sigma():
    with pytest.raises(ValueError):
        numerics.gaussian_smooth(np.zeros((4, 4)), 0.0)


def test_minmax_normalize():
    np.testing.assert_allclose(numerics.minmax_normalize([[1.0, 3.0], [2.0, 5.0]]), [[0.0, 0.5], [0.25, 1.0]])
    np.testing.assert_array_equal(numerics.minmax_normalize(np.full((3, 3), 7.0)), np.zeros((3, 3)))


def test_softplus_and_sigmoid():
    assert numerics.softplus(0.0) == pytest.approx(math.log(2.0))
    x = np.array([-800.0, -3.0, 0.0, 3.0, 800.0])
    assert np.all(numerics.softplus(x) >= 0)
    assert np.all(np.isfinite(numerics.softplus(x)))
    s = numerics.sigmoid(x)
    assert np.all((s >= 0) & (s <= 1))
    assert s[2] == pytest.approx(0.5)


def test_crop_resize_full_box_is_identity():
    rng = np.random.default_rng(0)
    image = rng.uniform(0, 1, size=(3, 12, 10))
    np.testing.assert_allclose(numerics.crop_resize(image, (0, 0, 10, 12), 12, 10), image, atol=1e-12)


def test_crop_resize_constant_image():
    image = np.full((3, 20, 20), 0.25)
    out = numerics.crop_resize(image, (3.5, 2.0, 11.0, 17.0), 8, 8)
    assert out.shape == (3, 8, 8)
    np.testing.assert_allclose(out, 0.25)
