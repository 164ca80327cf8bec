"""
Shared numeric kernels.

Grids are 2-D float64 arrays (h x w), volumes are 3-D float64 arrays
(channels x h x w) and vectors are 1-D float64 arrays. Everything here is a
pure function of its inputs.
"""

import math

import numpy as np
from scipy import ndimage

from maskcount.errors import ShapeError


def as_grid(values):
    """
    Validate and return a 2-D float64 grid.
    """
    grid = np.asarray(values, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
        raise ValueError(f"Expected a non-empty 2-D grid, got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ValueError("Grid contains non-finite values")
    return grid


def as_volume(values):
    volume = np.asarray(values, dtype=np.float64)
    if volume.ndim != 3 or min(volume.shape) < 1:
        raise ValueError(f"Expected a non-empty 3-D volume, got shape {volume.shape}")
    if not np.all(np.isfinite(volume)):
        raise ValueError("Volume contains non-finite values")
    return volume


def global_average_pool(volume):
    """
    Mean of every channel over its spatial extent.

    >>> global_average_pool(np.array([[[1.0, 3.0], [5.0, 7.0]]]))
    array([4.])
    """
    volume = as_volume(volume)
    return volume.mean(axis=(1, 2))


def dot(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("dot", a.shape, b.shape)
    return float(np.dot(a, b))


def cosine(a, b):
    """
    Cosine similarity clamped to [-1, 1]. A zero-norm operand gives 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("cosine", a.shape, b.shape)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def gaussian_smooth(grid, sigma):
    """
    Spread every cell's mass with a Gaussian truncated at ceil(3 sigma).

    The part of each cell's kernel that falls off the grid is dropped and the
    rest renormalized to 1, so the total mass is conserved and a single
    impulse keeps its peak on its own cell, borders included.

    >>> grid = np.zeros((4, 4)); grid[0, 1] = 1.0
    >>> smooth = gaussian_smooth(grid, 2.0)
    >>> round(float(smooth.sum()), 12), int(smooth.argmax())
    (1.0, 1)
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    grid = as_grid(grid)
    radius = int(math.ceil(3.0 * sigma))
    weight = ndimage.gaussian_filter(
        np.ones_like(grid), sigma=sigma, mode="constant", cval=0.0, radius=radius
    )
    return ndimage.gaussian_filter(
        grid / weight, sigma=sigma, mode="constant", cval=0.0, radius=radius
    )


def minmax_normalize(grid):
    """
    Affine map of the grid onto [0, 1]; a constant grid maps to zeros.
    """
    grid = as_grid(grid)
    low = grid.min()
    high = grid.max()
    if high == low:
        return np.zeros_like(grid)
    return (grid - low) / (high - low)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    # numerically stable in both tails
    return np.exp(-np.logaddexp(0.0, -x))


def crop_resize(image, box, out_h, out_w):
    """
    Bilinear resample of an image region (x0, y0, x1, y1) to out_h x out_w.

    Sample points sit at output pixel centers; reads past the image edge
    repeat the border pixel.
    """
    x0, y0, x1, y1 = box
    ys = y0 + (np.arange(out_h) + 0.5) * (y1 - y0) / out_h - 0.5
    xs = x0 + (np.arange(out_w) + 0.5) * (x1 - x0) / out_w - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return np.stack(
        [
            ndimage.map_coordinates(channel, [grid_y, grid_x], order=1, mode="nearest")
            for channel in image
        ]
    )
