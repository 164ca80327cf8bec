"""
Pseudo segmentation masks for multi-class scenes.

The image is tiled into one patch per similarity-map cell, every patch and
the exemplars are embedded with a small colour/gradient descriptor, and the
union is clustered with K-Means. Cells sharing the exemplar's cluster form
the mask. The K whose mask gives the lowest counting loss against the
ground truth wins. Two simpler labelers (boxes around the dots and a
thresholded similarity map) are kept for comparison.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from maskcount import imageio, numerics
from maskcount.cluster import ExemplarKMeans
from maskcount.counter import apply_mask, correlate, exemplar_vector, extract_features, loss_count, make_exemplars
from maskcount.errors import SceneFormatError
from maskcount.scene import build_gt_density
from maskcount.utils import read_json, write_json

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
HISTOGRAM_BINS = 8
SIZE_MODES = ("mean", "min", "max")
THRESHOLDS = (0.2, 0.4, 0.6, 0.8)


@dataclass
class PatchGrid:
    r: int
    patch_w: float
    patch_h: float
    centers: List[Tuple[float, float]]
    shape: Tuple[int, int] = (0, 0)

    @property
    def pixel_size(self):
        """
        Patch (height, width) in whole pixels, at least 1.
        """
        return max(1, int(round(self.patch_h))), max(1, int(round(self.patch_w)))


@dataclass
class PseudoLabelResult:
    mask: np.ndarray
    k_star: Optional[int]
    per_k_loss: Dict[int, float]
    strategy: str
    per_k_mask: Dict[int, np.ndarray] = field(default_factory=dict)


def cell_centers(h, w, r):
    """
    Pixel (x, y) of every cell center, row-major.
    """
    return [(j * r + 0.5 * r, i * r + 0.5 * r) for i in range(h) for j in range(w)]


def tile_patches(image, exemplars, r):
    """
    One patch per mask cell, centred on the cell and as large as the mean
    exemplar box. Patches running over the border repeat the edge pixels.

    Parameters
    ----------
    image
        (3, H, W) scene image.
    exemplars
        Exemplar boxes; only their sizes matter here.
    r
        Downsampling ratio, so the grid is (H // r) x (W // r).
    """
    if not exemplars:
        raise ValueError("At least one exemplar box is required to size the patches")
    _, height, width = image.shape
    h, w = height // r, width // r
    grid = PatchGrid(
        r=r,
        patch_w=float(np.mean([b.width for b in exemplars])),
        patch_h=float(np.mean([b.height for b in exemplars])),
        centers=cell_centers(h, w, r),
        shape=(h, w),
    )
    ph, pw = grid.pixel_size
    offsets_y = np.arange(ph) - ph / 2.0
    offsets_x = np.arange(pw) - pw / 2.0

    patches = []
    for cx, cy in grid.centers:
        ys = np.clip(np.floor(cy + offsets_y).astype(int), 0, height - 1)
        xs = np.clip(np.floor(cx + offsets_x).astype(int), 0, width - 1)
        patches.append(image[:, ys[:, None], xs[None, :]])
    return grid, patches


def embed_patch(patch):
    """
    14-dim descriptor: channel means, channel standard deviations and an
    8-bin luminance gradient orientation histogram (magnitude weighted,
    L2-normalized, uniform when the patch has no gradient).

    >>> v = embed_patch(np.full((3, 4, 4), 0.5))
    >>> v.shape
    (14,)
    >>> np.allclose(v[6:], v[6])
    True
    """
    patch = numerics.as_volume(patch)
    means = patch.mean(axis=(1, 2))
    # exact 0 on flat channels
    stds = np.where(np.ptp(patch, axis=(1, 2)) == 0, 0.0, patch.std(axis=(1, 2)))

    luminance = 0.299 * patch[0] + 0.587 * patch[1] + 0.114 * patch[2]
    if min(luminance.shape) >= 2:
        gy, gx = np.gradient(luminance)
    else:
        gy = gx = np.zeros_like(luminance)
    magnitude = np.hypot(gx, gy).ravel()

    if magnitude.sum() > 0:
        angle = np.mod(np.arctan2(gy, gx).ravel(), 2.0 * math.pi)
        bins = np.minimum((angle / (2.0 * math.pi) * HISTOGRAM_BINS).astype(int), HISTOGRAM_BINS - 1)
        hist = np.bincount(bins, weights=magnitude, minlength=HISTOGRAM_BINS)
    else:
        hist = np.full(HISTOGRAM_BINS, 1.0 / HISTOGRAM_BINS)
    hist = hist / np.linalg.norm(hist)
    return np.concatenate([means, stds, hist])


def exemplar_embedding(image, exemplars, grid):
    """
    f_B: mean descriptor of the exemplar crops resized to the patch size.
    """
    ph, pw = grid.pixel_size
    return np.mean(
        [embed_patch(numerics.crop_resize(image, (b.x0, b.y0, b.x1, b.y1), ph, pw)) for b in exemplars],
        axis=0,
    )


def scene_embeddings(scene, r):
    """
    Patch descriptors of a scene with the exemplar descriptor appended last.
    """
    grid, patches = tile_patches(scene.image, scene.exemplars, r)
    points = np.vstack([embed_patch(p) for p in patches] + [exemplar_embedding(scene.image, scene.exemplars, grid)])
    return grid, points


def mask_from_clusters(cr, grid):
    """
    1 for every cell whose patch landed in the exemplar's cluster.
    """
    h, w = grid.shape
    assignments = np.asarray(cr.assignments)
    if len(assignments) != h * w + 1:
        raise ValueError(f"Expected {h * w + 1} assignments, got {len(assignments)}")
    own = assignments[-1]
    if np.count_nonzero(assignments == own) == 1:
        logger.warning("Exemplar embedding sits alone in its cluster (k=%d), mask is empty", cr.k)
    return (assignments[:-1] == own).astype(np.float64).reshape(h, w)


def kmeans_mask(grid, points, k, rng, n_init=1):
    """
    Mask from the best of `n_init` K-Means runs over the scene embeddings.
    """
    model = ExemplarKMeans(n_clusters=k, n_init=n_init)
    return mask_from_clusters(model.fit(points, rng), grid)


def select_k(per_k_loss):
    """
    The k with the lowest loss, smaller k on ties.

    >>> select_k({2: 9.0, 3: 1.0, 4: 1.0})
    3
    """
    if not per_k_loss:
        raise ValueError("No per-k losses to choose from")
    return min(sorted(per_k_loss), key=lambda k: per_k_loss[k])


def optimal_k_mask(model, scene, k_range, rng, sigma=2.0, n_init=1):
    """
    K-Means pseudo mask with the K that best helps the counter.

    For every k in k_range the mask is applied to the similarity map, the
    counter predicts a density and its L2 loss against the ground truth is
    recorded. The mask at the lowest loss is returned.

    Parameters
    ----------
    model
        Trained CounterModel.
    scene
        Scene with dot annotations.
    k_range
        (kmin, kmax), both inclusive.
    rng
        numpy Generator for the K-Means seeding, consumed in k order.
    sigma
        Gaussian width of the ground-truth density.
    n_init
        K-Means restarts per k; the lowest inertia run gives the mask.
    """
    kmin, kmax = k_range
    feats = extract_features(model, scene.image)
    sim = correlate(feats, exemplar_vector(model, make_exemplars(scene, model.exemplar_size)))
    gt = build_gt_density(scene, model.r, sigma)
    grid, points = scene_embeddings(scene, model.r)

    per_k_loss = {}
    per_k_mask = {}
    for k in range(kmin, kmax + 1):
        mask = kmeans_mask(grid, points, k, rng, n_init)
        density = model.head(feats, apply_mask(sim, mask))
        per_k_loss[k] = loss_count(density, gt)
        per_k_mask[k] = mask

    k_star = select_k(per_k_loss)
    logger.debug("k* = %d, losses %s", k_star, per_k_loss)
    return PseudoLabelResult(per_k_mask[k_star], k_star, per_k_loss, "kmeans", per_k_mask)


def dotbox_mask(scene, size_mode, r):
    """
    Cells whose center falls inside a box around any target dot.

    Boxes take the mean, min or max exemplar width and height (each
    dimension separately).
    """
    if size_mode not in SIZE_MODES:
        raise ValueError(f"size_mode must be one of {SIZE_MODES}, got {size_mode}")
    reduce = {"mean": np.mean, "min": np.min, "max": np.max}[size_mode]
    box_w = float(reduce([b.width for b in scene.exemplars]))
    box_h = float(reduce([b.height for b in scene.exemplars]))

    h, w = scene.height // r, scene.width // r
    cy, cx = np.mgrid[0:h, 0:w] * r + 0.5 * r
    mask = np.zeros((h, w), dtype=bool)
    for dot in scene.target_dots:
        mask |= (np.abs(cx - dot.x) <= box_w / 2.0) & (np.abs(cy - dot.y) <= box_h / 2.0)
    return mask.astype(np.float64)


def threshold_mask(model, scene, tau):
    """
    Min-max normalized similarity map thresholded at tau.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    sim = correlate(
        extract_features(model, scene.image),
        exemplar_vector(model, make_exemplars(scene, model.exemplar_size)),
    )
    return (numerics.minmax_normalize(sim) >= tau).astype(np.float64)


def label_scene(strategy, model, scene, k_range, rng, sigma=2.0, n_init=1):
    """
    Run one labeling strategy by name: "kmeans", "dotbox:<mean|min|max>"
    or "threshold:<tau>".
    """
    name, _, arg = strategy.partition(":")
    if name == "kmeans":
        return optimal_k_mask(model, scene, k_range, rng, sigma, n_init)
    if name == "dotbox":
        return PseudoLabelResult(dotbox_mask(scene, arg or "mean", model.r), None, {}, strategy)
    if name == "threshold":
        return PseudoLabelResult(threshold_mask(model, scene, float(arg)), None, {}, strategy)
    raise ValueError(f"Unknown pseudo-label strategy {strategy}")


def mask_to_bits(mask):
    return "".join("1" if v else "0" for v in np.asarray(mask).ravel())


def bits_to_mask(bits, h, w):
    if len(bits) != h * w or set(bits) - {"0", "1"}:
        raise ValueError(f"Expected {h * w} characters of 0/1")
    return np.frombuffer(bits.encode("ascii"), dtype=np.uint8).reshape(h, w).astype(np.float64) - ord("0")


def result_to_dict(result, fingerprint=None):
    h, w = result.mask.shape
    return {
        "version": FORMAT_VERSION,
        "strategy": result.strategy,
        "k_star": result.k_star,
        "per_k_loss": {str(k): float(v) for k, v in sorted(result.per_k_loss.items())},
        "mask": {"h": h, "w": w, "bits": mask_to_bits(result.mask)},
        "fingerprint": fingerprint,
    }


def save_result(result, filename, fingerprint=None):
    write_json(filename, result_to_dict(result, fingerprint))


def load_result(filename):
    """
    Read a pseudo mask file back into a PseudoLabelResult.
    """
    try:
        record = read_json(filename)
    except ValueError as e:
        raise SceneFormatError(filename, "json", getattr(e, "pos", None), str(e))
    try:
        if record["version"] != FORMAT_VERSION:
            raise SceneFormatError(filename, "version", reason=f"expected {FORMAT_VERSION}")
        mask = bits_to_mask(record["mask"]["bits"], int(record["mask"]["h"]), int(record["mask"]["w"]))
        per_k_loss = {int(k): float(v) for k, v in record["per_k_loss"].items()}
        return PseudoLabelResult(mask, record["k_star"], per_k_loss, record["strategy"])
    except (KeyError, TypeError, ValueError) as e:
        raise SceneFormatError(filename, "mask", reason=str(e))


def dump_masks(result, directory, scene_id):
    """
    PGM of the chosen mask and, for K-Means, of the mask at every k.
    """
    os.makedirs(directory, exist_ok=True)
    imageio.write_pgm(result.mask, os.path.join(directory, f"{scene_id}.pgm"))
    for k, mask in sorted(result.per_k_mask.items()):
        imageio.write_pgm(mask, os.path.join(directory, f"{scene_id}.k{k}.pgm"))
