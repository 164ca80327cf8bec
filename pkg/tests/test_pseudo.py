import logging

import numpy as np
import pytest

from conftest import DISTRACTOR_CELLS, TARGET_CELLS, make_scene, two_class_scene
from maskcount import counter, pseudo
from maskcount.cluster import ClusterResult, ExemplarKMeans
from maskcount.counter import CounterModel
from maskcount.errors import SceneFormatError
from maskcount.pseudo import PatchGrid, PseudoLabelResult
from maskcount.scene import ExemplarBox, build_gt_density


def grid_of(h, w, r=4):
    return PatchGrid(r=r, patch_w=float(r), patch_h=float(r), centers=pseudo.cell_centers(h, w, r), shape=(h, w))


def clusters(assignments):
    assignments = np.asarray(assignments)
    return ClusterResult(int(assignments.max()) + 1, np.zeros((1, 1)), assignments, 0.0, 1)


def test_patch_centers_and_sizes():
    image = np.zeros((3, 128, 128))
    boxes = [ExemplarBox(0, 0, 10, 20, 0), ExemplarBox(5, 5, 25, 45, 0)]
    grid, patches = pseudo.tile_patches(image, boxes, 8)
    assert grid.centers[0] == (4.0, 4.0)
    assert (grid.patch_w, grid.patch_h) == (15.0, 30.0)
    assert grid.shape == (16, 16)
    assert len(patches) == 256
    assert patches[0].shape == (3, 30, 15)


def test_patches_repeat_the_border():
    image = np.random.default_rng(0).uniform(size=(3, 32, 32))
    grid, patches = pseudo.tile_patches(image, [ExemplarBox(0, 0, 12, 12, 0)], 8)
    corner = patches[0]
    # rows and columns above/left of the image all map to row/column 0
    np.testing.assert_array_equal(corner[:, 0], corner[:, 1])
    np.testing.assert_array_equal(corner[:, :, 0], image[:, np.clip(np.arange(12) - 2, 0, 31), 0])
    np.testing.assert_array_equal(patches[-1][:, -1], patches[-1][:, -2])


def test_tile_patches_needs_exemplars():
    with pytest.raises(ValueError):
        pseudo.tile_patches(np.zeros((3, 16, 16)), [], 4)


def test_constant_patch_embedding():
    v = pseudo.embed_patch(np.full((3, 6, 6), 0.3))
    np.testing.assert_allclose(v[:3], 0.3)
    np.testing.assert_array_equal(v[3:6], 0.0)
    np.testing.assert_allclose(v[6:], 1.0 / np.sqrt(8))


@pytest.mark.parametrize("value", [0.1, 0.3, 0.7, 1.0 / 3.0])
def test_flat_channels_have_exactly_zero_spread(value):
    patch = np.full((3, 5, 9), value)
    patch[2] = 0.6
    assert np.all(pseudo.embed_patch(patch)[3:6] == 0.0)


def test_embedding_moments_ignore_rotation():
    patch = np.random.default_rng(1).uniform(size=(3, 7, 7))
    a = pseudo.embed_patch(patch)
    b = pseudo.embed_patch(np.rot90(patch, axes=(1, 2)))
    np.testing.assert_allclose(a[:6], b[:6])
    assert np.linalg.norm(a[6:]) == pytest.approx(1.0)


def test_distinct_colours_embed_apart():
    red = np.zeros((3, 5, 5))
    red[0] = 1.0
    green = np.zeros((3, 5, 5))
    green[1] = 1.0
    a, b = pseudo.embed_patch(red), pseudo.embed_patch(green)
    assert a @ b / (np.linalg.norm(a) * np.linalg.norm(b)) < 0.99


def test_mask_from_one_cluster_is_all_ones():
    mask = pseudo.mask_from_clusters(clusters(np.zeros(17, dtype=int)), grid_of(4, 4))
    np.testing.assert_array_equal(mask, np.ones((4, 4)))


def test_singleton_exemplar_cluster(caplog):
    assignments = np.zeros(17, dtype=int)
    assignments[-1] = 1
    with caplog.at_level(logging.WARNING, logger="maskcount"):
        mask = pseudo.mask_from_clusters(clusters(assignments), grid_of(4, 4))
    np.testing.assert_array_equal(mask, np.zeros((4, 4)))
    assert "alone" in caplog.text


def test_mask_needs_one_assignment_per_cell():
    with pytest.raises(ValueError):
        pseudo.mask_from_clusters(clusters(np.zeros(16, dtype=int)), grid_of(4, 4))


@pytest.mark.parametrize("seed", range(5))
def test_checkerboard_clusters(seed):
    rng = np.random.default_rng(seed)
    a, b = np.array([1.0, 0.0, 0.0, 0.5]), np.array([0.0, 1.0, 0.5, 0.0])
    board = (np.add.outer(np.arange(4), np.arange(6)) % 2 == 0).astype(np.float64)
    points = np.where(board.ravel()[:, None] == 1, a, b) + rng.normal(0, 0.01, size=(24, 4))
    points = np.vstack([points, a])
    mask = pseudo.kmeans_mask(grid_of(4, 6), points, 2, rng)
    np.testing.assert_array_equal(mask, board)


def test_kmeans_mask_keeps_the_lowest_inertia_run():
    points = np.random.default_rng(3).normal(size=(17, 3))
    best = ExemplarKMeans(n_clusters=3, n_init=8).fit(points, np.random.default_rng(0))
    mask = pseudo.kmeans_mask(grid_of(4, 4), points, 3, np.random.default_rng(0), n_init=8)
    np.testing.assert_array_equal(mask, pseudo.mask_from_clusters(best, grid_of(4, 4)))

    single = ExemplarKMeans(n_clusters=3).fit(points, np.random.default_rng(0))
    assert best.inertia <= single.inertia


def test_select_k():
    assert pseudo.select_k({2: 9.0, 3: 1.0, 4: 1.0}) == 3
    assert pseudo.select_k({5: 0.5, 2: 0.5}) == 2
    with pytest.raises(ValueError):
        pseudo.select_k({})


def test_optimal_k_mask(tiny_counter):
    scene = make_scene(seed=3, region="left", meta={"seed": 3, "seam": 8}, other_dots=[(13.0, 13.0)])
    result = pseudo.optimal_k_mask(tiny_counter, scene, (2, 6), np.random.default_rng(0))
    assert sorted(result.per_k_loss) == [2, 3, 4, 5, 6]
    assert result.k_star == min(result.per_k_loss, key=lambda k: (result.per_k_loss[k], k))
    np.testing.assert_array_equal(result.mask, result.per_k_mask[result.k_star])

    exemplars = counter.make_exemplars(scene, tiny_counter.exemplar_size)
    gt = build_gt_density(scene, 4, 2.0)
    for k, mask in result.per_k_mask.items():
        density = counter.predict_density(tiny_counter, scene.image, exemplars, mask=mask)
        assert counter.loss_count(density, gt) == pytest.approx(result.per_k_loss[k])


def test_optimal_k_mask_is_deterministic(tiny_counter):
    scene = make_scene(seed=4)
    a = pseudo.optimal_k_mask(tiny_counter, scene, (2, 4), np.random.default_rng(5))
    b = pseudo.optimal_k_mask(tiny_counter, scene, (2, 4), np.random.default_rng(5))
    assert a.per_k_loss == b.per_k_loss
    np.testing.assert_array_equal(a.mask, b.mask)


def brightness_counter():
    """
    Counter whose density at a cell only grows with its similarity value:
    features are the mean colour of one pixel per cell, and the head is
    softplus(60 * relu(S) - 6) with no spatial mixing.
    """
    model = CounterModel(r=4, d=1, exemplar_size=4)
    params = {name: np.zeros_like(value) for name, value in model.params.items()}
    params["f1.w"][0, :, 1, 1] = 1.0 / 3.0
    params["f2.w"][0, 0, 1, 1] = 1.0
    params["c1.w"][0, 1, 1, 1] = 60.0
    params["c2.w"][0, 0, 1, 1] = 1.0
    params["c3.w"][0, 0, 0, 0] = 1.0
    params["c3.b"][0] = -6.0
    return CounterModel(r=4, d=1, exemplar_size=4, params=params)


def test_distractor_merged_at_small_k_pushes_k_star_up():
    scene = two_class_scene()
    model = brightness_counter()
    result = pseudo.optimal_k_mask(model, scene, (2, 3), np.random.default_rng(0), sigma=1.0, n_init=10)

    merged = np.zeros((8, 8))
    for cell in TARGET_CELLS + DISTRACTOR_CELLS:
        merged[cell] = 1.0
    target_only = np.zeros((8, 8))
    for cell in TARGET_CELLS:
        target_only[cell] = 1.0
    np.testing.assert_array_equal(result.per_k_mask[2], merged)
    np.testing.assert_array_equal(result.per_k_mask[3], target_only)

    assert result.k_star >= 3
    exemplars = counter.make_exemplars(scene, model.exemplar_size)
    gt = build_gt_density(scene, 4, 1.0)
    losses = {
        k: counter.loss_count(counter.predict_density(model, scene.image, exemplars, mask=mask), gt)
        for k, mask in result.per_k_mask.items()
    }
    assert losses[2] > losses[3]
    assert losses == pytest.approx(result.per_k_loss)


def test_dotbox_without_target_dots():
    scene = make_scene(size=64, dots=[], other_dots=[(30.0, 30.0)], boxes=[(0, 0, 20, 20)])
    np.testing.assert_array_equal(pseudo.dotbox_mask(scene, "mean", 8), np.zeros((8, 8)))


def test_dotbox_block_around_a_dot():
    scene = make_scene(size=64, dots=[(34.0, 34.0)], boxes=[(0, 0, 20, 20)])
    mask = pseudo.dotbox_mask(scene, "mean", 8)
    expected = np.zeros((8, 8))
    expected[3:6, 3:6] = 1.0
    np.testing.assert_array_equal(mask, expected)


def test_dotbox_size_modes_nest():
    scene = make_scene(
        size=64,
        dots=[(10.0, 12.0), (40.0, 33.0), (55.0, 50.0)],
        boxes=[(0, 0, 6, 8), (0, 0, 14, 12), (0, 0, 30, 26)],
    )
    small, mean, large = (pseudo.dotbox_mask(scene, mode, 8) for mode in ("min", "mean", "max"))
    assert np.all(small <= mean) and np.all(mean <= large)
    assert large.sum() > small.sum()
    with pytest.raises(ValueError):
        pseudo.dotbox_mask(scene, "median", 8)


def test_threshold_mask_extremes(tiny_counter, scene):
    np.testing.assert_array_equal(pseudo.threshold_mask(tiny_counter, scene, 0.0), np.ones((4, 4)))
    sim = counter.similarity_map(tiny_counter, scene.image, counter.make_exemplars(scene, 8))
    top = pseudo.threshold_mask(tiny_counter, scene, 1.0)
    np.testing.assert_array_equal(top, (sim == sim.max()).astype(np.float64))
    with pytest.raises(ValueError):
        pseudo.threshold_mask(tiny_counter, scene, 1.5)


def test_label_scene_by_name(tiny_counter, scene):
    rng = np.random.default_rng(0)
    assert pseudo.label_scene("dotbox:max", tiny_counter, scene, (2, 3), rng).strategy == "dotbox:max"
    result = pseudo.label_scene("threshold:0.4", tiny_counter, scene, (2, 3), rng)
    assert result.k_star is None and result.mask.shape == (4, 4)
    assert pseudo.label_scene("kmeans", tiny_counter, scene, (2, 3), rng).k_star in (2, 3)
    with pytest.raises(ValueError):
        pseudo.label_scene("watershed", tiny_counter, scene, (2, 3), rng)


def test_result_file(tmp_path):
    mask = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
    result = PseudoLabelResult(mask, 3, {2: 4.5, 3: 1.25}, "kmeans")
    filename = str(tmp_path / "scene.json")
    pseudo.save_result(result, filename, fingerprint="abc")
    loaded = pseudo.load_result(filename)
    np.testing.assert_array_equal(loaded.mask, mask)
    assert (loaded.k_star, loaded.per_k_loss, loaded.strategy) == (3, {2: 4.5, 3: 1.25}, "kmeans")


def test_malformed_result_files(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(SceneFormatError) as error:
        pseudo.load_result(str(broken))
    assert error.value.field == "json"

    short = tmp_path / "short.json"
    short.write_text('{"version": 1, "strategy": "kmeans", "k_star": 2, "per_k_loss": {}, "mask": {"h": 2, "w": 2, "bits": "101"}}')
    with pytest.raises(SceneFormatError) as error:
        pseudo.load_result(str(short))
    assert error.value.field == "mask"


def test_dump_masks(tmp_path):
    result = PseudoLabelResult(np.ones((2, 2)), 2, {2: 0.0}, "kmeans", {2: np.ones((2, 2)), 3: np.zeros((2, 2))})
    pseudo.dump_masks(result, str(tmp_path), "test-multi-0000")
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "test-multi-0000.k2.pgm",
        "test-multi-0000.k3.pgm",
        "test-multi-0000.pgm",
    ]
