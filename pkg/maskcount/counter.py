"""
The exemplar-conditioned base counting model.

A shared feature extractor F turns the image and every exemplar crop into
feature maps. Each exemplar map is average pooled into a vector and
correlated with the image features, giving one similarity map per exemplar;
their mean is the similarity map S. The counter C reads the image features
stacked with S (optionally masked) and regresses a non-negative density
map at feature resolution, whose sum is the count.
"""

import logging

import numpy as np

from maskcount import numerics
from maskcount.errors import ShapeError
from maskcount.nn import (
    ConvSpec,
    ConvStack,
    TrainingState,
    crop_to_ratio,
    extractor_layers,
    fit,
    zeros_like_params,
)
from maskcount.scene import build_gt_density

logger = logging.getLogger(__name__)


class CounterModel:
    """
    Feature extractor F plus counter C.

    Parameters
    ----------
    r
        Downsampling ratio between the image and the similarity map.
    d
        Feature channels.
    exemplar_size
        Side of the square every exemplar crop is resized to.
    rng
        numpy Generator for the initial weights.
    params
        Existing parameters (e.g. loaded from disk) instead of a fresh init.
    """

    kind = "counter"

    def __init__(self, r=8, d=16, exemplar_size=32, rng=None, params=None):
        self.r = r
        self.d = d
        self.exemplar_size = exemplar_size
        self.extractor = ConvStack(extractor_layers(r, d, "f"))
        self.counter = ConvStack(
            [
                ConvSpec("c1", d + 1, 16, 3, 1, relu=True),
                ConvSpec("c2", 16, 8, 3, 1, relu=True),
                ConvSpec("c3", 8, 1, 1, 1, relu=False),
            ]
        )
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = {**self.extractor.init(rng), **self.counter.init(rng)}
        self.params = params
        self.state = TrainingState()

    def features(self, image):
        return self.extractor.forward(self.params, crop_to_ratio(image, self.r))[0]

    def pooled(self, crop):
        return numerics.global_average_pool(self.extractor.forward(self.params, crop)[0])

    def head(self, feats, sim):
        """
        Density from image features and a (possibly masked) similarity map.
        """
        x = np.concatenate([feats, sim[None]], axis=0)
        return numerics.softplus(self.counter.forward(self.params, x)[0][0])


def make_exemplars(scene, size):
    """
    Crop every exemplar box of a scene and resize it to size x size.
    """
    return [
        numerics.crop_resize(scene.image, (b.x0, b.y0, b.x1, b.y1), size, size)
        for b in scene.exemplars
    ]


def extract_features(model, image):
    """
    F(I): (d, H // r, W // r) features of an image.
    """
    return model.features(image)


def exemplar_vector(model, exemplars):
    """
    One pooled d-dim feature vector per exemplar crop.
    """
    if not exemplars:
        raise ValueError("At least one exemplar is required")
    return [model.pooled(crop) for crop in exemplars]


def correlate(feats, vectors):
    """
    Mean over exemplars of the per-location inner product with each vector.
    """
    maps = [np.tensordot(v, feats, axes=(0, 0)) for v in vectors]
    return np.mean(maps, axis=0)


def similarity_map(model, image, exemplars):
    return correlate(extract_features(model, image), exemplar_vector(model, exemplars))


def apply_mask(s, m):
    """
    Keep s where the mask is 1 and fill everywhere else with min(s).
    """
    s = np.asarray(s, dtype=np.float64)
    m = np.asarray(m)
    if s.shape != m.shape:
        raise ShapeError("apply_mask", s.shape, m.shape)
    return np.where(m == 1, s, s.min())


def _mask_backward(ds_out, s, m):
    """
    Gradient of apply_mask: masked cells feed the (first) argmin cell.
    """
    if m is None:
        return ds_out
    keep = m == 1
    ds = np.where(keep, ds_out, 0.0)
    ds.flat[np.argmin(s)] += ds_out[~keep].sum()
    return ds


def predict_density(model, image, exemplars, mask=None):
    """
    Density map (h x w, all >= 0) for an image and its exemplars.
    """
    feats = extract_features(model, image)
    sim = correlate(feats, exemplar_vector(model, exemplars))
    if mask is not None:
        sim = apply_mask(sim, mask)
    return model.head(feats, sim)


def count(density):
    return float(np.sum(density))


def loss_count(pred, gt):
    """
    Sum of squared differences between two density maps.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError("loss_count", pred.shape, gt.shape)
    return float(np.sum((pred - gt) ** 2))


def loss_and_grads(model, params, image, exemplars, gt, mask=None):
    """
    L2 counting loss and its gradient with respect to every parameter.
    """
    extractor, counter = model.extractor, model.counter
    grads = zeros_like_params(params)

    feats, image_cache = extractor.forward(params, crop_to_ratio(image, model.r))
    ex_outputs = [extractor.forward(params, crop) for crop in exemplars]
    vectors = [out.mean(axis=(1, 2)) for out, _ in ex_outputs]
    sim = correlate(feats, vectors)
    sim_in = apply_mask(sim, mask) if mask is not None else sim

    z, head_cache = counter.forward(params, np.concatenate([feats, sim_in[None]], axis=0))
    density = numerics.softplus(z[0])
    diff = density - gt
    loss = float(np.sum(diff**2))

    dz = (2.0 * diff * numerics.sigmoid(z[0]))[None]
    dx = counter.backward(params, head_cache, dz, grads)
    dfeats = dx[: model.d].copy()
    dsim = _mask_backward(dx[model.d], sim, mask)

    n = len(vectors)
    for v in vectors:
        dfeats += v[:, None, None] * dsim / n
    dvec = np.tensordot(feats, dsim, axes=([1, 2], [0, 1])) / n
    extractor.backward(params, image_cache, dfeats, grads)

    for out, cache in ex_outputs:
        dout = np.broadcast_to(dvec[:, None, None] / (out.shape[1] * out.shape[2]), out.shape)
        extractor.backward(params, cache, np.array(dout), grads)
    return loss, grads


def gradients(model, scene, sigma=2.0):
    """
    d(loss_count)/d(parameter) for one scene, unmasked.
    """
    exemplars = make_exemplars(scene, model.exemplar_size)
    gt = build_gt_density(scene, model.r, sigma)
    return loss_and_grads(model, model.params, scene.image, exemplars, gt)[1]


def split_mask(h, w, rng):
    """
    0/1 grid keeping the cells left or right of a random column boundary.

    Matches the left/right layout of multi-class scenes.
    """
    if w < 2:
        return np.ones((h, w))
    cut = int(rng.integers(1, w))
    mask = np.zeros((h, w))
    if rng.integers(0, 2) == 0:
        mask[:, :cut] = 1.0
    else:
        mask[:, cut:] = 1.0
    return mask


def training_samples(model, scenes, sigma=2.0, masked_copies=0, rng=None):
    """
    (image, exemplars, gt[, mask]) tuples for train_base.

    Every scene gives one unmasked sample, then `masked_copies` samples with
    a split mask on the similarity map whose ground truth only holds the
    dots of the kept cells.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    samples = []
    for scene in scenes:
        exemplars = make_exemplars(scene, model.exemplar_size)
        samples.append((scene.image, exemplars, build_gt_density(scene, model.r, sigma)))
        h, w = scene.height // model.r, scene.width // model.r
        for _ in range(masked_copies):
            mask = split_mask(h, w, rng)
            samples.append((scene.image, exemplars, build_gt_density(scene, model.r, sigma, mask), mask))
    return samples


def train_base(model, scenes, cfg, sigma=2.0, rng=None, masked_copies=0):
    """
    Train the counter on single-class scenes with the L2 density loss.

    Parameters
    ----------
    model
        CounterModel, trained in place and returned.
    scenes
        Single-class training scenes.
    cfg
        TrainCfg (epochs, lr, batch, seed, clip).
    sigma
        Gaussian width of the ground-truth density maps.
    rng
        Generator for the split masks and the scene order; defaults to one
        seeded from cfg.seed.
    masked_copies
        Extra split-masked samples per scene; with 0 the counter only ever
        sees unmasked similarity maps.
    """
    if any(s.is_multiclass for s in scenes):
        raise ValueError("The base counter trains on single-class scenes only")
    if masked_copies < 0:
        raise ValueError(f"masked_copies must be >= 0, got {masked_copies}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    samples = training_samples(model, scenes, sigma, masked_copies, rng)

    def step(params, sample):
        return loss_and_grads(model, params, *sample)

    fit(model.params, samples, step, cfg, model.state, rng, "base counter")
    history = model.state.loss_history
    logger.info(
        "Base counter trained for %d epochs on %d samples, loss %.4f -> %.4f",
        len(history),
        len(samples),
        history[0],
        history[-1],
    )
    return model
