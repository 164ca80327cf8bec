"""
Exemplar-based segmentation model.

The segmenter has the same architecture as the counter's feature extractor
but its own weights. Its mask is the cosine similarity between each
location's feature and the mean pooled exemplar feature, trained against
binary pseudo masks with an L2 loss and binarized at inference time.
"""

import logging

import numpy as np

from maskcount import numerics
from maskcount.counter import apply_mask, correlate, count, exemplar_vector, extract_features, make_exemplars
from maskcount.errors import ShapeError
from maskcount.nn import ConvStack, TrainingState, crop_to_ratio, extractor_layers, fit, zeros_like_params

logger = logging.getLogger(__name__)


class SegModel:
    """
    Segmentation network P.

    Parameters
    ----------
    r
        Downsampling ratio, equal to the counter's so masks line up with
        its similarity maps.
    d
        Feature channels.
    exemplar_size
        Side of the square every exemplar crop is resized to.
    rng
        numpy Generator for the initial weights.
    params
        Existing parameters instead of a fresh init.
    """

    kind = "segmenter"

    def __init__(self, r=8, d=16, exemplar_size=32, rng=None, params=None):
        self.r = r
        self.d = d
        self.exemplar_size = exemplar_size
        self.extractor = ConvStack(extractor_layers(r, d, "p"))
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(1)
            params = self.extractor.init(rng)
        self.params = params
        self.state = TrainingState()


def cosine_map(feats, v):
    """
    Cosine similarity of every location's channel vector with v.

    Locations (or a v) with zero norm score 0.
    """
    norms = np.linalg.norm(feats, axis=0)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return np.zeros(feats.shape[1:])
    raw = np.tensordot(v, feats, axes=(0, 0))
    safe = np.where(norms > 0, norms, 1.0)
    return np.clip(np.where(norms > 0, raw / (safe * nv), 0.0), -1.0, 1.0)


def predict_mask(model, image, exemplars):
    """
    Soft mask in [-1, 1] at feature resolution.
    """
    if not exemplars:
        raise ValueError("At least one exemplar is required")
    feats = model.extractor.forward(model.params, crop_to_ratio(image, model.r))[0]
    pooled = [
        numerics.global_average_pool(model.extractor.forward(model.params, crop)[0])
        for crop in exemplars
    ]
    return cosine_map(feats, np.mean(pooled, axis=0))


def loss_seg(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError("loss_seg", pred.shape, target.shape)
    return float(np.sum((pred - target) ** 2))


def loss_and_grads(model, params, image, exemplars, target):
    """
    L2 mask loss and its gradient with respect to every parameter.
    """
    extractor = model.extractor
    grads = zeros_like_params(params)

    feats, image_cache = extractor.forward(params, crop_to_ratio(image, model.r))
    ex_outputs = [extractor.forward(params, crop) for crop in exemplars]
    v = np.mean([out.mean(axis=(1, 2)) for out, _ in ex_outputs], axis=0)

    pred = cosine_map(feats, v)
    diff = pred - target
    loss = float(np.sum(diff**2))

    norms = np.linalg.norm(feats, axis=0)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return loss, grads
    live = norms > 0
    safe = np.where(live, norms, 1.0)
    dpred = np.where(live, 2.0 * diff, 0.0)
    u = feats / safe
    vhat = v / nv

    # d cos / d f = (vhat - cos u) / |f|,  d cos / d v = (u - cos vhat) / |v|
    dfeats = dpred * (vhat[:, None, None] - pred * u) / safe
    dv = np.tensordot(u - pred * vhat[:, None, None], dpred, axes=([1, 2], [0, 1])) / nv
    extractor.backward(params, image_cache, dfeats, grads)

    n = len(ex_outputs)
    for out, cache in ex_outputs:
        dout = np.broadcast_to(dv[:, None, None] / (n * out.shape[1] * out.shape[2]), out.shape)
        extractor.backward(params, cache, np.array(dout), grads)
    return loss, grads


def train_seg(model, data, cfg, rng=None):
    """
    Train the segmenter on (scene, pseudo mask) pairs.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    samples = []
    for scene, mask in data:
        shape = (scene.height // model.r, scene.width // model.r)
        if mask.shape != shape:
            raise ShapeError("pseudo mask", mask.shape, shape)
        samples.append((scene.image, make_exemplars(scene, model.exemplar_size), mask))

    def step(params, sample):
        return loss_and_grads(model, params, *sample)

    fit(model.params, samples, step, cfg, model.state, rng, "segmenter")
    history = model.state.loss_history
    logger.info(
        "Segmenter trained for %d epochs, loss %.4f -> %.4f",
        len(history),
        history[0],
        history[-1],
    )
    return model


def binarize(mask, tau):
    """
    1 where the min-max normalized mask reaches tau. A constant mask gives
    all zeros.
    """
    mask = numerics.as_grid(mask)
    if mask.max() == mask.min():
        logger.warning("Constant predicted mask, binarizing to all zeros")
        return np.zeros_like(mask)
    return (numerics.minmax_normalize(mask) >= tau).astype(np.float64)


def segment(seg, scene, tau):
    """
    Binarized segmenter mask for a scene.
    """
    return binarize(predict_mask(seg, scene.image, make_exemplars(scene, seg.exemplar_size)), tau)


def masked_density(counter, seg, scene, tau, mask=None):
    """
    Density with the segmenter's binarized mask applied to the similarity map.
    """
    if mask is None:
        mask = segment(seg, scene, tau)
    feats = extract_features(counter, scene.image)
    sim = correlate(feats, exemplar_vector(counter, make_exemplars(scene, counter.exemplar_size)))
    return counter.head(feats, apply_mask(sim, mask))


def masked_count(counter, seg, scene, tau):
    return count(masked_density(counter, seg, scene, tau))
