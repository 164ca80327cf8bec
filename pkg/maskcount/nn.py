"""
Small convolutional networks with hand-written backprop.

Parameters live in flat dicts of name -> array ("f1.w", "f1.b", ...), which
is also how they are persisted. Images and feature maps are channels-first
(c, h, w) arrays.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from maskcount.errors import NumericError
from maskcount.utils import progress_bar

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConvSpec:
    name: str
    c_in: int
    c_out: int
    kernel: int = 3
    stride: int = 1
    relu: bool = True

    @property
    def pad(self):
        return self.kernel // 2


@dataclass
class TrainCfg:
    epochs: int = 200
    lr: float = 0.01
    batch: int = 4
    seed: int = 0
    clip: float = 10.0


@dataclass
class TrainingState:
    epoch: int = 0
    learning_rate: float = 0.0
    loss_history: List[float] = field(default_factory=list)


def conv2d(x, w, b, stride, pad):
    """
    Cross-correlation of a (c_in, h, w) input with (c_out, c_in, k, k) weights.
    """
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    out = np.empty((c_out, ho, wo))
    out[:] = b[:, None, None]
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
            out += np.tensordot(w[:, :, i, j], patch, axes=(1, 0))
    return out


def conv2d_backward(dout, x, w, stride, pad):
    """
    Gradients of conv2d with respect to its input, weights and bias.
    """
    _, _, kh, kw = w.shape
    _, ho, wo = dout.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            rows = slice(i, i + stride * (ho - 1) + 1, stride)
            cols = slice(j, j + stride * (wo - 1) + 1, stride)
            dw[:, :, i, j] = np.tensordot(dout, xp[:, rows, cols], axes=([1, 2], [1, 2]))
            dxp[:, rows, cols] += np.tensordot(w[:, :, i, j], dout, axes=(0, 0))
    db = dout.sum(axis=(1, 2))
    dx = dxp[:, pad : pad + x.shape[1], pad : pad + x.shape[2]]
    return dx, dw, db


class ConvStack:
    """
    A chain of conv layers, each optionally followed by a ReLU.

    Parameters
    ----------
    layers
        ConvSpec per layer, applied in order.
    """

    def __init__(self, layers):
        self.layers = list(layers)

    def init(self, rng):
        """
        Glorot-uniform weights, zero biases.
        """
        params = {}
        for layer in self.layers:
            fan_in = layer.c_in * layer.kernel**2
            fan_out = layer.c_out * layer.kernel**2
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            shape = (layer.c_out, layer.c_in, layer.kernel, layer.kernel)
            params[f"{layer.name}.w"] = rng.uniform(-limit, limit, size=shape)
            params[f"{layer.name}.b"] = np.zeros(layer.c_out)
        return params

    def forward(self, params, x):
        """
        Run the stack, returning the output and the cache backward needs.
        """
        cache = []
        for layer in self.layers:
            pre = conv2d(x, params[f"{layer.name}.w"], params[f"{layer.name}.b"], layer.stride, layer.pad)
            cache.append((x, pre))
            x = np.maximum(pre, 0.0) if layer.relu else pre
        return x, cache

    def backward(self, params, cache, dout, grads):
        """
        Accumulate parameter gradients into `grads` and return d(input).
        """
        for layer, (x, pre) in zip(reversed(self.layers), reversed(cache)):
            if layer.relu:
                dout = dout * (pre > 0)
            dout, dw, db = conv2d_backward(dout, x, params[f"{layer.name}.w"], layer.stride, layer.pad)
            grads[f"{layer.name}.w"] += dw
            grads[f"{layer.name}.b"] += db
        return dout


def extractor_layers(r, d, prefix):
    """
    Feature extractor with overall stride r: log2(r) stride-2 3x3 convs,
    ReLU between them and none after the last.
    """
    if r < 1 or r & (r - 1):
        raise ValueError(f"Downsampling ratio must be a power of two, got {r}")
    depth = max(1, int(math.log2(r)))
    stride = 2 if r > 1 else 1
    layers = []
    for i in range(depth):
        c_in = 3 if i == 0 else d
        layers.append(ConvSpec(f"{prefix}{i + 1}", c_in, d, 3, stride, relu=i < depth - 1))
    return layers


def crop_to_ratio(image, r):
    """
    Trim an image so both sides are multiples of r.
    """
    _, height, width = image.shape
    if height < r or width < r:
        raise ValueError(f"Image {height}x{width} is smaller than the downsampling ratio {r}")
    return image[:, : (height // r) * r, : (width // r) * r]


def zeros_like_params(params):
    return {name: np.zeros_like(value) for name, value in params.items()}


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads, max_norm):
    """
    Global norm gradient clipping across all parameters.
    """
    total = global_norm(grads)
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def fit(params, samples, loss_and_grads, cfg, state, rng, what):
    """
    Mini-batch gradient descent with a fixed learning rate.

    Scenes are visited in a seeded random order each epoch. Per-scene
    gradients in a batch are summed in that order, averaged, clipped and
    applied. The recorded loss per epoch is the mean per-scene loss seen
    during the pass.

    Parameters
    ----------
    params
        Parameter dict, updated in place.
    samples
        Per-scene training inputs understood by `loss_and_grads`.
    loss_and_grads
        Callable(params, sample) -> (loss, grads).
    cfg
        TrainCfg.
    state
        TrainingState to append to.
    rng
        numpy Generator for the visiting order.
    what
        Name used in progress output and diagnostics.
    """
    state.learning_rate = cfg.lr
    n = len(samples)
    if n == 0:
        raise ValueError(f"No training scenes for {what}")

    for _ in progress_bar(range(cfg.epochs), desc=f"train {what}", unit="epoch"):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch):
            batch = order[start : start + cfg.batch]
            grads = zeros_like_params(params)
            for index in batch:
                loss, scene_grads = loss_and_grads(params, samples[index])
                if not np.isfinite(loss):
                    raise NumericError(
                        f"Non-finite loss while training {what}",
                        epoch=state.epoch,
                        scene=int(index),
                        loss=loss,
                    )
                total += loss
                for name, g in scene_grads.items():
                    grads[name] += g
            for g in grads.values():
                g /= len(batch)
            clip_gradients(grads, cfg.clip)
            if cfg.lr > 0:
                for name, g in grads.items():
                    params[name] -= cfg.lr * g

        state.loss_history.append(total / n)
        state.epoch += 1
        logger.debug("%s epoch %d loss %.6f", what, state.epoch, state.loss_history[-1])
    return state
