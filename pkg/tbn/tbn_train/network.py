"""Network description and explicit forward / backward passes.

Fully-connected layers are convolutions whose filter covers the whole remaining spatial
extent, so every parametric layer is a Conv and the class scores are its (classes, 1, 1)
output flattened.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from tbn.conv_engine import ConvSpec, pad_batch, tap_window
from tbn.packed_format import LayerMeta
from tbn.tbn_error import CacheMismatch, ShapeMismatch


@dataclass(frozen=True)
class Conv:
    in_channels: int
    out_channels: int
    fh: int
    fw: int
    stride: int = 1
    padding: int = 0
    # fixed output gain, multiplied in together with alpha
    gain: float = 1.0
    quantize: bool = True

    @property
    def spec(self) -> ConvSpec:
        return ConvSpec(self.stride, self.padding)

    @property
    def filter_shape(self) -> Tuple[int, int, int, int]:
        return self.out_channels, self.in_channels, self.fh, self.fw

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.fh * self.fw

    def meta(self) -> LayerMeta:
        return LayerMeta(
            self.in_channels, self.out_channels, self.fh, self.fw, self.stride, self.padding
        )


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    size: int = 2


Layer = Union[Conv, ReLU, MaxPool]


def layer_output_shape(layer: Layer, shape: Tuple[int, int, int]) -> Tuple[int, int, int]:
    c, h, w = shape
    if isinstance(layer, Conv):
        if c != layer.in_channels:
            raise ShapeMismatch(
                "conv expects {} input channels, gets {}".format(layer.in_channels, c)
            )
        oh, ow = layer.spec.output_shape(h, w, layer.fh, layer.fw)
        return layer.out_channels, oh, ow
    if isinstance(layer, MaxPool):
        if h < layer.size or w < layer.size:
            raise ShapeMismatch("cannot pool {}x{} with window {}".format(h, w, layer.size))
        return c, h // layer.size, w // layer.size
    return shape


@dataclass(frozen=True)
class NetSpec:
    layers: Tuple[Layer, ...]
    input_shape: Tuple[int, int, int]
    classes: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        shape = self.output_shape()
        if int(np.prod(shape)) != self.classes:
            raise ShapeMismatch(
                "network output {} does not flatten to {} classes".format(shape, self.classes)
            )

    def output_shape(self) -> Tuple[int, int, int]:
        shape = self.input_shape
        for layer in self.layers:
            shape = layer_output_shape(layer, shape)
        return shape

    @property
    def conv_layers(self) -> List[Conv]:
        return [l for l in self.layers if isinstance(l, Conv)]


def he_gain(fan_in: int, relu: bool = True) -> float:
    return math.sqrt((2.0 if relu else 1.0) / fan_in)


def build_toy_net(
    input_shape: Tuple[int, int, int] = (1, 16, 16),
    classes: int = 4,
    width: int = 8,
    keep_first_last_float: bool = False,
    float_baseline: bool = False,
) -> NetSpec:
    """three 3x3 convolutions (the last two with stride 2) and a fully-connected classifier,
    ReLU after every convolution but the classifier.
    """
    c, h, w = input_shape
    plan = [(c, width, 1), (width, 2 * width, 2), (2 * width, 2 * width, 2)]
    layers: List[Layer] = []
    shape = tuple(input_shape)
    for in_c, out_c, stride in plan:
        conv = Conv(in_c, out_c, 3, 3, stride, 1, gain=he_gain(in_c * 9))
        layers += [conv, ReLU()]
        shape = layer_output_shape(conv, shape)
    _, fh, fw = shape
    layers.append(Conv(shape[0], classes, fh, fw, 1, 0, gain=he_gain(shape[0] * fh * fw, False)))

    convs = [i for i, l in enumerate(layers) if isinstance(l, Conv)]
    float_layers = set(convs) if float_baseline else set()
    if keep_first_last_float:
        float_layers |= {convs[0], convs[-1]}
    layers = [
        _with_quantize(l, i not in float_layers) if isinstance(l, Conv) else l
        for i, l in enumerate(layers)
    ]
    return NetSpec(tuple(layers), input_shape, classes)


def _with_quantize(conv: Conv, quantize: bool) -> Conv:
    return Conv(
        conv.in_channels,
        conv.out_channels,
        conv.fh,
        conv.fw,
        conv.stride,
        conv.padding,
        conv.gain,
        quantize,
    )


### forward ###


@dataclass
class ForwardCache:
    """per-layer values the backward pass needs, in forward order"""

    net: NetSpec
    entries: List[tuple] = field(default_factory=list)


# computes the output of conv layer number i for input x
ConvFn = Callable[[int, Conv, np.ndarray], np.ndarray]


def maxpool_forward(x: np.ndarray, size: int) -> Tuple[np.ndarray, np.ndarray]:
    b, c, h, w = x.shape
    oh, ow = h // size, w // size
    windows = (
        x[:, :, : oh * size, : ow * size]
        .reshape(b, c, oh, size, ow, size)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, oh, ow, size * size)
    )
    argmax = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool_backward(
    dout: np.ndarray, argmax: np.ndarray, input_shape: Tuple[int, ...], size: int
) -> np.ndarray:
    b, c, h, w = input_shape
    oh, ow = dout.shape[2], dout.shape[3]
    dwin = np.zeros((b, c, oh, ow, size * size), dtype=dout.dtype)
    np.put_along_axis(dwin, argmax[..., None], dout[..., None], axis=-1)
    dx = np.zeros(input_shape, dtype=dout.dtype)
    dx[:, :, : oh * size, : ow * size] = (
        dwin.reshape(b, c, oh, ow, size, size)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, oh * size, ow * size)
    )
    return dx


def run_layers(
    net: NetSpec, x: np.ndarray, conv_fn: ConvFn, cache: Optional[ForwardCache] = None
) -> np.ndarray:
    """runs x (B, C, H, W) through the network; returns flattened scores (B, classes)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or tuple(x.shape[1:]) != net.input_shape:
        raise ShapeMismatch(
            "network expects inputs (B, {}, {}, {}), got {}".format(*net.input_shape, x.shape)
        )
    conv_index = 0
    for layer in net.layers:
        if isinstance(layer, Conv):
            if cache is not None:
                cache.entries.append(("conv", x))
            x = conv_fn(conv_index, layer, x)
            conv_index += 1
        elif isinstance(layer, ReLU):
            if cache is not None:
                cache.entries.append(("relu", x > 0))
            x = np.maximum(x, 0.0)
        elif isinstance(layer, MaxPool):
            shape = x.shape
            x, argmax = maxpool_forward(x, layer.size)
            if cache is not None:
                cache.entries.append(("pool", (argmax, shape)))
    return x.reshape(x.shape[0], -1)


### backward ###


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]


def conv_backward(
    dout: np.ndarray, x: np.ndarray, w: np.ndarray, conv: Conv
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """gradients of y = gain * correlate(x, w) + bias.

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: dx, dw, dbias
    """
    dbias = dout.sum(axis=(0, 2, 3))
    dz = dout * conv.gain
    oh, ow = dout.shape[2], dout.shape[3]
    s, p = conv.stride, conv.padding
    xp = pad_batch(x, p)
    dxp = np.zeros_like(xp)
    dw = np.zeros(w.shape, dtype=np.float64)
    for i in range(conv.fh):
        for j in range(conv.fw):
            window = tap_window(xp, i, j, oh, ow, s)
            dw[:, :, i, j] = np.einsum("bkyx,bcyx->kc", dz, window)
            dxp[:, :, i : i + s * (oh - 1) + 1 : s, j : j + s * (ow - 1) + 1 : s] += np.einsum(
                "bkyx,kc->bcyx", dz, w[:, :, i, j]
            )
    h, wd = x.shape[2], x.shape[3]
    dx = dxp[:, :, p : p + h, p : p + wd]
    return dx, dw, dbias


def backward(
    dscores: np.ndarray, cache: ForwardCache, weights: Sequence[np.ndarray]
) -> Gradients:
    """standard backpropagation with the given real filters as layer parameters."""
    net = cache.net
    if len(cache.entries) != len(net.layers):
        raise CacheMismatch(
            "cache holds {} entries for {} layers".format(len(cache.entries), len(net.layers))
        )
    convs = net.conv_layers
    if len(weights) != len(convs):
        raise CacheMismatch("{} weight tensors for {} conv layers".format(len(weights), len(convs)))

    out_shape = net.output_shape()
    dx = np.asarray(dscores, dtype=np.float64)
    if dx.ndim != 2 or dx.shape[1] != net.classes:
        raise CacheMismatch("score gradient has shape {}".format(dx.shape))
    dx = dx.reshape((dx.shape[0],) + out_shape)

    dweights: List[Optional[np.ndarray]] = [None] * len(convs)
    dbiases: List[Optional[np.ndarray]] = [None] * len(convs)
    conv_index = len(convs)
    for layer, (kind, saved) in zip(reversed(net.layers), reversed(cache.entries)):
        if isinstance(layer, Conv) and kind == "conv":
            conv_index -= 1
            w = np.asarray(weights[conv_index], dtype=np.float64)
            if w.shape != layer.filter_shape:
                raise CacheMismatch(
                    "conv {} weights {} != {}".format(conv_index, w.shape, layer.filter_shape)
                )
            if saved.shape[0] != dx.shape[0]:
                raise CacheMismatch("cached batch size differs from the gradient's")
            dx, dweights[conv_index], dbiases[conv_index] = conv_backward(dx, saved, w, layer)
        elif isinstance(layer, ReLU) and kind == "relu":
            dx = dx * saved
        elif isinstance(layer, MaxPool) and kind == "pool":
            argmax, shape = saved
            dx = maxpool_backward(dx, argmax, shape, layer.size)
        else:
            raise CacheMismatch("cache entry '{}' does not match layer {}".format(kind, layer))
    return Gradients(dweights, dbiases)


### loss ###


def softmax_cross_entropy(scores: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """mean softmax cross-entropy over the batch and its gradient w.r.t. the scores"""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    b = scores.shape[0]
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -float(np.mean(log_probs[np.arange(b), labels]))
    dscores = np.exp(log_probs)
    dscores[np.arange(b), labels] -= 1.0
    return loss, dscores / b
