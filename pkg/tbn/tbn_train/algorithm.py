"""SGD training of two-bit networks.

Every iteration re-quantizes the real-valued shadow filters, runs forward and backward
passes through the approximate filters alpha * W~, and applies the resulting gradient
straight to the shadow filters.
"""
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from tbn.conv_engine import correlate, correlate_two_bit
from tbn.packed_format import TbnLayer, TbnModel
from tbn.quantizer import QuantReport, TwoBitFilter, quantize_filters
from tbn.tbn_error import ShapeMismatch
from tbn.tbn_train import network
from tbn.tbn_train.dataset import Batch, Dataset
from tbn.tbn_train.network import Conv, ForwardCache, Gradients, NetSpec
from tbn.tbn_train.train_config import TrainConfig, schedule_lr

# pre-quantization weights start inside [-INIT_BOUND, INIT_BOUND]
INIT_BOUND = 1.5


@dataclass
class TrainState:
    net: NetSpec
    # real-valued shadow filters, one (K, C, fh, fw) float32 array per conv layer
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    weight_velocity: List[np.ndarray]
    bias_velocity: List[np.ndarray]
    epoch: int = 0
    iteration: int = 0
    eta: float = 0.1


@dataclass(frozen=True)
class ApproxLayer:
    """one conv layer as used by the forward pass; codes and alphas are None for float layers"""

    conv: Conv
    approx: np.ndarray
    bias: np.ndarray
    codes: Optional[np.ndarray] = None
    alphas: Optional[np.ndarray] = None
    reports: Tuple[QuantReport, ...] = field(default=(), repr=False)

    @property
    def quantized(self) -> bool:
        return self.codes is not None

    def filters(self) -> List[TwoBitFilter]:
        if not self.quantized:
            return []
        shape = self.conv.filter_shape[1:]
        return [TwoBitFilter(shape, c.reshape(-1), a) for c, a in zip(self.codes, self.alphas)]


def init_state(net: NetSpec, config: TrainConfig, seed: Optional[int] = None) -> TrainState:
    """standard normal shadow filters clipped to [-1.5, 1.5], zero biases.
    The fan-in scaling lives in each layer's gain.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    weights, biases = [], []
    for conv in net.conv_layers:
        w = np.clip(rng.standard_normal(conv.filter_shape), -INIT_BOUND, INIT_BOUND)
        weights.append(w.astype(np.float32))
        biases.append(np.zeros(conv.out_channels, dtype=np.float32))
    return TrainState(
        net=net,
        weights=weights,
        biases=biases,
        weight_velocity=[np.zeros_like(w) for w in weights],
        bias_velocity=[np.zeros_like(b) for b in biases],
        eta=schedule_lr(0, config),
    )


def approximate_all_filters(state: TrainState) -> List[ApproxLayer]:
    """two-bit codes, optimal alphas and approximate filters for every conv layer.
    Shadow weights are only read.
    """
    layers = []
    for conv, w, b in zip(state.net.conv_layers, state.weights, state.biases):
        if not conv.quantize:
            layers.append(ApproxLayer(conv, np.array(w, dtype=np.float32), b))
            continue
        codes, alphas, reports = quantize_filters(w)
        approx = (alphas.reshape(-1, 1, 1, 1) * codes).astype(np.float32)
        layers.append(ApproxLayer(conv, approx, b, codes, alphas, tuple(reports)))
    return layers


def real_layers(state: TrainState) -> List[ApproxLayer]:
    """the shadow filters themselves as forward-pass layers"""
    return [
        ApproxLayer(c, np.asarray(w, dtype=np.float32), b)
        for c, w, b in zip(state.net.conv_layers, state.weights, state.biases)
    ]


def _layer_conv_fn(layers: Sequence[ApproxLayer], two_bit: bool) -> network.ConvFn:
    def conv_fn(i: int, conv: Conv, x: np.ndarray) -> np.ndarray:
        layer = layers[i]
        bias = np.asarray(layer.bias, dtype=np.float64)[None, :, None, None]
        if two_bit and layer.quantized:
            scales = np.asarray(layer.alphas, dtype=np.float64) * conv.gain
            return correlate_two_bit(x, layer.codes, scales, conv.spec) + bias
        return correlate(x, layer.approx, conv.spec) * conv.gain + bias

    return conv_fn


def _check_layers(net: NetSpec, layers: Sequence[ApproxLayer]) -> None:
    convs = net.conv_layers
    if len(layers) != len(convs):
        raise ShapeMismatch("{} layers for {} conv layers".format(len(layers), len(convs)))
    for k, (conv, layer) in enumerate(zip(convs, layers)):
        if layer.approx.shape != conv.filter_shape:
            raise ShapeMismatch(
                "layer {} filters {} != {}".format(k, layer.approx.shape, conv.filter_shape)
            )


def two_bit_forward(
    net: NetSpec, x: np.ndarray, layers: Sequence[ApproxLayer]
) -> Tuple[np.ndarray, ForwardCache]:
    """class scores (B, classes) through the multiplication-free path plus the backward cache"""
    _check_layers(net, layers)
    cache = ForwardCache(net)
    scores = network.run_layers(net, x, _layer_conv_fn(layers, True), cache)
    return scores, cache


def reference_forward(
    net: NetSpec, x: np.ndarray, layers: Sequence[ApproxLayer]
) -> Tuple[np.ndarray, ForwardCache]:
    """same network with multiply-accumulate convolutions over the approximate filters"""
    _check_layers(net, layers)
    cache = ForwardCache(net)
    scores = network.run_layers(net, x, _layer_conv_fn(layers, False), cache)
    return scores, cache


def two_bit_backward(
    dscores: np.ndarray, cache: ForwardCache, approx: Sequence[np.ndarray]
) -> Gradients:
    """gradients w.r.t. the approximate filters and biases; nothing flows through the
    discretization, the caller applies them to the shadow filters as they are.
    """
    return network.backward(dscores, cache, approx)


def update_parameters(state: TrainState, grads: Gradients, config: TrainConfig) -> TrainState:
    """momentum SGD on the shadow filters: v <- mu v + g + lambda W, W <- W - eta v,
    then clipping to the code range plus margin. Biases get momentum but neither
    decay nor clipping.
    """
    if len(grads.weights) != len(state.weights) or len(grads.biases) != len(state.biases):
        raise ShapeMismatch("gradients do not match the network's layers")
    mu, lam, eta = config.momentum, config.weight_decay, state.eta

    weights, velocity, biases, bias_velocity = [], [], [], []
    for w, v, g in zip(state.weights, state.weight_velocity, grads.weights):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != w.shape:
            raise ShapeMismatch("gradient {} for weights {}".format(g.shape, w.shape))
        w64 = w.astype(np.float64)
        v_new = mu * v.astype(np.float64) + g + lam * w64
        w_new = w64 - eta * v_new
        if config.clip:
            w_new = np.clip(w_new, -config.clip_bound, config.clip_bound)
        weights.append(w_new.astype(np.float32))
        velocity.append(v_new.astype(np.float32))

    for b, v, g in zip(state.biases, state.bias_velocity, grads.biases):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != b.shape:
            raise ShapeMismatch("bias gradient {} for biases {}".format(g.shape, b.shape))
        v_new = mu * v.astype(np.float64) + g
        biases.append((b.astype(np.float64) - eta * v_new).astype(np.float32))
        bias_velocity.append(v_new.astype(np.float32))

    return replace(
        state,
        weights=weights,
        biases=biases,
        weight_velocity=velocity,
        bias_velocity=bias_velocity,
    )


def train_minibatch(
    state: TrainState, batch: Batch, config: TrainConfig
) -> Tuple[TrainState, float]:
    """one SGD iteration: quantize, forward, loss, backward, update, learning rate."""
    layers = approximate_all_filters(state)
    scores, cache = two_bit_forward(state.net, batch.inputs, layers)
    loss, dscores = network.softmax_cross_entropy(scores, batch.targets)
    grads = two_bit_backward(dscores, cache, [l.approx for l in layers])
    state = update_parameters(state, grads, config)
    state = replace(state, iteration=state.iteration + 1, eta=schedule_lr(state.epoch, config))
    return state, loss


def float_minibatch(
    state: TrainState, batch: Batch, config: TrainConfig
) -> Tuple[TrainState, float]:
    """one SGD iteration of the real-valued baseline; filters are used as they are."""
    layers = real_layers(state)
    scores, cache = reference_forward(state.net, batch.inputs, layers)
    loss, dscores = network.softmax_cross_entropy(scores, batch.targets)
    grads = network.backward(dscores, cache, [l.approx for l in layers])
    state = update_parameters(state, grads, config)
    state = replace(state, iteration=state.iteration + 1, eta=schedule_lr(state.epoch, config))
    return state, loss


def advance_epoch(state: TrainState, config: TrainConfig) -> TrainState:
    epoch = state.epoch + 1
    return replace(state, epoch=epoch, eta=schedule_lr(epoch, config))


def export_inference_model(state: TrainState) -> TbnModel:
    """final quantization of the shadow filters into a TBN1 model.
    Each layer's gain is folded into its stored alphas.
    """
    layers = []
    for conv, w, b in zip(state.net.conv_layers, state.weights, state.biases):
        codes, alphas, _ = quantize_filters(w)
        scaled = (alphas.astype(np.float64) * conv.gain).astype(np.float32)
        shape = conv.filter_shape[1:]
        filters = [TwoBitFilter(shape, c.reshape(-1), a) for c, a in zip(codes, scaled)]
        layers.append(TbnLayer.from_filters(conv.meta(), filters, b))
    return TbnModel(tuple(layers))


def predict(
    state: TrainState, x: np.ndarray, chunk: int = 256, float_weights: bool = False
) -> np.ndarray:
    """class scores for all of x, processed in chunks"""
    if float_weights:
        layers = real_layers(state)
        forward = reference_forward
    else:
        layers = approximate_all_filters(state)
        forward = two_bit_forward
    parts = [forward(state.net, x[i : i + chunk], layers)[0] for i in range(0, len(x), chunk)]
    if not parts:
        return np.zeros((0, state.net.classes))
    return np.concatenate(parts)


def top_k_accuracy(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    if len(labels) == 0:
        return 0.0
    k = min(k, scores.shape[1])
    # stable sort keeps lower class indices first on ties
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(top == np.asarray(labels)[:, None], axis=1)))


def evaluate(
    state: TrainState, dataset: Dataset, k: int = 5, float_weights: bool = False
) -> Dict[str, float]:
    """top-1 and top-k accuracy on the whole dataset"""
    scores = predict(state, dataset.images, float_weights=float_weights)
    return {
        "top1": top_k_accuracy(scores, dataset.labels, 1),
        "top{}".format(k): top_k_accuracy(scores, dataset.labels, k),
    }
