"""Executes TBN1 models on input batches."""
from typing import Optional

import numpy as np

from tbn.conv_engine import ConvSpec, OpCounter, correlate, correlate_two_bit
from tbn.packed_format import TbnLayer, TbnModel
from tbn.tbn_error import ShapeMismatch
from tbn.tbn_train import network


def _layer_forward(
    layer: TbnLayer, x: np.ndarray, reference: bool, counter: Optional[OpCounter]
) -> np.ndarray:
    meta = layer.meta
    spec = ConvSpec(meta.stride, meta.padding)
    codes = layer.code_stack()
    alphas = layer.alphas().astype(np.float64)
    if reference:
        approx = alphas.reshape(-1, 1, 1, 1) * codes
        out = correlate(x, approx, spec)
    else:
        out = correlate_two_bit(x, codes, alphas, spec, counter)
    if layer.bias is not None:
        out = out + layer.bias.astype(np.float64)[None, :, None, None]
    return out


def run_model(
    model: TbnModel,
    x: np.ndarray,
    net: Optional[network.NetSpec] = None,
    reference: bool = False,
    counter: Optional[OpCounter] = None,
) -> np.ndarray:
    """runs a batch (B, C, H, W) or a single input (C, H, W) through the model.

    Without net, ReLU sits between consecutive conv layers. With net, its non-parametric
    layers are replayed around the model's conv layers in order. reference=True uses
    multiply-accumulate convolutions over alpha * codes instead of the two-bit path.

    Returns:
        np.ndarray: float64 outputs (B, K, oh, ow) of the last layer, or class scores
        (B, classes) when net is given
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise ShapeMismatch("input must be (B, C, H, W) or (C, H, W), got {}".format(x.shape))

    if net is not None:
        convs = net.conv_layers
        if len(convs) != len(model.layers):
            raise ShapeMismatch(
                "network has {} conv layers, model {}".format(len(convs), len(model.layers))
            )
        for k, (conv, layer) in enumerate(zip(convs, model.layers)):
            if conv.meta() != layer.meta:
                raise ShapeMismatch("layer {} differs: {} != {}".format(k, conv.meta(), layer.meta))

        def conv_fn(i: int, conv: network.Conv, h: np.ndarray) -> np.ndarray:
            return _layer_forward(model.layers[i], h, reference, counter)

        out = network.run_layers(net, x, conv_fn)
    else:
        out = x
        for i, layer in enumerate(model.layers):
            if i > 0:
                out = np.maximum(out, 0.0)
            out = _layer_forward(layer, out, reference, counter)

    return out[0] if single else out
