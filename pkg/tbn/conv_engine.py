"""Convolution (cross-correlation, zero padding) over real and two-bit filters.

correlate() is the full-precision multiply-accumulate oracle. correlate_two_bit() is the
multiplication-free path: every filter tap adds, subtracts or doubles an input window into
a float64 accumulator, and each output element is scaled exactly once by its filter's alpha.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from tbn.quantizer import TwoBitFilter, validate_codes
from tbn.tbn_error import ShapeMismatch
from tbn.tensor import Tensor, TensorLike, as_array


@dataclass(frozen=True)
class ConvSpec:
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if int(self.stride) < 1:
            raise ShapeMismatch("stride must be >= 1, got {}".format(self.stride))
        if int(self.padding) < 0:
            raise ShapeMismatch("padding must be >= 0, got {}".format(self.padding))

    def output_size(self, size: int, k: int) -> int:
        out = (size + 2 * self.padding - k) // self.stride + 1
        if size + 2 * self.padding < k or out < 1:
            raise ShapeMismatch(
                "kernel {} does not fit input {} with padding {}".format(k, size, self.padding)
            )
        return out

    def output_shape(self, h: int, w: int, fh: int, fw: int) -> Tuple[int, int]:
        return self.output_size(h, fh), self.output_size(w, fw)


@dataclass
class OpCounter:
    additions: int = 0
    multiplications: int = 0


class Accumulator:
    """float64 accumulation buffer restricted to add, subtract and doubling.
    scale() is the only multiplying operation and touches each element once.
    """

    def __init__(self, shape: Tuple[int, ...], counter: Optional[OpCounter] = None):
        self.buffer = np.zeros(shape, dtype=np.float64)
        self.counter = counter

    def _count_additions(self, index) -> None:
        if self.counter is not None:
            self.counter.additions += self.buffer[index].size

    def add(self, index, x: np.ndarray) -> None:
        self.buffer[index] += x
        self._count_additions(index)

    def subtract(self, index, x: np.ndarray) -> None:
        self.buffer[index] -= x
        self._count_additions(index)

    def double(self, x: np.ndarray) -> np.ndarray:
        if self.counter is not None:
            self.counter.additions += x.size
        return x + x

    def scale(self, factors: np.ndarray) -> np.ndarray:
        out = self.buffer * factors
        if self.counter is not None:
            self.counter.multiplications += out.size
        return out


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """normwise relative deviation max|a - b| / max|b| of a against the reference b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch("cannot compare shapes {} and {}".format(a.shape, b.shape))
    if a.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(b))), 1e-30)
    return float(np.max(np.abs(a - b))) / scale


def _check_batch(x: np.ndarray, filter_shape: Tuple[int, ...]) -> None:
    if x.ndim != 4:
        raise ShapeMismatch("input batch must be (B, C, H, W), got {}".format(x.shape))
    if len(filter_shape) != 4:
        raise ShapeMismatch("filters must be (K, C, fh, fw), got {}".format(filter_shape))
    if x.shape[1] != filter_shape[1]:
        raise ShapeMismatch(
            "input has {} channels, filters expect {}".format(x.shape[1], filter_shape[1])
        )


def pad_batch(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def tap_window(xp: np.ndarray, i: int, j: int, oh: int, ow: int, stride: int) -> np.ndarray:
    """input values met by filter tap (i, j) across all output positions: (B, C, oh, ow)"""
    return xp[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride]


def correlate(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """full-precision multiply-accumulate cross-correlation.

    Args:
        x (np.ndarray): input batch (B, C, H, W)
        w (np.ndarray): real filters (K, C, fh, fw)
        spec (ConvSpec): stride and zero padding

    Returns:
        np.ndarray: float64 output (B, K, oh, ow)
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    _check_batch(x, w.shape)
    k, _, fh, fw = w.shape
    oh, ow = spec.output_shape(x.shape[2], x.shape[3], fh, fw)
    xp = pad_batch(x, spec.padding)
    out = np.zeros((x.shape[0], k, oh, ow), dtype=np.float64)
    for i in range(fh):
        for j in range(fw):
            window = tap_window(xp, i, j, oh, ow, spec.stride)
            out += np.einsum("bcyx,kc->bkyx", window, w[:, :, i, j])
    return out


def correlate_two_bit(
    x: np.ndarray,
    codes: np.ndarray,
    alphas: np.ndarray,
    spec: ConvSpec,
    counter: Optional[OpCounter] = None,
) -> np.ndarray:
    """multiplication-free cross-correlation with two-bit filters.

    Args:
        x (np.ndarray): input batch (B, C, H, W)
        codes (np.ndarray): codes in {-2, -1, 1, 2}, (K, C, fh, fw)
        alphas (np.ndarray): per-filter output scale, (K,)
        spec (ConvSpec): stride and zero padding
        counter (OpCounter, optional): receives the operation counts. Defaults to None.

    Returns:
        np.ndarray: float64 output (B, K, oh, ow)
    """
    x = np.asarray(x, dtype=np.float64)
    codes = validate_codes(codes)
    _check_batch(x, codes.shape)
    k, c, fh, fw = codes.shape
    scales = np.asarray(alphas, dtype=np.float64).reshape(-1)
    if scales.size != k:
        raise ShapeMismatch("{} alphas for {} filters".format(scales.size, k))

    oh, ow = spec.output_shape(x.shape[2], x.shape[3], fh, fw)
    xp = pad_batch(x, spec.padding)
    acc = Accumulator((x.shape[0], k, oh, ow), counter)
    groups = {v: codes == v for v in (1, -1, 2, -2)}

    # fixed accumulation order: row, column, channel
    for i in range(fh):
        for j in range(fw):
            windows = tap_window(xp, i, j, oh, ow, spec.stride)
            for ch in range(c):
                window = windows[:, ch][:, None]
                plus1 = np.flatnonzero(groups[1][:, ch, i, j])
                minus1 = np.flatnonzero(groups[-1][:, ch, i, j])
                plus2 = np.flatnonzero(groups[2][:, ch, i, j])
                minus2 = np.flatnonzero(groups[-2][:, ch, i, j])
                if plus1.size:
                    acc.add((slice(None), plus1), window)
                if minus1.size:
                    acc.subtract((slice(None), minus1), window)
                if plus2.size or minus2.size:
                    doubled = acc.double(window)
                    if plus2.size:
                        acc.add((slice(None), plus2), doubled)
                    if minus2.size:
                        acc.subtract((slice(None), minus2), doubled)
    return acc.scale(scales[None, :, None, None])


### tensor-level API ###


def _single_input(input: TensorLike) -> np.ndarray:
    x = as_array(input)
    if x.ndim != 3:
        raise ShapeMismatch("input must be (c, h, w), got {}".format(x.shape))
    return x[None]


def conv_reference(input: TensorLike, filter: TensorLike, spec: ConvSpec = ConvSpec()) -> Tensor:
    """one output map of input cross-correlated with a real (c, fh, fw) filter"""
    w = as_array(filter)
    if w.ndim != 3:
        raise ShapeMismatch("filter must be (c, fh, fw), got {}".format(w.shape))
    out = correlate(_single_input(input), w[None], spec)
    return Tensor.from_array(out[0, 0])


def conv_mfree(
    input: TensorLike,
    filter: TwoBitFilter,
    spec: ConvSpec = ConvSpec(),
    counter: Optional[OpCounter] = None,
) -> Tensor:
    """one output map of input cross-correlated with a two-bit filter, without multiplies"""
    if len(filter.shape) != 3:
        raise ShapeMismatch("filter must be (c, fh, fw), got {}".format(filter.shape))
    out = correlate_two_bit(
        _single_input(input), filter.code_array()[None], np.array([filter.alpha]), spec, counter
    )
    return Tensor.from_array(out[0, 0])


def stack_filters(filters: Sequence[TwoBitFilter]) -> Tuple[np.ndarray, np.ndarray]:
    if len(filters) == 0:
        raise ShapeMismatch("a layer needs at least one filter")
    shape = filters[0].shape
    for k, f in enumerate(filters):
        if f.shape != shape:
            raise ShapeMismatch("filter {} has shape {}, expected {}".format(k, f.shape, shape))
    if len(shape) != 3:
        raise ShapeMismatch("filters must be (c, fh, fw), got {}".format(shape))
    codes = np.stack([f.code_array() for f in filters])
    alphas = np.array([f.alpha for f in filters], dtype=np.float64)
    return codes, alphas


def conv_layer_forward(
    input: TensorLike,
    filters: Sequence[TwoBitFilter],
    spec: ConvSpec = ConvSpec(),
    bias: Optional[Sequence[float]] = None,
    counter: Optional[OpCounter] = None,
) -> Tensor:
    """K stacked two-bit output maps (K, oh, ow), plus one bias per map"""
    codes, alphas = stack_filters(filters)
    out = correlate_two_bit(_single_input(input), codes, alphas, spec, counter)[0]
    if bias is not None:
        b = np.asarray(bias, dtype=np.float64).reshape(-1)
        if b.size != len(filters):
            raise ShapeMismatch("{} biases for {} filters".format(b.size, len(filters)))
        out = out + b[:, None, None]
    return Tensor.from_array(out)
