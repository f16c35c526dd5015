"""Two-bit quantization of real-valued filters.

A filter W is approximated by alpha * W~ with codes W~ in {-2, -1, 1, 2}. Codes come from a
deterministic piecewise discretization, alpha from the closed-form minimizer of
J(alpha) = ||W - alpha * W~||^2 given those codes.
"""
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from tbn.tbn_error import (
    EmptyFilter,
    InvalidCode,
    LengthMismatch,
    NonFiniteValue,
    NonPositiveAlpha,
)
from tbn.tensor import Shape, TensorLike, as_array, shape_of

CODE_ALPHABET = (-2, -1, 1, 2)

# stands in for alpha* = 0 of an all-zero filter
ALPHA_EPS = 1e-12


def validate_codes(codes: np.ndarray) -> np.ndarray:
    """checks that every code lies in {-2, -1, 1, 2} and returns them as int8."""
    codes = np.asarray(codes)
    if codes.size and not np.all(np.isin(codes, CODE_ALPHABET)):
        bad = np.flatnonzero(~np.isin(codes.reshape(-1), CODE_ALPHABET))[0]
        raise InvalidCode(
            "code {} at flat index {} is not in {}".format(
                codes.reshape(-1)[bad], bad, CODE_ALPHABET
            )
        )
    return codes.astype(np.int8)


@dataclass(frozen=True)
class QuantReport:
    alpha_star: float
    error_J: float
    b1_count: int
    b2_count: int
    # alpha* was 0 (all-zero filter) and got replaced by ALPHA_EPS
    clamped: bool = False


@dataclass(frozen=True, eq=False)
class TwoBitFilter:
    shape: Shape
    codes: np.ndarray = field(repr=False)
    alpha: float

    def __post_init__(self):
        codes = validate_codes(self.codes).reshape(-1)
        if codes.size != int(np.prod(self.shape)):
            raise LengthMismatch(
                "{} codes for filter shape {}".format(codes.size, self.shape)
            )
        # alpha is kept at binary32 precision
        with np.errstate(over="ignore"):
            alpha = np.float32(self.alpha)
        if not np.isfinite(alpha):
            raise NonFiniteValue("alpha must be finite in binary32, got {}".format(self.alpha))
        if not alpha > 0:
            raise NonPositiveAlpha("alpha must be > 0 in binary32, got {}".format(self.alpha))
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        object.__setattr__(self, "alpha", float(alpha))

    @property
    def n(self) -> int:
        return self.codes.size

    def code_array(self) -> np.ndarray:
        return self.codes.reshape(self.shape)

    def approx(self) -> np.ndarray:
        """the approximate real filter alpha * W~ (float64)"""
        return self.alpha * self.code_array().astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TwoBitFilter):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.alpha == other.alpha
            and np.array_equal(self.codes, other.codes)
        )


def discretize(w: TensorLike) -> np.ndarray:
    """maps each weight to its code:
    w < -1 -> -2, -1 <= w <= 0 -> -1, 0 < w <= 1 -> 1, w > 1 -> 2

    Returns:
        np.ndarray: int8 codes with the shape of w
    """
    a = as_array(w)
    codes = np.where(a > 0, 1, -1).astype(np.int8)
    codes[a > 1] = 2
    codes[a < -1] = -2
    return codes


def _alpha_terms(magnitudes: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """numerator, denominator and |B2| of alpha*, reduced over the last axis.

    magnitudes are |W_i| as float64; sums are carried out in extended precision.
    """
    in_b2 = magnitudes > 1
    b2_count = np.count_nonzero(in_b2, axis=-1)
    b1_count = magnitudes.shape[-1] - b2_count
    s1 = np.sum(np.where(in_b2, 0.0, magnitudes), axis=-1, dtype=np.longdouble)
    s2 = np.sum(np.where(in_b2, magnitudes, 0.0), axis=-1, dtype=np.longdouble)
    numerator = s1 + 2 * s2
    denominator = b1_count + 4 * b2_count
    return numerator, denominator, b2_count


def _flatten_filters(w: TensorLike) -> np.ndarray:
    a = as_array(w)
    if a.size == 0:
        raise EmptyFilter("filter with shape {} has no elements".format(shape_of(w)))
    return a.reshape(1, -1)


def optimal_alpha(w: TensorLike) -> float:
    """alpha* = (sum_B1 |W_i| + 2 sum_B2 |W_i|) / (|B1| + 4 |B2|), rounded to binary32.
    An all-zero filter gives ALPHA_EPS instead of 0.
    """
    mags = np.abs(_flatten_filters(w))
    numerator, denominator, _ = _alpha_terms(mags)
    alpha = float(np.float32(numerator[0] / denominator[0]))
    return alpha if alpha > 0 else ALPHA_EPS


def quantization_error(w: TensorLike, alpha: float, codes: np.ndarray) -> float:
    """J(alpha) = ||W - alpha * codes||^2, computed directly."""
    a = as_array(w).reshape(-1)
    c = np.asarray(codes).reshape(-1)
    if a.size != c.size:
        raise LengthMismatch("{} weights but {} codes".format(a.size, c.size))
    if not alpha > 0:
        raise NonPositiveAlpha("alpha must be > 0, got {}".format(alpha))
    residual = a - alpha * c.astype(np.float64)
    return float(np.sum(residual * residual, dtype=np.longdouble))


def expanded_quantization_error(w: TensorLike, alpha: float) -> float:
    """J(alpha) in its expanded quadratic form for codes = discretize(w):
    (|B1| + 4|B2|) alpha^2 - 2 (sum_B1 |W_i| + 2 sum_B2 |W_i|) alpha + sum W_i^2
    """
    a = as_array(w).reshape(1, -1)
    numerator, denominator, _ = _alpha_terms(np.abs(a))
    constant = np.sum(a * a, dtype=np.longdouble)
    j = denominator[0] * alpha * alpha - 2 * numerator[0] * alpha + constant
    return float(j)


def quantize_filters(w: np.ndarray) -> Tuple[np.ndarray, np.ndarray, List[QuantReport]]:
    """quantizes a stack of filters at once; filter k is w[k].

    Args:
        w (np.ndarray): real filters with shape (K, ...)

    Returns:
        Tuple[np.ndarray, np.ndarray, List[QuantReport]]: int8 codes shaped like w,
        binary32 alphas of shape (K,), one report per filter
    """
    a = as_array(w)
    if a.ndim < 1 or a.shape[0] == 0:
        return np.zeros(a.shape, dtype=np.int8), np.zeros(0, dtype=np.float32), []
    flat = a.reshape(a.shape[0], -1)
    if flat.shape[1] == 0:
        raise EmptyFilter("filters with shape {} have no elements".format(a.shape[1:]))

    codes = discretize(flat)
    numerator, denominator, b2_count = _alpha_terms(np.abs(flat))
    raw = (numerator / denominator).astype(np.float32)
    clamped = ~(raw > 0)
    alphas = np.where(clamped, np.float32(ALPHA_EPS), raw).astype(np.float32)

    residual = flat - alphas.astype(np.float64)[:, None] * codes
    errors = np.sum(residual * residual, axis=1, dtype=np.longdouble)

    reports = [
        QuantReport(
            alpha_star=float(alphas[k]),
            error_J=float(errors[k]),
            b1_count=int(flat.shape[1] - b2_count[k]),
            b2_count=int(b2_count[k]),
            clamped=bool(clamped[k]),
        )
        for k in range(flat.shape[0])
    ]
    return codes.reshape(a.shape), alphas, reports


def quantize_filter(w: TensorLike) -> Tuple[TwoBitFilter, QuantReport]:
    """two-step solution of min ||W - alpha W~||^2: discretize, then the optimal alpha."""
    a = _flatten_filters(w)
    codes, alphas, reports = quantize_filters(a)
    shape = shape_of(w)
    return TwoBitFilter(shape, codes.reshape(-1), float(alphas[0])), reports[0]
