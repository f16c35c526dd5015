"""Bit-exact 2-bit packing and the TBN1 model container.

Code to bit-pair map: -2 -> 00, -1 -> 01, 1 -> 10, 2 -> 11. Element i occupies bits
2*(i mod 4) and 2*(i mod 4)+1 of byte i // 4, first element in the least significant pair.

TBN1 layout (little-endian):
    magic "TBN1" | u32 layer_count
    per layer: u32 in_c, u32 out_c (K), u32 fh, u32 fw, u32 stride, u32 padding, u8 has_bias
               per filter k < K: binary32 alpha, ceil(in_c*fh*fw / 4) packed bytes
               if has_bias: K binary32 values
"""
import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from tbn.quantizer import TwoBitFilter, validate_codes
from tbn.tbn_error import (
    BadMagic,
    CorruptLength,
    NonFiniteValue,
    NonPositiveAlpha,
    NonZeroPadBits,
    ShapeMismatch,
    SinkWriteError,
    TruncatedInput,
    UnsupportedVersion,
)
from tbn.util import atomic_write

MAGIC = b"TBN1"
MAGIC_PREFIX = b"TBN"
VERSION = b"1"

_CODE_FROM_BITS = np.array([-2, -1, 1, 2], dtype=np.int8)
_SHIFTS = np.array([0, 2, 4, 6], dtype=np.uint8)

_LAYER_HEADER = struct.Struct("<6IB")
_U32 = struct.Struct("<I")
_F32 = struct.Struct("<f")

# params of published architectures, used by the memory comparison
MEMSIZE_PRESETS = {
    "alexnet": 61_000_000,
    "resnet18": 11_689_512,
    "vgg19": 143_667_240,
}


@dataclass(frozen=True)
class PackedCodes:
    byte_array: bytes
    n: int

    @property
    def nbytes(self) -> int:
        return packed_length(self.n)


def packed_length(n: int) -> int:
    return (n + 3) // 4


def pack_codes(codes) -> PackedCodes:
    """packs codes in {-2, -1, 1, 2} four to a byte."""
    codes = validate_codes(codes).reshape(-1)
    n = codes.size
    # -2, -1, 1, 2 -> 0, 1, 2, 3
    bits = (codes + 2 - (codes > 0)).astype(np.uint8)
    padded = np.zeros(packed_length(n) * 4, dtype=np.uint8)
    padded[:n] = bits
    quads = padded.reshape(-1, 4) << _SHIFTS
    packed = np.bitwise_or.reduce(quads, axis=1).astype(np.uint8)
    return PackedCodes(packed.tobytes(), n)


def _bit_pairs(p: PackedCodes) -> np.ndarray:
    need = packed_length(p.n)
    if len(p.byte_array) < need:
        raise TruncatedInput(
            "{} codes need {} bytes, got {}".format(p.n, need, len(p.byte_array)),
            len(p.byte_array),
        )
    raw = np.frombuffer(p.byte_array, dtype=np.uint8, count=need)
    return ((raw[:, None] >> _SHIFTS) & 0b11).reshape(-1)


def unpack_codes(p: PackedCodes) -> np.ndarray:
    """exact inverse of pack_codes; returns int8 codes."""
    return _CODE_FROM_BITS[_bit_pairs(p)[: p.n]]


def has_zero_padding(p: PackedCodes) -> bool:
    return not np.any(_bit_pairs(p)[p.n :])


### TBN model ###


@dataclass(frozen=True)
class LayerMeta:
    in_channels: int
    out_channels: int
    fh: int
    fw: int
    stride: int = 1
    padding: int = 0

    @property
    def filter_shape(self) -> Tuple[int, int, int]:
        return self.in_channels, self.fh, self.fw

    @property
    def filter_size(self) -> int:
        return self.in_channels * self.fh * self.fw


@dataclass(frozen=True)
class PackedFilter:
    codes: PackedCodes
    alpha: float


@dataclass(frozen=True, eq=False)
class TbnLayer:
    meta: LayerMeta
    filters: Tuple[PackedFilter, ...]
    bias: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(self.filters))
        if self.bias is not None:
            bias = np.array(self.bias, dtype=np.float32).reshape(-1)
            bias.setflags(write=False)
            object.__setattr__(self, "bias", bias)
        validate_layer(self)

    @classmethod
    def from_filters(
        cls,
        meta: LayerMeta,
        filters: Sequence[TwoBitFilter],
        bias: Optional[np.ndarray] = None,
    ) -> "TbnLayer":
        packed = tuple(PackedFilter(pack_codes(f.codes), f.alpha) for f in filters)
        return cls(meta, packed, bias)

    def two_bit_filters(self) -> List[TwoBitFilter]:
        return [
            TwoBitFilter(self.meta.filter_shape, unpack_codes(f.codes), f.alpha)
            for f in self.filters
        ]

    def code_stack(self) -> np.ndarray:
        """codes of all filters, shaped (K, in_c, fh, fw)"""
        return np.stack(
            [unpack_codes(f.codes).reshape(self.meta.filter_shape) for f in self.filters]
        )

    def alphas(self) -> np.ndarray:
        return np.array([f.alpha for f in self.filters], dtype=np.float32)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TbnLayer):
            return NotImplemented
        if self.meta != other.meta or self.filters != other.filters:
            return False
        if self.bias is None or other.bias is None:
            return self.bias is None and other.bias is None
        return np.array_equal(self.bias, other.bias)


@dataclass(frozen=True)
class TbnModel:
    layers: Tuple[TbnLayer, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def param_count(self) -> int:
        return sum(l.meta.filter_size * l.meta.out_channels for l in self.layers)


def validate_layer(layer: TbnLayer) -> None:
    meta = layer.meta
    dims = (meta.in_channels, meta.out_channels, meta.fh, meta.fw, meta.stride)
    if min(dims) < 1 or meta.padding < 0:
        raise ShapeMismatch("invalid layer meta {}".format(meta))
    if len(layer.filters) != meta.out_channels:
        raise ShapeMismatch(
            "layer declares {} filters, holds {}".format(
                meta.out_channels, len(layer.filters)
            )
        )
    for k, f in enumerate(layer.filters):
        if f.codes.n != meta.filter_size:
            raise ShapeMismatch(
                "filter {} has {} codes, layer needs {}".format(k, f.codes.n, meta.filter_size)
            )
        # alpha is stored as binary32
        with np.errstate(over="ignore"):
            stored = np.float32(f.alpha)
        if not np.isfinite(stored):
            raise NonFiniteValue(
                "filter {} has alpha {}, not finite in binary32".format(k, f.alpha)
            )
        if not stored > 0:
            raise NonPositiveAlpha(
                "filter {} has alpha {}, {} in binary32".format(k, f.alpha, stored)
            )
    if layer.bias is not None and layer.bias.size != meta.out_channels:
        raise ShapeMismatch(
            "bias has {} values for {} filters".format(layer.bias.size, meta.out_channels)
        )


def encode_model(m: TbnModel) -> bytes:
    out = bytearray(MAGIC)
    out += _U32.pack(len(m.layers))
    for layer in m.layers:
        meta = layer.meta
        out += _LAYER_HEADER.pack(
            meta.in_channels,
            meta.out_channels,
            meta.fh,
            meta.fw,
            meta.stride,
            meta.padding,
            0 if layer.bias is None else 1,
        )
        for f in layer.filters:
            out += _F32.pack(f.alpha)
            out += f.codes.byte_array[: f.codes.nbytes]
        if layer.bias is not None:
            out += layer.bias.astype("<f4").tobytes()
    return bytes(out)


def save_model(m: TbnModel, out: BinaryIO) -> None:
    data = encode_model(m)
    try:
        written = out.write(data)
    except (OSError, ValueError) as e:
        raise SinkWriteError("could not write model: {}".format(e)) from e
    if written is not None and written != len(data):
        raise SinkWriteError("short write: {} of {} bytes".format(written, len(data)))


def save_model_file(m: TbnModel, path: str) -> int:
    """writes the model atomically and returns the file size in bytes."""
    with atomic_write(path) as f:
        save_model(m, f)
        return f.tell()


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptLength(
                "need {} bytes of {} at offset {}, only {} left".format(
                    n, what, self.pos, len(self.data) - self.pos
                )
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk


def decode_model(data: bytes) -> TbnModel:
    if data[:4] != MAGIC:
        if data[:3] == MAGIC_PREFIX and len(data) >= 4:
            raise UnsupportedVersion("unsupported TBN version {!r}".format(data[3:4]))
        raise BadMagic("expected magic {!r}, got {!r}".format(MAGIC, data[:4]))
    cur = _Cursor(data)
    cur.take(4, "magic")
    (layer_count,) = _U32.unpack(cur.take(4, "layer count"))

    layers = []
    for l in range(layer_count):
        header_pos = cur.pos
        in_c, out_c, fh, fw, stride, pad, has_bias = _LAYER_HEADER.unpack(
            cur.take(_LAYER_HEADER.size, "layer header")
        )
        if min(in_c, out_c, fh, fw, stride) < 1 or has_bias not in (0, 1):
            raise CorruptLength(
                "layer {} header at offset {} is invalid".format(l, header_pos)
            )
        meta = LayerMeta(in_c, out_c, fh, fw, stride, pad)
        n = meta.filter_size
        filters = []
        for k in range(out_c):
            (alpha,) = _F32.unpack(cur.take(4, "alpha"))
            if not alpha > 0:
                raise NonPositiveAlpha(
                    "layer {} filter {} has alpha {}".format(l, k, alpha)
                )
            codes = PackedCodes(cur.take(packed_length(n), "packed codes"), n)
            if not has_zero_padding(codes):
                raise NonZeroPadBits(
                    "layer {} filter {} has non-zero trailing pad bits".format(l, k)
                )
            filters.append(PackedFilter(codes, alpha))
        bias = None
        if has_bias:
            bias = np.frombuffer(cur.take(4 * out_c, "bias"), dtype="<f4")
        layers.append(TbnLayer(meta, tuple(filters), bias))

    if cur.pos != len(data):
        raise CorruptLength("{} trailing bytes after the last layer".format(len(data) - cur.pos))
    return TbnModel(tuple(layers))


def load_model(source: BinaryIO) -> TbnModel:
    return decode_model(source.read())


def load_model_file(path: str) -> TbnModel:
    with open(path, "rb") as f:
        return load_model(f)


def model_bytes(m: TbnModel) -> int:
    buf = io.BytesIO()
    save_model(m, buf)
    return buf.tell()


### memory size ###


class MemorySize(NamedTuple):
    param_count: int
    two_bit_bytes: int
    double_bytes: int
    ratio: float


def model_size_bytes(
    param_count: int, bits_per_weight: int = 2, alpha_overhead: int = 0
) -> MemorySize:
    """packed size ceil(params * bits / 8) + alpha_overhead against 8 bytes per double weight.
    ratio is double / packed, 0.0 when there are no parameters.
    """
    if param_count < 0:
        raise ValueError("param_count must be >= 0, got {}".format(param_count))
    if bits_per_weight < 1:
        raise ValueError("bits_per_weight must be >= 1, got {}".format(bits_per_weight))
    packed = (param_count * bits_per_weight + 7) // 8 + alpha_overhead
    double = 8 * param_count
    ratio = double / packed if param_count > 0 and packed > 0 else 0.0
    return MemorySize(param_count, packed, double, ratio)


def container_overhead_bytes(m: TbnModel) -> int:
    """bytes of a TBN1 file that are not packed codes: header, layer metas, alphas, biases."""
    overhead = len(MAGIC) + _U32.size
    for layer in m.layers:
        overhead += _LAYER_HEADER.size + 4 * layer.meta.out_channels
        if layer.bias is not None:
            overhead += 4 * layer.meta.out_channels
    return overhead
