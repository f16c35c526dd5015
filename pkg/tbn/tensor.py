import struct
from typing import BinaryIO, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from tbn.tbn_error import (
    BadMagic,
    CorruptLength,
    IndexOutOfBounds,
    LengthMismatch,
    NonFiniteValue,
    ShapeMismatch,
    TruncatedInput,
)

TBNF_MAGIC = b"TBNF"

_INDEX_LIMIT = np.iinfo(np.intp).max

Shape = Tuple[int, ...]


def check_shape(dims: Sequence[int]) -> Shape:
    """validates a shape: every dim >= 1 and the element count fits the index range.

    Args:
        dims (Sequence[int]): dimensions, outermost first

    Returns:
        Shape: the shape as a tuple of python ints
    """
    shape = tuple(int(d) for d in dims)
    if len(shape) == 0:
        raise ShapeMismatch("shape must have at least one dimension")
    count = 1
    for d in shape:
        if d < 1:
            raise ShapeMismatch("dimension {} in shape {} is < 1".format(d, shape))
        count *= d
    if count > _INDEX_LIMIT:
        raise ShapeMismatch("shape {} exceeds the index range".format(shape))
    return shape


def element_count(shape: Sequence[int]) -> int:
    count = 1
    for d in shape:
        count *= int(d)
    return count


def _first_non_finite(values: np.ndarray) -> Optional[int]:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size == 0:
        return None
    return int(bad[0])


class Tensor:
    """Dense, immutable binary32 tensor in row-major (last dim fastest) layout."""

    __slots__ = ("_shape", "_values")

    def __init__(self, shape: Sequence[int], values):
        shape = check_shape(shape)
        # always copies: the caller's storage is never shared or mutated
        flat = np.array(values, dtype=np.float64).reshape(-1)
        if flat.size != element_count(shape):
            raise LengthMismatch(
                "{} values given for shape {} ({} elements)".format(
                    flat.size, shape, element_count(shape)
                )
            )
        bad = _first_non_finite(flat)
        if bad is None:
            with np.errstate(over="ignore"):
                flat = flat.astype(np.float32)
            bad = _first_non_finite(flat)
        if bad is not None:
            raise NonFiniteValue(bad)
        flat.setflags(write=False)
        self._shape = shape
        self._values = flat

    @classmethod
    def from_array(cls, array: np.ndarray) -> "Tensor":
        array = np.asarray(array)
        return cls(array.shape, array.reshape(-1))

    @property
    def shape(self) -> Shape:
        return self._shape

    @property
    def values(self) -> np.ndarray:
        """read-only flat binary32 values"""
        return self._values

    @property
    def size(self) -> int:
        return self._values.size

    @property
    def rank(self) -> int:
        return len(self._shape)

    def strides(self) -> Tuple[int, ...]:
        strides = []
        step = 1
        for d in reversed(self._shape):
            strides.append(step)
            step *= d
        return tuple(reversed(strides))

    def at(self, idx: Sequence[int]) -> float:
        idx = tuple(int(i) for i in idx)
        if len(idx) != len(self._shape):
            raise IndexOutOfBounds(
                "index {} has rank {}, tensor has rank {}".format(
                    idx, len(idx), len(self._shape)
                )
            )
        offset = 0
        for i, d, s in zip(idx, self._shape, self.strides()):
            if i < 0 or i >= d:
                raise IndexOutOfBounds("index {} outside shape {}".format(idx, self._shape))
            offset += i * s
        return float(self._values[offset])

    def as_array(self) -> np.ndarray:
        """read-only view shaped like the tensor"""
        return self._values.reshape(self._shape)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self._shape == other._shape and np.array_equal(
            self._values, other._values
        )

    def __repr__(self) -> str:
        return "Tensor(shape={}, values={})".format(list(self._shape), self._values.tolist())


TensorLike = Union[Tensor, np.ndarray]


def tensor_new(shape: Sequence[int], values) -> Tensor:
    return Tensor(shape, values)


def tensor_at(t: Tensor, idx: Sequence[int]) -> float:
    return t.at(idx)


def as_array(t: TensorLike, dtype=np.float64) -> np.ndarray:
    """numeric view of a tensor-like argument; plain arrays are checked for finiteness."""
    if isinstance(t, Tensor):
        return t.as_array().astype(dtype)
    arr = np.asarray(t, dtype=dtype)
    bad = _first_non_finite(arr.reshape(-1))
    if bad is not None:
        raise NonFiniteValue(bad)
    return arr


def shape_of(t: TensorLike) -> Shape:
    return t.shape if isinstance(t, Tensor) else tuple(np.shape(t))


### TBNF raw tensor dump ###


def write_tbnf(stream: BinaryIO, t: Tensor) -> None:
    """magic 'TBNF' | u32 rank | rank x u32 dims | binary32 values, little-endian."""
    stream.write(TBNF_MAGIC)
    stream.write(struct.pack("<I", t.rank))
    stream.write(struct.pack("<{}I".format(t.rank), *t.shape))
    stream.write(t.values.astype("<f4").tobytes())


def _read_exact(stream: BinaryIO, n: int, offset: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise TruncatedInput(
            "expected {} bytes of {}, got {}".format(n, what, len(data)), offset
        )
    return data


def read_tbnf(stream: BinaryIO, offset: int = 0) -> Optional[Tuple[Tensor, int]]:
    """reads one TBNF record.

    Args:
        stream (BinaryIO): byte source positioned at a record
        offset (int, optional): byte offset of the record, used in diagnostics. Defaults to 0.

    Returns:
        Optional[Tuple[Tensor, int]]: the tensor and the offset after the record,
        None on a clean end of stream
    """
    magic = stream.read(4)
    if len(magic) == 0:
        return None
    if len(magic) < 4:
        raise TruncatedInput("incomplete TBNF magic", offset)
    if magic != TBNF_MAGIC:
        raise BadMagic("expected TBNF magic at byte offset {}, got {!r}".format(offset, magic))
    pos = offset + 4
    (rank,) = struct.unpack("<I", _read_exact(stream, 4, pos, "rank"))
    pos += 4
    dims = struct.unpack("<{}I".format(rank), _read_exact(stream, 4 * rank, pos, "dims"))
    pos += 4 * rank
    try:
        shape = check_shape(dims)
    except ShapeMismatch as e:
        raise CorruptLength("{} (at byte offset {})".format(e, pos))
    n = element_count(shape)
    payload = _read_exact(stream, 4 * n, pos, "values")
    pos += 4 * n
    values = np.frombuffer(payload, dtype="<f4")
    return Tensor(shape, values), pos


def iter_tbnf(stream: BinaryIO) -> Iterator[Tensor]:
    offset = 0
    while True:
        record = read_tbnf(stream, offset)
        if record is None:
            return
        t, offset = record
        yield t


def read_tbnf_file(path: str) -> List[Tensor]:
    with open(path, "rb") as f:
        return list(iter_tbnf(f))


def write_tbnf_file(path: str, tensors: Sequence[Tensor]) -> None:
    with open(path, "wb") as f:
        for t in tensors:
            write_tbnf(f, t)
