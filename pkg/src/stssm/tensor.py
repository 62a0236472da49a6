"""Dense row-major tensor type and its little-endian binary format.

Storage is float32 by default with a float64 mode for verification runs.
The on-disk format is fixed little-endian regardless of host so that
serialized tensors are bit-exact across platforms:

    magic "VMTB" | u32 version=1 | u8 dtype (0=f32, 1=f64) | u32 rank |
    rank x u64 extents | payload (little-endian scalars, row-major)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError, NumericError, ShapeError

MAGIC = b"VMTB"
FORMAT_VERSION = 1

_DTYPE_CODE = {"f32": 0, "f64": 1}
_CODE_DTYPE = {0: "f32", 1: "f64"}
_DISK_DTYPE = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_NP_DTYPE = {"f32": np.float32, "f64": np.float64}

_verify_f64 = False


def set_verification_mode(on: bool) -> None:
    """Toggle float64 accumulation inside matmul for f32 tensors."""
    global _verify_f64
    _verify_f64 = bool(on)


def verification_mode() -> bool:
    return _verify_f64


def _check_extents(shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if len(shape) < 1:
        raise ShapeError("tensor rank must be >= 1")
    for s in shape:
        if s < 1:
            raise ShapeError(f"extents must be >= 1, got {shape}")
    return shape


@dataclass(frozen=True)
class Tensor:
    """Immutable dense tensor: shape plus a contiguous row-major buffer."""

    shape: tuple[int, ...]
    data: np.ndarray = field(repr=False)
    dtype: str = "f32"

    def __post_init__(self):
        shape = _check_extents(self.shape)
        object.__setattr__(self, "shape", shape)
        if self.dtype not in _DTYPE_CODE:
            raise ShapeError(f"unknown dtype {self.dtype!r}")
        buf = np.ascontiguousarray(self.data, dtype=_NP_DTYPE[self.dtype]).reshape(-1)
        n = int(np.prod(shape))
        if buf.size != n:
            raise ShapeError(f"buffer holds {buf.size} scalars, shape {shape} needs {n}")
        buf = buf.copy()
        buf.flags.writeable = False
        object.__setattr__(self, "data", buf)

    @property
    def array(self) -> np.ndarray:
        """Read-only row-major view with the tensor's shape."""
        return self.data.reshape(self.shape)

    def size(self) -> int:
        return self.data.size


def tensor_new(shape, fill, dtype: str = "f32") -> Tensor:
    """Build a tensor from a scalar fill value or a flat buffer."""
    shape = _check_extents(shape)
    if np.isscalar(fill):
        n = int(np.prod(shape))
        return Tensor(shape, np.full(n, float(fill), dtype=_NP_DTYPE[dtype]), dtype)
    buf = np.asarray(fill)
    if buf.dtype == np.float64:
        dtype = "f64"
    return Tensor(shape, buf, dtype)


def from_array(arr: np.ndarray) -> Tensor:
    arr = np.asarray(arr)
    dtype = "f64" if arr.dtype == np.float64 else "f32"
    return Tensor(tuple(arr.shape), arr.reshape(-1), dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product c[i, j] = sum_p a[i, p] * b[p, j].

    Accumulates in float64 whenever either operand is f64 or verification
    mode is on; the result carries the wider operand dtype.
    """
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    out_dtype = "f64" if ("f64" in (a.dtype, b.dtype)) else "f32"
    with np.errstate(over="ignore", invalid="ignore"):
        if out_dtype == "f64" or _verify_f64:
            c = a.array.astype(np.float64) @ b.array.astype(np.float64)
        else:
            c = a.array @ b.array
    if not np.all(np.isfinite(c)):
        raise NumericError("matmul produced non-finite values")
    return Tensor((a.shape[0], b.shape[1]), c.reshape(-1), out_dtype)


def serialize(t: Tensor) -> bytes:
    """Encode a tensor in the fixed binary layout; round-trip is bit-exact."""
    header = MAGIC
    header += struct.pack("<I", FORMAT_VERSION)
    header += struct.pack("<B", _DTYPE_CODE[t.dtype])
    header += struct.pack("<I", len(t.shape))
    header += struct.pack(f"<{len(t.shape)}Q", *t.shape)
    payload = t.data.astype(_DISK_DTYPE[t.dtype], copy=False).tobytes()
    return header + payload


def deserialize(blob: bytes) -> Tensor:
    if len(blob) < 13:
        raise FormatError("stream too short for a header")
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unknown format version {version}")
    code = blob[8]
    if code not in _CODE_DTYPE:
        raise FormatError(f"unknown dtype code {code}")
    dtype = _CODE_DTYPE[code]
    (rank,) = struct.unpack_from("<I", blob, 9)
    if rank < 1:
        raise FormatError("rank must be >= 1")
    offset = 13 + 8 * rank
    if len(blob) < offset:
        raise FormatError("truncated extent list")
    shape = struct.unpack_from(f"<{rank}Q", blob, 13)
    if any(s < 1 for s in shape):
        raise FormatError(f"zero extent in {shape}")
    n = 1
    for s in shape:
        n *= s
    disk = _DISK_DTYPE[dtype]
    expected = offset + n * disk.itemsize
    if len(blob) != expected:
        raise FormatError(f"payload is {len(blob) - offset} bytes, need {n * disk.itemsize}")
    buf = np.frombuffer(blob, dtype=disk, count=n, offset=offset)
    return Tensor(tuple(int(s) for s in shape), buf.astype(_NP_DTYPE[dtype], copy=False), dtype)


def save_tensor(path, t: Tensor) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(t))


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
