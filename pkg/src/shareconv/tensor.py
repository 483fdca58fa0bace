"""Dense tensor helpers and the little-endian binary tensor format.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order. This
module fixes the two supported precisions and the on-disk layout used by
checkpoints::

    u32 rank | u32 extent * rank | u8 precision tag (0=f32, 1=f64) | raw elements
"""

import io
import struct

import numpy as np

PRECISIONS = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
}
_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible with an operation."""


def resolve_dtype(precision):
    """Map ``"f32"``/``"f64"``/numpy dtype to a supported numpy dtype."""
    if isinstance(precision, str) and precision in PRECISIONS:
        return np.dtype(PRECISIONS[precision].type)
    dt = np.dtype(precision)
    if dt not in (np.float32, np.float64):
        raise TypeError(f"unsupported precision {precision!r}; use f32 or f64")
    return dt


def as_tensor(data, precision="f32"):
    """Return a C-contiguous array of the requested precision.

    Every extent must be at least 1.
    """
    arr = np.asarray(data, dtype=resolve_dtype(precision))
    if arr.ndim == 0 or any(e < 1 for e in arr.shape):
        raise ShapeError(f"tensor extents must all be >= 1, got {arr.shape}")
    return np.ascontiguousarray(arr)


def write_tensor(fp, arr):
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _TAGS:
        raise TypeError(f"cannot serialize dtype {arr.dtype}")
    fp.write(struct.pack("<I", arr.ndim))
    fp.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fp.write(struct.pack("<B", _TAGS[dt]))
    fp.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def _read_exact(fp, n):
    buf = fp.read(n)
    if len(buf) != n:
        raise EOFError(f"expected {n} bytes, got {len(buf)}")
    return buf


def read_tensor(fp):
    (rank,) = struct.unpack("<I", _read_exact(fp, 4))
    shape = struct.unpack(f"<{rank}I", _read_exact(fp, 4 * rank))
    (tag,) = struct.unpack("<B", _read_exact(fp, 1))
    if tag not in _DTYPES:
        raise ValueError(f"unknown precision tag {tag}")
    dt = _DTYPES[tag]
    count = int(np.prod(shape, dtype=np.int64))
    raw = _read_exact(fp, count * dt.itemsize)
    arr = np.frombuffer(raw, dtype=dt).reshape(shape)
    return arr.astype(dt.newbyteorder("="), copy=True)


def tensor_to_bytes(arr):
    buf = io.BytesIO()
    write_tensor(buf, arr)
    return buf.getvalue()


def tensor_from_bytes(data):
    return read_tensor(io.BytesIO(data))
