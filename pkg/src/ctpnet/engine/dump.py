"""Raw tensor dumps: little-endian header then float32 payload.

Layout: b"TNSR", u8 ndim, ndim x u32 dims, prod(dims) x f32.
"""
import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"TNSR"


def write_array(fh: BinaryIO, arr: np.ndarray) -> None:
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_array(fh: BinaryIO) -> np.ndarray:
    (ndim,) = struct.unpack("<B", _read(fh, 1))
    shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim))
    count = int(np.prod(shape, dtype=np.int64))
    return np.frombuffer(_read(fh, 4 * count), dtype="<f4").reshape(shape).copy()


def _read(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise EOFError("truncated tensor record")
    return buf


def dump_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        write_array(fh, np.asarray(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a tensor dump")
        return read_array(fh)
