"""Binary checkpoints.

Layout (little-endian)::

    b"CTPN"  u16 version  u32 len  <ModelConfig JSON, utf-8>
    u32 count
    count x ( u16 name_len <name>  u8 ndim  ndim x u32  f32 payload )

Records follow declaration order: parameters, then batch-norm running
statistics.
"""
from __future__ import annotations

import os
import struct
from typing import BinaryIO

import numpy as np

from .engine.dump import read_array, write_array
from .model import CTPNet, ModelConfig, build_model

MAGIC = b"CTPN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: CTPNet, path: str | os.PathLike) -> None:
    arrays = model.state_arrays()
    cfg = model.config.to_json().encode()
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            write_array(fh, arr)
    os.replace(tmp, path)


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def load_checkpoint(path: str | os.PathLike, dtype=np.float32) -> CTPNet:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a CTPN checkpoint")
        version, cfg_len = struct.unpack("<HI", _read_exact(fh, 6))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        config = ModelConfig.from_json(_read_exact(fh, cfg_len).decode())
        model = build_model(config, seed=0, dtype=dtype)
        expected = model.state_arrays()
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        if count != len(expected):
            raise CheckpointError(f"{path}: {count} records, model declares {len(expected)}")
        for name, target in expected.items():
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
            got = _read_exact(fh, nlen).decode()
            if got != name:
                raise CheckpointError(f"{path}: expected record {name!r}, found {got!r}")
            try:
                arr = read_array(fh)
            except EOFError as exc:
                raise CheckpointError(str(exc)) from exc
            if arr.shape != target.shape:
                raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {target.shape}")
            target[...] = arr
    return model
