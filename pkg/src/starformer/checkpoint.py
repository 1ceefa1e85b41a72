"""Flat binary container of named float64 tensors plus a key-value config file.

Binary layout (all integers little-endian)::

    magic      8 bytes   b"SFCKPT01"
    count      uint32    number of tensors
    repeated count times:
        name_len  uint16
        name      name_len bytes, UTF-8
        ndim      uint8
        extents   ndim x uint32
        data      prod(extents) x float64 (little-endian, row-major)

The config is written next to the container as ``<path>.cfg``: one
``key = value`` pair per line, ``#`` starts a comment.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SFCKPT01"


class CheckpointError(ValueError):
    pass


def config_path(path: str | Path) -> Path:
    return Path(str(path) + ".cfg")


def write_tensors(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64)) * 8
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated data for {name!r}")
        out[name] = np.frombuffer(buf, dtype="<f8", count=size // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += size
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def write_config(path: str | Path, config: Mapping[str, object]) -> None:
    with open(path, "w") as fh:
        for k, v in config.items():
            fh.write(f"{k} = {v}\n")


def read_config(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CheckpointError(f"{path}:{lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def save_checkpoint(path: str | Path, params: Mapping[str, object], config: Mapping[str, object]) -> None:
    """Write ``params`` (name -> Tensor or array) and ``config`` to ``path`` / ``path.cfg``."""
    arrays = {k: getattr(v, "data", v) for k, v in params.items()}
    write_tensors(path, arrays)
    write_config(config_path(path), config)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return read_tensors(path), read_config(config_path(path))


def assign(params: Mapping[str, object], arrays: Mapping[str, np.ndarray]) -> None:
    """Copy loaded arrays into existing tensors, checking names and shapes."""
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise CheckpointError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for k, t in params.items():
        if t.data.shape != arrays[k].shape:
            raise CheckpointError(f"{k}: checkpoint shape {arrays[k].shape} vs model {t.data.shape}")
        t.data[...] = arrays[k]
