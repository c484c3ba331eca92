"""Flat binary checkpoints of named tensors.

Layout (all integers little-endian)::

    magic    8 bytes   b"QSNNCKPT"
    version  u32       currently 1
    count    u32       number of tensors
    then per tensor:
      name_len u16, name (utf-8)
      dtype    u8      1 = float64, 2 = float32, 3 = int64, 4 = uint8
      ndim     u8
      dims     ndim x u32
      data     raw little-endian values, row-major
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import MalformedHeader, TruncatedData
from .io import atomic_write_bytes

MAGIC = b"QSNNCKPT"
VERSION = 1
DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
_CODES = {dt.str: code for code, dt in DTYPES.items()}


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        value = np.asarray(value)
        dt = value.dtype.newbyteorder("<") if value.dtype.itemsize > 1 else value.dtype
        if dt.str not in _CODES:
            raise TypeError(f"cannot store dtype {value.dtype} for {name!r}")
        raw_name = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw_name)) + raw_name)
        out.append(struct.pack("<BB", _CODES[dt.str], value.ndim))
        out.append(struct.pack(f"<{value.ndim}I", *value.shape))
        out.append(np.ascontiguousarray(value, dtype=dt).tobytes())
    return b"".join(out)


def loads(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:8] != MAGIC:
        raise MalformedHeader("not a qifsnn checkpoint (bad magic)")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedData(f"checkpoint ends at byte {len(buf)}, needed {pos + n}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise MalformedHeader(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in DTYPES:
            raise MalformedHeader(f"unknown dtype code {code} for {name!r}")
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = DTYPES[code]
        n = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(take(n * dt.itemsize), dtype=dt).reshape(dims).copy()
    if pos != len(buf):
        raise MalformedHeader(f"{len(buf) - pos} trailing bytes after last tensor")
    return tensors


def save(path, tensors: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())


SPEC_KEY = "__spec__"


def pack_network(net) -> dict[str, np.ndarray]:
    """State dict plus the network description as a uint8 tensor."""
    tensors = {SPEC_KEY: np.frombuffer(net.spec.to_text().encode("utf-8"), dtype=np.uint8)}
    tensors.update(net.state_dict())
    return tensors


def unpack_network(tensors: dict[str, np.ndarray]):
    from .network import NetworkSpec, SpikingNetwork

    tensors = dict(tensors)
    raw = tensors.pop(SPEC_KEY, None)
    if raw is None:
        raise MalformedHeader("checkpoint carries no network description")
    spec = NetworkSpec.from_text(raw.tobytes().decode("utf-8"))
    net = SpikingNetwork(spec)
    net.load_state_dict(tensors)
    return net
