"""Versioned binary dumps: magic, format version, JSON header, raw arrays.

Layout::

    magic (8 bytes) | version u32 LE | header length u32 LE | header JSON (UTF-8)
    | array bytes, little-endian, C order, in header["arrays"] order

The header lists each array's name, dtype and shape. JSON is written with
sorted keys so identical inputs give identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ParseError


def pack(magic: bytes, version: int, header: dict, arrays: dict) -> bytes:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    meta = dict(header)
    meta["arrays"] = []
    chunks = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, order="C")
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        meta["arrays"].append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape)})
        chunks.append(le.tobytes(order="C"))
    blob = json.dumps(meta, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    return magic + struct.pack("<II", version, len(blob)) + blob + b"".join(chunks)


def unpack(data: bytes, magic: bytes, version: int) -> tuple[dict, dict]:
    if data[:8] != magic:
        raise ParseError(f"bad magic {data[:8]!r}, expected {magic!r}")
    found, hlen = struct.unpack_from("<II", data, 8)
    if found != version:
        raise ParseError(f"unsupported format version {found} (expected {version})")
    start = 16 + hlen
    header = json.loads(data[16:start].decode("utf-8"))
    arrays = {}
    offset = start
    for spec in header.pop("arrays"):
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        arrays[spec["name"]] = arr.reshape(tuple(spec["shape"])).astype(dtype.newbyteorder("="))
        offset += count * dtype.itemsize
    if offset != len(data):
        raise ParseError(f"trailing bytes: read {offset} of {len(data)}")
    return header, arrays


def write(path, magic, version, header, arrays):
    with open(path, "wb") as fh:
        fh.write(pack(magic, version, header, arrays))


def read(path, magic, version):
    with open(path, "rb") as fh:
        return unpack(fh.read(), magic, version)
