"""Versioned binary container for graph bundles and checkpoints.

Layout::

    b"FIRZ" | kind (8 bytes, NUL padded) | version (u32 LE) | header length (u64 LE)
    header (UTF-8 JSON: {"meta": ..., "blocks": [{name, dtype, shape, offset, nbytes}]})
    raw little-endian block data, in header order

The JSON header is written with sorted keys so identical inputs give
byte-identical files.
"""

import json
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"FIRZ"
_PREFIX = struct.Struct("<4s8sIQ")


def write_container(path, kind, version, meta, blocks):
    kind_bytes = kind.encode("ascii")
    if len(kind_bytes) > 8:
        raise ValueError("container kind must fit in 8 bytes")
    table = []
    payload = []
    offset = 0
    for name, array in blocks.items():
        array = np.asarray(array)
        if not array.flags.c_contiguous:  # ascontiguousarray would promote 0-d blocks
            array = array.copy(order="C")
        dtype = array.dtype.newbyteorder("<") if array.dtype.byteorder == ">" else array.dtype
        raw = array.astype(dtype, copy=False).tobytes()
        table.append({"name": name, "dtype": dtype.str, "shape": list(array.shape),
                      "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "blocks": table}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, kind_bytes.ljust(8, b"\0"), version, len(header)))
        fh.write(header)
        for raw in payload:
            fh.write(raw)


def read_container(path, kind, supported_versions=(1,)):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated container")
    magic, kind_bytes, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a firzen container")
    found = kind_bytes.rstrip(b"\0").decode("ascii")
    if found != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} container, found {found!r}")
    if version not in supported_versions:
        raise CheckpointError(f"{path}: unsupported {kind} version {version}")
    start = _PREFIX.size
    header = json.loads(data[start:start + header_len].decode("utf-8"))
    base = start + header_len
    blocks = {}
    for entry in header["blocks"]:
        lo = base + entry["offset"]
        raw = data[lo:lo + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: block {entry['name']!r} truncated")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        blocks[entry["name"]] = arr.copy()
    return version, header["meta"], blocks
