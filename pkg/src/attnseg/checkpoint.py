"""Versioned binary checkpoints.

Layout (all integers little-endian):

    magic   8 bytes  b"ASEGCKPT"
    u32     format version (currently 1)
    u64     training iteration counter
    u32     length of the canonical config text, then that many ASCII bytes
    u32     record count, then for each record:
              u16 name length + UTF-8 name
              u8  dtype code (0 = float32, 1 = float64, 2 = int64)
              u8  ndim, then ndim x u32 dims
              raw values, little-endian, C order

Records hold every model parameter by name plus optimizer state, so loading
a checkpoint restores training exactly.  Values round-trip bitwise.  Loading
rejects a checkpoint whose embedded config text differs from the model's.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CheckpointError

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointData"]

MAGIC = b"ASEGCKPT"
VERSION = 1

_DTYPE_CODES = {0: "<f4", 1: "<f8", 2: "<i8"}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2}


class CheckpointData:
    def __init__(self, config_text, iteration, records):
        self.config_text = config_text
        self.iteration = iteration
        self.records = records  # ordered dict name -> ndarray


def save_checkpoint(path, config_text, records, iteration=0):
    """Write ``records`` (an ordered name -> ndarray mapping) to ``path``."""
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", iteration)]
    blob = config_text.encode("ascii")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<I", len(records)))
    for name, array in records.items():
        array = np.asarray(array)
        if array.dtype not in _CODE_FOR:
            raise CheckpointError(f"{name}: unsupported dtype {array.dtype}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", _CODE_FOR[array.dtype], array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array).astype(array.dtype.newbyteorder("<")).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def take(self, count):
        if self.pos + count > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.blob[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _Reader(blob, path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (iteration,) = reader.unpack("<Q")
    (config_len,) = reader.unpack("<I")
    config_text = reader.take(config_len).decode("ascii")
    (count,) = reader.unpack("<I")
    records = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        code, ndim = reader.unpack("<BB")
        if code not in _DTYPE_CODES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name}")
        shape = reader.unpack(f"<{ndim}I")
        dtype = np.dtype(_DTYPE_CODES[code])
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = reader.take(size * dtype.itemsize)
        records[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if reader.pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - reader.pos} trailing bytes")
    return CheckpointData(config_text, iteration, records)
