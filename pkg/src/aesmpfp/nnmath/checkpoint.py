"""Binary parameter checkpoints.

Layout (little-endian)::

    magic     8 bytes  b"AESMPCK\\0"
    version   u32
    n_blocks  u32
    table     n_blocks x { name_len u16, name utf-8, ndim u8, dims u32[ndim] }
    payload   f32 data of every block, in table order

Values are stored as float32, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from ..errors import CheckpointError

MAGIC = b"AESMPCK\0"
VERSION = 1


def dumps(blocks):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(blocks)))
    arrays = []
    for name, arr in blocks.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        arrays.append(arr)
    for arr in arrays:
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def loads(data):
    if data[:8] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 16
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        table.append((name, shape))
    blocks = {}
    for name, shape in table:
        n = int(np.prod(shape, dtype=np.int64))
        end = off + 4 * n
        if end > len(data):
            raise CheckpointError(f"truncated payload for block {name!r}")
        blocks[name] = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape).copy()
        off = end
    if off != len(data):
        raise CheckpointError(f"{len(data) - off} trailing bytes after payload")
    return blocks


def save(path, blocks):
    with open(path, "wb") as fh:
        fh.write(dumps(blocks))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def module_blocks(prefix, module):
    return {f"{prefix}/{name}": p.data for name, p in module.named_parameters()}


def restore_module(prefix, module, blocks):
    sub = {k[len(prefix) + 1:]: v for k, v in blocks.items() if k.startswith(prefix + "/")}
    try:
        module.load_state_dict(sub)
    except KeyError as exc:
        raise CheckpointError(f"{prefix}: {exc}") from None
