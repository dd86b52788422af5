"""Flat binary checkpoint container.

Layout (all integers little-endian uint32 unless noted):

    magic   4 bytes  b"SEDF"
    version u32      currently 1
    hdr_len u32      byte length of the header text
    header  utf-8    "key=value" lines describing the architecture config
    count   u32      number of tensors
    index   per tensor: name_len u32, name utf-8, ndim u32, dims u32 * ndim
    data    tensors in index order, float32 little-endian, C-contiguous

Tensors are written in declaration order of the owning model, so a reader can
stream them without the index if it knows the architecture.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SEDF"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, header_fields: dict, params: dict) -> None:
    """Write params (dict of name -> ndarray) under a key=value header."""
    header = "".join(f"{k}={v}\n" for k, v in header_fields.items()).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        for tensor in params.values():
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read (header_fields, params); params come back float32."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (hdr_len,) = struct.unpack_from("<I", blob, 8)
    offset = 12
    header_text = blob[offset:offset + hdr_len].decode("utf-8")
    offset += hdr_len
    header_fields = {}
    for line in header_text.splitlines():
        if line:
            key, _, value = line.partition("=")
            header_fields[key] = value
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        dims = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        shapes.append((name, tuple(int(d) for d in dims)))
    params = {}
    for name, dims in shapes:
        size = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=offset).reshape(dims)
        offset += 4 * size
        params[name] = arr.copy()
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return header_fields, params
