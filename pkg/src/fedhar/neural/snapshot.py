"""Binary parameter snapshots.

Layout (all little-endian)::

    bytes 0-3    magic b"FHRP"
    bytes 4-7    uint32 format version (1)
    bytes 8-11   uint32 number of layer sizes L
    bytes 12-15  uint32 reserved, zero
    L * uint32   layer sizes, input first
    float32[]    parameters in flat layout order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .mlp import MlpArchitecture, check_params

MAGIC = b"FHRP"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def dumps(arch: MlpArchitecture, params: np.ndarray) -> bytes:
    check_params(arch, params)
    sizes = arch.layer_sizes
    head = _HEADER.pack(MAGIC, VERSION, len(sizes), 0)
    body = np.asarray(sizes, dtype="<u4").tobytes() + np.asarray(params, dtype="<f4").tobytes()
    return head + body


def loads(blob: bytes) -> tuple[tuple[int, ...], np.ndarray]:
    if len(blob) < _HEADER.size:
        raise ValueError("truncated snapshot header")
    magic, version, n_layers, _ = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    offset = _HEADER.size
    sizes = tuple(int(s) for s in np.frombuffer(blob, dtype="<u4", count=n_layers, offset=offset))
    offset += 4 * n_layers
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    params = np.frombuffer(blob, dtype="<f4", offset=offset)
    if params.size != expected:
        raise ValueError(f"snapshot holds {params.size} parameters, layer sizes imply {expected}")
    return sizes, params.astype(np.float64)


def save(path, arch: MlpArchitecture, params: np.ndarray) -> None:
    Path(path).write_bytes(dumps(arch, params))


def load(path) -> tuple[tuple[int, ...], np.ndarray]:
    return loads(Path(path).read_bytes())
