"""Versioned binary containers: magic, JSON header, raw array payload, checksum.

Layout:  magic (8 bytes) | header length (uint32 LE) | header JSON (UTF-8)
         | concatenated little-endian array payloads | sha256 of all prior bytes.

The header's ``arrays`` entry lists ``{name, shape, dtype}`` in payload order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

_CHECKSUM_LEN = 32


def write_container(path: str | Path, magic: bytes, header: dict, arrays: dict[str, np.ndarray]) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    header = dict(header)
    header["arrays"] = [
        {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
        for name, arr in arrays.items()
    ]
    header_bytes = json.dumps(header, sort_keys=True).encode()
    blob = bytearray()
    blob += magic
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for arr in arrays.values():
        blob += np.ascontiguousarray(arr).astype(arr.dtype, copy=False).tobytes()
    digest = hashlib.sha256(bytes(blob)).digest()
    Path(path).write_bytes(bytes(blob) + digest)


def read_container(path: str | Path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read container {path}: {exc}") from exc
    if len(raw) < 8 + 4 + _CHECKSUM_LEN:
        raise FormatError(f"{path}: truncated container")
    if raw[:8] != magic:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}, expected {magic!r}")
    body, digest = raw[:-_CHECKSUM_LEN], raw[-_CHECKSUM_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError(f"{path}: checksum mismatch")
    (header_len,) = struct.unpack("<I", raw[8:12])
    header_end = 12 + header_len
    if header_end > len(body):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(body[12:header_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc
    arrays: dict[str, np.ndarray] = {}
    offset = header_end
    for spec in header.get("arrays", []):
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64)) if spec["shape"] else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(body):
            raise FormatError(f"{path}: truncated payload for array {spec['name']!r}")
        arr = np.frombuffer(body[offset : offset + nbytes], dtype=dtype).reshape(spec["shape"])
        arrays[spec["name"]] = arr.copy()
        offset += nbytes
    if offset != len(body):
        raise FormatError(f"{path}: {len(body) - offset} trailing payload bytes")
    return header, arrays
