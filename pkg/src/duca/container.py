"""Binary container shared by every artifact file.

Layout (little-endian)::

    magic   4 bytes   b"DUCF" | b"DUCB" | b"DUCW" | b"DUCM"
    version u32       1
    dim     u32
    count   u64
    payload count*dim float32, row-major
    mlen    u64
    meta    mlen bytes of UTF-8 JSON
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from duca.errors import FormatError

VERSION = 1
MAGICS = (b"DUCF", b"DUCB", b"DUCW", b"DUCM")

_HEADER = struct.Struct("<4sIIQ")
_LEN = struct.Struct("<Q")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_container(magic: bytes, matrix: np.ndarray, meta: dict) -> bytes:
    if magic not in MAGICS:
        raise ValueError(f"unknown magic {magic!r}")
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError("container payload must be a 2-D matrix")
    count, dim = matrix.shape
    payload = np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join(
        [_HEADER.pack(magic, VERSION, dim, count), payload, _LEN.pack(len(blob)), blob]
    )


def decode_container(data: bytes, magic: bytes, source="<bytes>"):
    """Parse a container, returning ``(matrix, meta)``.

    ``matrix`` is a float32 array of shape (count, dim).
    """
    if len(data) < _HEADER.size:
        raise FormatError(f"{source}: truncated header ({len(data)} bytes)")
    got, version, dim, count = _HEADER.unpack_from(data, 0)
    if got != magic:
        raise FormatError(
            f"{source}: bad magic {got!r}, expected {magic.decode('ascii')!r}"
        )
    if version != VERSION:
        raise FormatError(f"{source}: version mismatch (file {version}, supported {VERSION})")
    offset = _HEADER.size
    nbytes = count * dim * 4
    if len(data) < offset + nbytes + _LEN.size:
        raise FormatError(
            f"{source}: truncated payload (need {nbytes} bytes for {count}x{dim} float32)"
        )
    matrix = np.frombuffer(data, dtype="<f4", count=count * dim, offset=offset)
    matrix = matrix.reshape(count, dim).astype(np.float32)
    offset += nbytes
    (mlen,) = _LEN.unpack_from(data, offset)
    offset += _LEN.size
    if len(data) < offset + mlen:
        raise FormatError(f"{source}: truncated metadata block")
    try:
        meta = json.loads(data[offset : offset + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: unreadable metadata ({exc})") from exc
    if not isinstance(meta, dict):
        raise FormatError(f"{source}: metadata must be a JSON object")
    return matrix, meta


def write_container(path, magic: bytes, matrix: np.ndarray, meta: dict) -> None:
    atomic_write_bytes(path, encode_container(magic, matrix, meta))


def read_container(path, magic: bytes):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return decode_container(data, magic, source=str(path))


def digest_of(*parts) -> str:
    """Short hex digest over arrays, bytes and JSON-able objects."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(str(part.shape).encode())
            h.update(np.ascontiguousarray(part, dtype="<f4").tobytes())
        elif isinstance(part, bytes):
            h.update(part)
        else:
            h.update(json.dumps(part, sort_keys=True, separators=(",", ":")).encode())
        h.update(b"\x00")
    return h.hexdigest()[:16]
