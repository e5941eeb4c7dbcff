"""Canonical byte encoding for arrays and records.

Arrays are float64, little-endian, row-major, preceded by a dimension
header: rank as a 64-bit little-endian unsigned integer, then each
dimension as a 64-bit little-endian unsigned integer.  The encoding is
self-delimiting.

Records pair a JSON metadata object with named arrays: a 4-byte
big-endian length, the UTF-8 JSON header ``{"meta": ..., "arrays":
[[name, nbytes], ...]}`` with sorted keys, then the arrays' canonical
bytes in header order.
"""

from __future__ import annotations

import json
import struct
from typing import Any

import numpy as np

from .errors import CorruptFile

_U64 = struct.Struct("<Q")
_U32BE = struct.Struct(">I")


def dumps_json(obj: Any) -> bytes:
    """Deterministic JSON bytes: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_array(a: np.ndarray) -> bytes:
    a = np.asarray(a, dtype=np.float64)
    header = _U64.pack(a.ndim) + b"".join(_U64.pack(d) for d in a.shape)
    return header + np.ascontiguousarray(a).astype("<f8", copy=False).tobytes()


def decode_array(buf: bytes | memoryview, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one array starting at ``offset``; returns (array, next offset)."""
    view = memoryview(buf)
    try:
        (rank,) = _U64.unpack_from(view, offset)
        offset += 8
        if rank > 32:
            raise CorruptFile(f"implausible array rank {rank}")
        dims = []
        for _ in range(rank):
            (d,) = _U64.unpack_from(view, offset)
            offset += 8
            dims.append(d)
        count = 1
        for d in dims:
            count *= d
        end = offset + 8 * count
        if end > len(view):
            raise CorruptFile("array payload truncated")
        data = np.frombuffer(view[offset:end], dtype="<f8").reshape(dims)
    except struct.error as exc:
        raise CorruptFile("array header truncated") from exc
    return data.astype(np.float64, copy=True), end


def array_nbytes(a: np.ndarray) -> int:
    return 8 * (1 + a.ndim) + 8 * int(np.prod(a.shape, dtype=np.int64))


def encode_record(record: dict[str, Any]) -> bytes:
    meta: dict[str, Any] = {}
    arrays: dict[str, np.ndarray] = {}
    for name, value in record.items():
        if isinstance(value, np.ndarray):
            arrays[name] = np.asarray(value, dtype=np.float64)
        else:
            meta[name] = value
    names = sorted(arrays)
    header = dumps_json(
        {"meta": meta, "arrays": [[n, array_nbytes(arrays[n])] for n in names]}
    )
    parts = [_U32BE.pack(len(header)), header]
    parts.extend(encode_array(arrays[n]) for n in names)
    return b"".join(parts)


def decode_record_meta(buf: bytes) -> dict[str, Any]:
    """Decode only the JSON metadata of a record, skipping its arrays."""
    if len(buf) < 4:
        raise CorruptFile("record header truncated")
    (hlen,) = _U32BE.unpack_from(buf, 0)
    if 4 + hlen > len(buf):
        raise CorruptFile("record header truncated")
    try:
        header = json.loads(buf[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile("record header is not valid JSON") from exc
    return dict(header["meta"])


def decode_record(buf: bytes) -> dict[str, Any]:
    if len(buf) < 4:
        raise CorruptFile("record header truncated")
    (hlen,) = _U32BE.unpack_from(buf, 0)
    if 4 + hlen > len(buf):
        raise CorruptFile("record header truncated")
    try:
        header = json.loads(buf[4 : 4 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile("record header is not valid JSON") from exc
    record: dict[str, Any] = dict(header["meta"])
    offset = 4 + hlen
    for name, nbytes in header["arrays"]:
        array, end = decode_array(buf, offset)
        if end - offset != nbytes:
            raise CorruptFile(f"array {name!r} length mismatch")
        record[name] = array
        offset = end
    return record
