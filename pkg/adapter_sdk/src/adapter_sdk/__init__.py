"""Helper for wrapping pose-estimation models as external-process
adapters.

The wire protocol: every message is a 4-byte big-endian length followed
by a compact sorted-key UTF-8 JSON object.  The adapter speaks first
with ``hello``; the engine replies with ``request`` whose declared
arrays follow as canonical bytes (u64-le rank, u64-le dims, float64-le
data); video stages then stream ``frame`` headers each followed by raw
RGB24 bytes, ending with ``end_frames``.  The adapter answers ``result``
(metadata plus declared arrays) or ``error``.

This package is stdlib-only; converting arrays to whatever your model
wants is the wrapper author's concern (``Array.data`` is an
``array('d')``).
"""

from __future__ import annotations

import io
import json
import struct
import sys
import traceback
from array import array
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Optional

PROTOCOL_VERSION = 1

_LEN = struct.Struct(">I")
_U64 = struct.Struct("<Q")


class ProtocolError(Exception):
    """The peer sent something the protocol does not allow."""


@dataclass
class Array:
    shape: tuple[int, ...]
    data: array  # typecode 'd', row-major

    @classmethod
    def from_values(cls, shape, values) -> "Array":
        return cls(shape=tuple(int(d) for d in shape), data=array("d", values))

    def count(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n


@dataclass
class AdapterRequest:
    stage: str
    params: dict
    video: Optional[dict]  # {"width", "height", "fps", "frame_count"}
    arrays: dict[str, Array] = field(default_factory=dict)
    frames: list[bytes] = field(default_factory=list)


@dataclass
class AdapterResult:
    meta: dict
    arrays: dict[str, Array] = field(default_factory=dict)


Handler = Callable[[AdapterRequest], "AdapterResult | dict"]


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    out = b""
    while len(out) < n:
        chunk = stream.read(n - len(out))
        if not chunk:
            raise ProtocolError(f"stream ended {n - len(out)} bytes early")
        out += chunk
    return out


def read_message(stream: BinaryIO) -> dict:
    (length,) = _LEN.unpack(_read_exact(stream, 4))
    try:
        obj = json.loads(_read_exact(stream, length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError("message body is not JSON") from exc
    if not isinstance(obj, dict) or "type" not in obj:
        raise ProtocolError("message must be a JSON object with a type")
    return obj


def write_message(stream: BinaryIO, obj: dict) -> None:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    stream.write(_LEN.pack(len(payload)) + payload)


def decode_array(raw: bytes) -> Array:
    (rank,) = _U64.unpack_from(raw, 0)
    shape = tuple(
        _U64.unpack_from(raw, 8 + 8 * i)[0] for i in range(rank)
    )
    offset = 8 + 8 * rank
    values = array("d")
    values.frombytes(raw[offset:])
    if sys.byteorder == "big":
        values.byteswap()
    out = Array(shape=shape, data=values)
    if len(values) != out.count():
        raise ProtocolError(
            f"array payload holds {len(values)} values for shape {shape}"
        )
    return out


def encode_array(arr: Array) -> bytes:
    if len(arr.data) != arr.count():
        raise ValueError(f"array data length {len(arr.data)} != shape {arr.shape}")
    header = _U64.pack(len(arr.shape)) + b"".join(_U64.pack(d) for d in arr.shape)
    data = arr.data
    if sys.byteorder == "big":
        data = array("d", data)
        data.byteswap()
    return header + data.tobytes()


def _read_request(stdin: BinaryIO) -> AdapterRequest:
    message = read_message(stdin)
    if message["type"] != "request":
        raise ProtocolError(f"expected request, got {message['type']!r}")
    arrays = {}
    for entry in message.get("arrays", []):
        raw = _read_exact(stdin, int(entry["bytes"]))
        arrays[str(entry["name"])] = decode_array(raw)
    frames: list[bytes] = []
    if message.get("video"):
        while True:
            header = read_message(stdin)
            if header["type"] == "end_frames":
                break
            if header["type"] != "frame":
                raise ProtocolError(f"expected frame, got {header['type']!r}")
            frames.append(_read_exact(stdin, int(header["bytes"])))
    return AdapterRequest(
        stage=message["stage"],
        params=message.get("params", {}),
        video=message.get("video"),
        arrays=arrays,
        frames=frames,
    )


def _write_result(stdout: BinaryIO, result: AdapterResult) -> None:
    encoded = {name: encode_array(arr) for name, arr in result.arrays.items()}
    write_message(stdout, {
        "type": "result",
        "meta": result.meta,
        "arrays": [
            {"bytes": len(encoded[name]), "name": name} for name in sorted(encoded)
        ],
    })
    for name in sorted(encoded):
        stdout.write(encoded[name])


def _coerce_result(value) -> AdapterResult:
    if isinstance(value, AdapterResult):
        return value
    if isinstance(value, dict):
        arrays = {
            name: arr if isinstance(arr, Array) else Array.from_values(*arr)
            for name, arr in value.get("arrays", {}).items()
        }
        return AdapterResult(meta=value.get("meta", {}), arrays=arrays)
    raise TypeError("handler must return an AdapterResult or a dict")


def serve_adapter(
    stage: str,
    method_name: str,
    handler: Handler,
    stdin: Optional[BinaryIO] = None,
    stdout: Optional[BinaryIO] = None,
) -> None:
    """Run one request against the handler over the framed protocol.

    Handler exceptions become ``error`` messages carrying the traceback
    tail; the engine records them as per-key error job records.
    """
    stdin = stdin or sys.stdin.buffer
    stdout = stdout or sys.stdout.buffer
    write_message(stdout, {
        "type": "hello",
        "stage": stage,
        "method_name": method_name,
        "protocol_version": PROTOCOL_VERSION,
    })
    stdout.flush()
    try:
        request = _read_request(stdin)
        result = _coerce_result(handler(request))
        _write_result(stdout, result)
    except Exception:  # noqa: BLE001 - everything becomes an error reply
        tail = traceback.format_exc().strip().splitlines()
        write_message(stdout, {
            "type": "error",
            "message": "\n".join(tail[-6:]),
        })
    stdout.flush()


def self_test(
    stage: str,
    method_name: str,
    handler: Handler,
    request_bytes: bytes,
    expected_reply: Optional[bytes] = None,
) -> bytes:
    """Loopback harness: feed recorded engine-side bytes through the serve
    loop and validate the reply framing (and bytes, when a golden reply is
    given).  Returns the reply bytes."""
    stdout = io.BytesIO()
    serve_adapter(stage, method_name, handler,
                  stdin=io.BytesIO(request_bytes), stdout=stdout)
    reply = stdout.getvalue()
    stream = io.BytesIO(reply)
    hello = read_message(stream)
    if hello["type"] != "hello" or hello.get("protocol_version") != PROTOCOL_VERSION:
        raise ProtocolError(f"malformed hello: {hello}")
    message = read_message(stream)
    if message["type"] == "result":
        for entry in message.get("arrays", []):
            decode_array(_read_exact(stream, int(entry["bytes"])))
    elif message["type"] != "error":
        raise ProtocolError(f"reply must be result or error, got {message['type']!r}")
    if stream.read():
        raise ProtocolError("trailing bytes after the reply")
    if expected_reply is not None and reply != expected_reply:
        raise ProtocolError("reply differs from the golden transcript")
    return reply
