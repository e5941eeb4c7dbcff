"""Framed stdio wire protocol for out-of-process adapters.

Every message is a 4-byte big-endian length followed by a UTF-8 JSON
object.  The adapter speaks first with ``hello``; the engine replies
with ``request`` whose declared arrays follow immediately as canonical
array bytes; video stages then stream ``frame`` headers each followed by
exactly ``bytes`` of raw RGB24, terminated by ``end_frames``.  The
adapter answers ``result`` (JSON metadata plus declared canonical
arrays) or ``error``.  Unknown message types are protocol violations.
"""

from __future__ import annotations

import json
import struct
import subprocess
import tempfile
from typing import BinaryIO, Optional

import numpy as np

from ..errors import AdapterCrashed, ProtocolViolation
from ..serialization import array_nbytes, decode_array, dumps_json, encode_array

PROTOCOL_VERSION = 1
_LEN = struct.Struct(">I")
MAX_MESSAGE = 1 << 24


def pack_message(obj: dict) -> bytes:
    payload = dumps_json(obj)
    return _LEN.pack(len(payload)) + payload


def read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise EOFError(f"stream ended {remaining} bytes early")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(stream: BinaryIO) -> dict:
    try:
        header = read_exact(stream, 4)
    except EOFError as exc:
        raise ProtocolViolation("stream closed before a message header") from exc
    (length,) = _LEN.unpack(header)
    if length > MAX_MESSAGE:
        raise ProtocolViolation(f"message of {length} bytes exceeds the frame limit")
    try:
        payload = read_exact(stream, length)
    except EOFError as exc:
        raise ProtocolViolation("message body truncated") from exc
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolViolation("message body is not a JSON object") from exc
    if not isinstance(obj, dict) or "type" not in obj:
        raise ProtocolViolation("message must be a JSON object with a type")
    return obj


def _array_manifest(arrays: dict[str, np.ndarray]) -> list[dict]:
    return [
        {"bytes": array_nbytes(np.asarray(arrays[name], dtype=np.float64)), "name": name}
        for name in sorted(arrays)
    ]


def build_request_bytes(
    stage: str,
    params: dict,
    arrays: dict[str, np.ndarray],
    frames: Optional[np.ndarray],
    fps: float,
) -> bytes:
    """Everything the engine sends after the adapter's hello."""
    video = None
    if frames is not None:
        frames = np.asarray(frames, dtype=np.uint8)
        count, height, width, channels = frames.shape
        if channels != 3:
            raise ValueError("frames must be F x H x W x 3")
        video = {"fps": fps, "frame_count": count, "height": height, "width": width}
    parts = [
        pack_message(
            {
                "type": "request",
                "stage": stage,
                "params": params,
                "video": video,
                "arrays": _array_manifest(arrays),
            }
        )
    ]
    for name in sorted(arrays):
        parts.append(encode_array(np.asarray(arrays[name], dtype=np.float64)))
    if frames is not None:
        nbytes = frames.shape[1] * frames.shape[2] * 3
        for index in range(frames.shape[0]):
            parts.append(pack_message({"type": "frame", "bytes": nbytes, "index": index}))
            parts.append(frames[index].tobytes())
        parts.append(pack_message({"type": "end_frames"}))
    return b"".join(parts)


def build_result_bytes(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    parts = [
        pack_message(
            {"type": "result", "meta": meta, "arrays": _array_manifest(arrays)}
        )
    ]
    for name in sorted(arrays):
        parts.append(encode_array(np.asarray(arrays[name], dtype=np.float64)))
    return b"".join(parts)


def read_declared_arrays(stream: BinaryIO, manifest: list) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest:
        if not isinstance(entry, dict) or "name" not in entry or "bytes" not in entry:
            raise ProtocolViolation("array manifest entries need name and bytes")
        try:
            raw = read_exact(stream, int(entry["bytes"]))
        except EOFError as exc:
            raise ProtocolViolation("declared array bytes truncated") from exc
        try:
            array, consumed = decode_array(raw)
        except Exception as exc:
            raise ProtocolViolation(f"array {entry['name']!r} is malformed") from exc
        if consumed != len(raw):
            raise ProtocolViolation(
                f"array {entry['name']!r} does not fill its declared bytes"
            )
        arrays[str(entry["name"])] = array
    return arrays


def read_reply(stream: BinaryIO) -> tuple[dict, dict[str, np.ndarray]]:
    """Read the adapter's result or error after the frame stream."""
    message = read_message(stream)
    if message["type"] == "error":
        raise AdapterCrashed(f"adapter reported: {message.get('message', '')}")
    if message["type"] != "result":
        raise ProtocolViolation(f"unexpected message type {message['type']!r}")
    meta = message.get("meta")
    if not isinstance(meta, dict):
        raise ProtocolViolation("result message lacks a meta object")
    arrays = read_declared_arrays(stream, message.get("arrays", []))
    return meta, arrays


def _settled_exit_code(proc: subprocess.Popen) -> Optional[int]:
    """Exit code once the process settles; None if it is still running."""
    try:
        return proc.wait(timeout=2.0)
    except subprocess.TimeoutExpired:
        return None


def run_external(
    command: tuple[str, ...],
    workdir: Optional[str],
    stage: str,
    method_name: str,
    params: dict,
    arrays: dict[str, np.ndarray],
    frames: Optional[np.ndarray],
    fps: float,
) -> tuple[dict, dict[str, np.ndarray]]:
    """Spawn the adapter process and run one request against it."""
    request = build_request_bytes(stage, params, arrays, frames, fps)
    with tempfile.TemporaryFile() as stderr:
        proc = subprocess.Popen(
            list(command),
            cwd=workdir,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=stderr,
        )

        def stderr_tail() -> str:
            stderr.seek(0)
            return stderr.read()[-2000:].decode("utf-8", "replace")

        try:
            try:
                hello = read_message(proc.stdout)
            except ProtocolViolation:
                code = _settled_exit_code(proc)
                if code not in (None, 0):
                    raise AdapterCrashed(
                        f"adapter exited {code} before hello: {stderr_tail()}"
                    ) from None
                raise
            if hello["type"] != "hello":
                raise ProtocolViolation(f"expected hello, got {hello['type']!r}")
            if hello.get("protocol_version") != PROTOCOL_VERSION:
                raise ProtocolViolation(
                    f"adapter speaks protocol {hello.get('protocol_version')!r}"
                )
            if hello.get("stage") != stage or hello.get("method_name") != method_name:
                raise ProtocolViolation(
                    f"adapter identifies as {hello.get('stage')}/{hello.get('method_name')},"
                    f" expected {stage}/{method_name}"
                )
            try:
                proc.stdin.write(request)
                proc.stdin.flush()
                proc.stdin.close()
            except BrokenPipeError as exc:
                raise AdapterCrashed(
                    f"adapter closed its input early: {stderr_tail()}"
                ) from exc
            try:
                meta, out_arrays = read_reply(proc.stdout)
            except ProtocolViolation:
                code = _settled_exit_code(proc)
                if code not in (None, 0):
                    raise AdapterCrashed(
                        f"adapter exited {code} mid-protocol: {stderr_tail()}"
                    ) from None
                raise
            except AdapterCrashed as exc:
                raise AdapterCrashed(f"{exc} | stderr: {stderr_tail()}") from None
            proc.wait(timeout=30)
            return meta, out_arrays
        finally:
            if proc.poll() is None:
                proc.kill()
                proc.wait()
