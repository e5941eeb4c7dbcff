#!/usr/bin/env python3
"""Record byte-level wire-protocol transcripts shared with the adapter
SDK's tests: the engine-side bytes for a small top-down request, and the
exact reply an echo adapter must produce.

The echo contract (mirrored in adapter_sdk/tests): the result meta is
{"frame_bytes": [...], "frame_count": n, "params": <request params>,
"stage": <request stage>} and every request array comes back under
"<name>_echo".
"""

from pathlib import Path

import numpy as np

from posepipe.adapters.protocol import (
    PROTOCOL_VERSION,
    build_request_bytes,
    build_result_bytes,
    pack_message,
)

GOLDEN_DIR = Path(__file__).resolve().parent.parent / "adapter_sdk" / "tests" / "golden"

STAGE = "topdown"
METHOD = "sdk-echo"
PARAMS = {"crop_expand": 1.2, "skeleton": "synthetic13"}
BBOXES = np.array([[1.5, 2.5, 3.0, 4.0], [2.0, 3.0, 4.5, 5.5]])


def frames() -> np.ndarray:
    out = np.zeros((2, 3, 4, 3), dtype=np.uint8)
    flat = out.reshape(2, -1)
    for i in range(2):
        flat[i] = [(i * 7 + j) % 256 for j in range(flat.shape[1])]
    return out


def main() -> None:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    video = frames()
    request = build_request_bytes(STAGE, PARAMS, {"bboxes": BBOXES}, video, 30.0)
    (GOLDEN_DIR / "request_topdown_2frame.bin").write_bytes(request)

    hello = pack_message({
        "type": "hello",
        "stage": STAGE,
        "method_name": METHOD,
        "protocol_version": PROTOCOL_VERSION,
    })
    meta = {
        "frame_bytes": [int(video.shape[1] * video.shape[2] * 3)] * 2,
        "frame_count": 2,
        "params": PARAMS,
        "stage": STAGE,
    }
    reply = hello + build_result_bytes(meta, {"bboxes_echo": BBOXES})
    (GOLDEN_DIR / "reply_echo.bin").write_bytes(reply)
    print(f"wrote {len(request)}-byte request and {len(reply)}-byte reply"
          f" to {GOLDEN_DIR}")


if __name__ == "__main__":
    main()
