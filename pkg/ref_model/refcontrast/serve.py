#!/usr/bin/env python3
"""One-shot saliency server: local luminance contrast.

Speaks protocol revision 1: a single JSON request line on stdin, a single
JSON response line on stdout, one request per process lifetime. The map is
``|luma(p) - mean(luma over a square window around p, replicate borders)|``
where luma is Rec.601 on [0, 1] RGB; the window side comes from the
``contrast_window`` parameter (odd, default 9). The algorithm is
intentionally trivial — this server exists to exercise and document the
protocol, not to predict fixations well.

Environment hooks for harnesses driving this server:
  REFCONTRAST_PID_FILE   write our process id to this path at startup
  REFCONTRAST_DELAY_S    sleep this many seconds before reading the request
"""

import json
import os
import struct
import sys
import time

import numpy as np
from PIL import Image

PROTOCOL_VERSION = 1
MODEL_VERSION = "1.0.0"
DEFAULT_WINDOW = 9

_HEADER = struct.Struct("<4sIII")
_MAGIC = b"SALF"


def load_rgb(path: str) -> np.ndarray:
    """Load an image as 8-bit RGB, shape (H, W, 3)."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def box_sum(values: np.ndarray, window: int) -> np.ndarray:
    """Sum over a window x window neighborhood with replicate borders."""
    radius = window // 2
    padded = np.pad(values, radius, mode="edge")
    summed = np.cumsum(np.cumsum(padded, axis=0), axis=1)
    summed = np.pad(summed, ((1, 0), (1, 0)))
    return (summed[window:, window:] - summed[:-window, window:]
            - summed[window:, :-window] + summed[:-window, :-window])


def contrast_map(rgb: np.ndarray, window: int) -> np.ndarray:
    # Rec.601 luma of 8-bit RGB is exactly (299R + 587G + 114B) / 255000.
    # Working on the integer numerator keeps the window sums exact, so
    # constant regions come out as exactly zero; the single float division
    # at the end is the only rounding step.
    luma_n = (rgb[:, :, 0].astype(np.int64) * 299
              + rgb[:, :, 1].astype(np.int64) * 587
              + rgb[:, :, 2].astype(np.int64) * 114)
    area = window * window
    diff = np.abs(luma_n * area - box_sum(luma_n, window))
    return diff / (255000.0 * area)


def write_f32raw(values: np.ndarray, path: str) -> None:
    height, width = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, height, width, 0))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def parse_window(params: object) -> int:
    if not isinstance(params, dict):
        raise ValueError("'params' must be an object")
    raw = params.get("contrast_window", DEFAULT_WINDOW)
    if isinstance(raw, bool) or not isinstance(raw, (int, float)) or raw != int(raw):
        raise ValueError(f"contrast_window must be an integer, got {raw!r}")
    window = int(raw)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"contrast_window must be an odd integer >= 1, got {window}")
    return window


def handle(request: dict) -> str:
    version = request.get("protocol_version")
    if version != PROTOCOL_VERSION:
        raise ValueError(
            f"unsupported protocol_version {version!r}; "
            f"this server implements version {PROTOCOL_VERSION}"
        )
    image_path = request.get("image_path")
    output_path = request.get("output_path")
    if not isinstance(image_path, str) or not image_path:
        raise ValueError("request is missing 'image_path'")
    if not isinstance(output_path, str) or not output_path:
        raise ValueError("request is missing 'output_path'")
    window = parse_window(request.get("params", {}))
    write_f32raw(contrast_map(load_rgb(image_path), window), output_path)
    return output_path


def main() -> int:
    pid_file = os.environ.get("REFCONTRAST_PID_FILE")
    if pid_file:
        with open(pid_file, "w") as fh:
            fh.write(str(os.getpid()))
    delay = os.environ.get("REFCONTRAST_DELAY_S")
    if delay:
        time.sleep(float(delay))

    try:
        line = sys.stdin.readline()
        if not line.strip():
            raise ValueError("expected one request line on stdin, got none")
        request = json.loads(line)
        if not isinstance(request, dict):
            raise ValueError("request must be a JSON object")
        map_path = handle(request)
    except Exception as exc:  # one error response for every failure mode
        print(json.dumps({"status": "error", "error_message": str(exc)}), flush=True)
        return 1
    print(json.dumps({
        "status": "ok",
        "map_path": map_path,
        "model_version": MODEL_VERSION,
    }), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
