"""Minimal binary PPM (P6) codec plus the base64 wrapping the wire uses.

Kept self-contained on purpose: this package talks to the evaluation
harness only through documented file formats and the wire protocol.
"""

from __future__ import annotations

import base64

import numpy as np


def decode_p6(data: bytes) -> np.ndarray:
    if not data.startswith(b"P6"):
        raise ValueError("not a P6 image")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    expected = width * height * 3
    raw = data[pos : pos + expected]
    if len(raw) != expected:
        raise ValueError("truncated P6 payload")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3).copy()


def encode_p6(pixels: np.ndarray) -> bytes:
    h, w, c = pixels.shape
    assert c == 3 and pixels.dtype == np.uint8
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def image_from_b64(payload: str) -> np.ndarray:
    return decode_p6(base64.b64decode(payload.encode("ascii")))


def image_to_b64(pixels: np.ndarray) -> str:
    return base64.b64encode(encode_p6(pixels)).decode("ascii")


def read_image(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_p6(f.read())
