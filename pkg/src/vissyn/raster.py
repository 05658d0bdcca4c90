"""8-bit RGB raster images with NetPBM P6 as the canonical byte format.

P6 is dependency-free and bit-exact, which keeps corpora and protocol
payloads reproducible. PNG is accepted on ingestion when Pillow can decode
it; output is always P6.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class RasterImage:
    """An RGB image backed by a (height, width, 3) uint8 array.

    The pixel array is treated as immutable; operations return new images.
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = self.pixels
        if not isinstance(px, np.ndarray) or px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 3:
            raise ValidationError("RasterImage.pixels must be a (H, W, 3) uint8 array")
        if px.shape[0] <= 0 or px.shape[1] <= 0:
            raise ValidationError("RasterImage dimensions must be positive")
        px.setflags(write=False)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    def validate_for_patch(self, patch_size: int) -> None:
        if self.width % patch_size or self.height % patch_size:
            raise ValidationError(
                f"image {self.width}x{self.height} is not a multiple of patch size {patch_size}"
            )

    def mutable_copy(self) -> np.ndarray:
        return self.pixels.copy()

    def to_p6(self) -> bytes:
        header = f"P6\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + self.pixels.tobytes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )


def from_p6(data: bytes) -> RasterImage:
    """Decode binary PPM (P6, maxval 255)."""
    if not data.startswith(b"P6"):
        raise ValidationError("not a P6 image (bad magic)")
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comment lines allowed, followed by a single whitespace byte.
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise ValidationError(f"malformed P6 header near byte {start}")
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ValidationError(f"unsupported P6 maxval {maxval}, expected 255")
    expected = width * height * 3
    raw = data[pos : pos + expected]
    if len(raw) != expected:
        raise ValidationError(
            f"P6 payload truncated: expected {expected} bytes, got {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3).copy()
    return RasterImage(pixels)


def read_image(path: str | Path) -> RasterImage:
    """Read an image file; P6 natively, PNG and friends via Pillow."""
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(b"P6"):
        return from_p6(data)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise ValidationError(f"{path}: only P6 readable without Pillow") from exc
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return RasterImage(arr)


def write_image(image: RasterImage, path: str | Path) -> None:
    Path(path).write_bytes(image.to_p6())
