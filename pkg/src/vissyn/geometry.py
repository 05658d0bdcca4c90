"""Axis-aligned box arithmetic, IOU, NMS, and box-to-patch-grid mapping.

Boxes use continuous pixel coordinates in an image frame with the origin at
the top-left corner. Areas are computed analytically, so a box is a region,
not a set of integer pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with strictly positive area.

    Coordinates are finite, non-negative floats with x_min < x_max and
    y_min < y_max.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"BBox.{name} must be finite, got {v!r}")
            if v < 0:
                raise ValidationError(f"BBox.{name} must be >= 0, got {v!r}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(
                f"BBox must have positive area, got "
                f"({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def contains_box(self, other: "BBox") -> bool:
        return (
            self.x_min <= other.x_min
            and self.y_min <= other.y_min
            and self.x_max >= other.x_max
            and self.y_max >= other.y_max
        )

    def clipped(self, x_max: float, y_max: float) -> "BBox | None":
        """Intersect with the image rectangle (0, 0, x_max, y_max).

        Returns None when nothing with positive area remains.
        """
        x0 = max(self.x_min, 0.0)
        y0 = max(self.y_min, 0.0)
        x1 = min(self.x_max, x_max)
        y1 = min(self.y_max, y_max)
        if x0 >= x1 or y0 >= y1:
            return None
        return BBox(x0, y0, x1, y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Detection:
    """A labeled box with a confidence score in [0, 1]."""

    box: BBox
    label: str
    score: float

    def __post_init__(self) -> None:
        if not self.label:
            raise ValidationError("Detection.label must be non-empty")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValidationError(f"Detection.score must be in [0, 1], got {self.score!r}")


@dataclass(frozen=True)
class PatchGrid:
    """A non-overlapping square-patch tiling of an image.

    Both image dimensions must be positive multiples of patch_size. Patch
    indices are row-major: index = row * cols + col.
    """

    image_width: int
    image_height: int
    patch_size: int = 16

    def __post_init__(self) -> None:
        if self.patch_size <= 0:
            raise ValidationError(f"patch_size must be positive, got {self.patch_size}")
        for name in ("image_width", "image_height"):
            v = getattr(self, name)
            if v <= 0 or v % self.patch_size != 0:
                raise ValidationError(
                    f"PatchGrid.{name}={v} must be a positive multiple of "
                    f"patch_size={self.patch_size}"
                )

    @property
    def cols(self) -> int:
        return self.image_width // self.patch_size

    @property
    def rows(self) -> int:
        return self.image_height // self.patch_size

    @property
    def patch_count(self) -> int:
        return self.rows * self.cols

    def patch_box(self, index: int) -> BBox:
        """Pixel extent of one patch."""
        if not 0 <= index < self.patch_count:
            raise ValidationError(f"patch index {index} out of range [0, {self.patch_count})")
        row, col = divmod(index, self.cols)
        p = self.patch_size
        return BBox(col * p, row * p, (col + 1) * p, (row + 1) * p)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def nms(detections: list[Detection], threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression, applied per label.

    Detections are visited in descending score order (ties broken by
    (label, x_min, y_min) so output is deterministic); one is kept unless
    its IOU with an already-kept detection of the same label exceeds
    threshold. Suppression never crosses labels: co-located boxes with
    different labels all survive.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"NMS threshold must be in [0, 1], got {threshold!r}")
    ordered = sorted(
        detections, key=lambda d: (-d.score, d.label, d.box.x_min, d.box.y_min)
    )
    kept: list[Detection] = []
    for det in ordered:
        suppressed = any(
            k.label == det.label and iou(k.box, det.box) > threshold for k in kept
        )
        if not suppressed:
            kept.append(det)
    return kept


def patches_for_box(grid: PatchGrid, box: BBox) -> set[int]:
    """Row-major indices of every patch whose extent overlaps the box interior.

    Overlap is open-interval: a box that merely touches a patch boundary does
    not select that patch. The box must lie within the image bounds.
    """
    if box.x_min < 0 or box.y_min < 0 or box.x_max > grid.image_width or box.y_max > grid.image_height:
        raise ValidationError(
            f"box {box.as_tuple()} lies outside the {grid.image_width}x{grid.image_height} image"
        )
    p = grid.patch_size
    col_lo = int(math.floor(box.x_min / p))
    col_hi = int(math.ceil(box.x_max / p)) - 1
    row_lo = int(math.floor(box.y_min / p))
    row_hi = int(math.ceil(box.y_max / p)) - 1
    # A box starting exactly on a patch boundary has zero overlap with the
    # patch to its left; floor() already lands on the correct first patch.
    col_hi = min(col_hi, grid.cols - 1)
    row_hi = min(row_hi, grid.rows - 1)
    return {
        row * grid.cols + col
        for row in range(row_lo, row_hi + 1)
        for col in range(col_lo, col_hi + 1)
    }
