"""Glyph and background rasterization for synthetic scenes.

Each part label gets a distinct flat base color plus an inner detail shape
in a darkened tone. Color bands are chosen so that exact base colors never
occur in the background texture or in any darkened detail, which lets the
grammar-backed detector recover glyph boxes from pixels alone:

- base colors: every channel is <= 60 or >= 160
- darkened details: base // 2, so all channels <= 115 with one <= 30
- background noise: all channels in [112, 143]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry import BBox
from .grammar import Grammar

_PALETTE: tuple[tuple[int, int, int], ...] = (
    (200, 40, 40),
    (40, 170, 50),
    (50, 60, 210),
    (220, 200, 40),
    (190, 40, 190),
    (40, 190, 190),
    (230, 160, 40),
    (160, 40, 220),
    (40, 220, 160),
    (220, 40, 160),
    (160, 220, 40),
    (40, 160, 220),
)

_SHAPES: tuple[str, ...] = ("rect", "ellipse", "triangle", "diamond", "hbars", "cross")

BG_LOW = 112
BG_HIGH = 143  # inclusive


@dataclass(frozen=True)
class GlyphStyle:
    """Deterministic label -> (color, shape) assignment for one vocabulary."""

    colors: dict[str, tuple[int, int, int]]
    shapes: dict[str, str]

    def color(self, label: str) -> tuple[int, int, int]:
        return self.colors[label]


def style_for(grammar: Grammar) -> GlyphStyle:
    if len(grammar.vocabulary) > len(_PALETTE):
        raise ValidationError(
            f"grammar {grammar.class_name!r} has {len(grammar.vocabulary)} labels; "
            f"glyph palette supports at most {len(_PALETTE)}"
        )
    colors = {}
    shapes = {}
    for i, label in enumerate(grammar.vocabulary):
        colors[label] = _PALETTE[i]
        shapes[label] = _SHAPES[i % len(_SHAPES)]
    return GlyphStyle(colors=colors, shapes=shapes)


def render_background(width: int, height: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.integers(BG_LOW, BG_HIGH + 1, size=(height, width, 3), dtype=np.uint8)


def snap(value: float) -> int:
    """Round half away from zero; the single rasterization rounding rule."""
    return int(math.floor(value + 0.5))


def snap_box(box: BBox) -> tuple[int, int, int, int]:
    x0, y0 = snap(box.x_min), snap(box.y_min)
    x1, y1 = snap(box.x_max), snap(box.y_max)
    if x1 <= x0:
        x1 = x0 + 1
    if y1 <= y0:
        y1 = y0 + 1
    return x0, y0, x1, y1


def _shape_mask(shape: str, h: int, w: int) -> np.ndarray:
    yg, xg = np.indices((h, w), dtype=np.float64)
    ys = (yg + 0.5) / h  # pixel centers in (0, 1)
    xs = (xg + 0.5) / w
    if shape == "rect":
        return np.ones((h, w), dtype=bool)
    if shape == "ellipse":
        return ((xs - 0.5) / 0.5) ** 2 + ((ys - 0.5) / 0.5) ** 2 <= 1.0
    if shape == "triangle":
        return (ys >= np.abs(xs - 0.5) * 2.0) & (ys <= 1.0)
    if shape == "diamond":
        return np.abs(xs - 0.5) + np.abs(ys - 0.5) <= 0.5
    if shape == "hbars":
        return ((ys >= 0.1) & (ys <= 0.4)) | ((ys >= 0.6) & (ys <= 0.9))
    if shape == "cross":
        return (np.abs(xs - 0.5) <= 0.18) | (np.abs(ys - 0.5) <= 0.18)
    raise ValidationError(f"unknown glyph shape {shape!r}")


def draw_glyph(canvas: np.ndarray, box: BBox, label: str, style: GlyphStyle) -> None:
    """Paint one part glyph in place: a flat base-color box with an inset
    darkened detail shape. The base-color ring at the border stays pure so
    the rasterized extent matches the box."""
    x0, y0, x1, y1 = snap_box(box)
    x0c, y0c = max(x0, 0), max(y0, 0)
    x1c, y1c = min(x1, canvas.shape[1]), min(y1, canvas.shape[0])
    if x1c <= x0c or y1c <= y0c:
        return
    base = np.array(style.colors[label], dtype=np.uint8)
    dark = np.array([c // 2 for c in style.colors[label]], dtype=np.uint8)
    canvas[y0c:y1c, x0c:x1c] = base
    # Inner detail inset by 20% of the box on each side, minimum 2 px ring.
    ix0 = x0 + max(2, snap(0.2 * (x1 - x0)))
    iy0 = y0 + max(2, snap(0.2 * (y1 - y0)))
    ix1 = x1 - max(2, snap(0.2 * (x1 - x0)))
    iy1 = y1 - max(2, snap(0.2 * (y1 - y0)))
    ix0, iy0 = max(ix0, 0), max(iy0, 0)
    ix1, iy1 = min(ix1, canvas.shape[1]), min(iy1, canvas.shape[0])
    if ix1 - ix0 >= 2 and iy1 - iy0 >= 2:
        mask = _shape_mask(style.shapes[label], iy1 - iy0, ix1 - ix0)
        region = canvas[iy0:iy1, ix0:ix1]
        region[mask] = dark


def render_parts(
    canvas: np.ndarray,
    parts: list,
    style: GlyphStyle,
) -> None:
    """Paint glyphs for a list of Detections onto the canvas, in order."""
    for det in parts:
        draw_glyph(canvas, det.box, det.label, style)
