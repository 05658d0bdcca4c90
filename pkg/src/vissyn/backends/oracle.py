"""Grammar-backed reference backends for desk-scale verification.

The detector recovers part boxes from pixels by exact base-color matching,
which is lossless on synthetic glyph scenes (and on anything the oracle
reconstructor paints), then optionally degrades them with seeded geometric
noise to simulate an imperfect detector. The reconstructor paints, inside
the masked patches only, whatever the canonical layout prescribes there.

The reconstructor is handed the container frame as a hint. That is
deliberate leakage: a learned backend must infer the arrangement, the
reference backend is told it. Keep that in mind when comparing scores.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy import ndimage

from ..errors import BackendError, ValidationError
from ..geometry import BBox, Detection
from ..grammar import ContainerFrame, Grammar, instantiate_layout
from ..raster import RasterImage
from ..render import GlyphStyle, render_background, render_parts, style_for
from ..synthcorpus import JitterSpec, SceneAnnotation, derive_rng

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
_MIN_GLYPH_AREA = 6  # px; ignores resampling debris


def _glyph_detections(image: RasterImage, style: GlyphStyle) -> list[Detection]:
    dets: list[Detection] = []
    px = image.pixels
    for label in sorted(style.colors):
        color = np.array(style.colors[label], dtype=np.uint8)
        mask = np.all(px == color, axis=2)
        if not mask.any():
            continue
        components, count = ndimage.label(mask, structure=_EIGHT_CONNECTED)
        for sl in ndimage.find_objects(components):
            if sl is None:
                continue
            ys, xs = sl
            if (ys.stop - ys.start) * (xs.stop - xs.start) < _MIN_GLYPH_AREA:
                continue
            dets.append(
                Detection(
                    box=BBox(float(xs.start), float(ys.start), float(xs.stop), float(ys.stop)),
                    label=label,
                    score=1.0,
                )
            )
    dets.sort(key=lambda d: (d.label, d.box.y_min, d.box.x_min))
    return dets


def _clamp_into(
    x0: float, y0: float, x1: float, y1: float, width: int, height: int
) -> BBox:
    """Translate a raw (possibly out-of-image) box back inside, then clip."""
    dx = dy = 0.0
    if x0 < 0:
        dx = -x0
    elif x1 > width:
        dx = width - x1
    if y0 < 0:
        dy = -y0
    elif y1 > height:
        dy = height - y1
    x0, x1 = max(x0 + dx, 0.0), min(x1 + dx, float(width))
    y0, y1 = max(y0 + dy, 0.0), min(y1 + dy, float(height))
    if x0 >= x1 or y0 >= y1:
        raise BackendError(
            f"detection box ({x0}, {y0}, {x1}, {y1}) cannot fit a {width}x{height} image"
        )
    return BBox(x0, y0, x1, y1)


def apply_detection_noise(
    detections: list[Detection],
    noise: JitterSpec,
    rng: np.random.Generator,
    width: int,
    height: int,
) -> list[Detection]:
    """Degrade detections with truncated-normal jitter and scores in [0.7, 1].

    Offsets are clipped to two sigmas so a noisy box never drifts past
    20% of the part size at sigma 0.05; drop_prob acts as a per-detection
    miss probability.
    """
    if noise.is_zero:
        return list(detections)
    out: list[Detection] = []
    for det in detections:
        if noise.drop_prob > 0 and rng.random() < noise.drop_prob:
            continue
        w, h = det.box.width, det.box.height
        dx = float(np.clip(rng.normal(0.0, 1.0), -2.0, 2.0)) * noise.center_sigma * w
        dy = float(np.clip(rng.normal(0.0, 1.0), -2.0, 2.0)) * noise.center_sigma * h
        sw = w * max(0.2, 1.0 + float(np.clip(rng.normal(0.0, 1.0), -2.0, 2.0)) * noise.size_sigma)
        sh = h * max(0.2, 1.0 + float(np.clip(rng.normal(0.0, 1.0), -2.0, 2.0)) * noise.size_sigma)
        cx, cy = det.box.center
        box = _clamp_into(
            cx + dx - sw / 2, cy + dy - sh / 2, cx + dx + sw / 2, cy + dy + sh / 2,
            width, height,
        )
        score = 0.7 + 0.3 * float(rng.random())
        out.append(Detection(box=box, label=det.label, score=score))
    return out


def oracle_detect(
    image: RasterImage, ann: SceneAnnotation, noise: JitterSpec
) -> list[Detection]:
    """Ground-truth-backed detection: the annotation's parts, degraded per noise.

    With zero noise this is the identity on the annotation parts.
    """
    rng = derive_rng(noise.seed, "detect-gt", ann.scene_id)
    return apply_detection_noise(list(ann.parts), noise, rng, image.width, image.height)


class OracleDetector:
    """Pixel-exact glyph detector with optional simulated noise.

    Works on original scenes and on reconstructions alike, because both are
    rendered with the same exact-color glyph scheme. The noise stream is
    derived from (seed, image bytes), so the detector is a pure function of
    its input.
    """

    def __init__(self, style: GlyphStyle, noise: JitterSpec = JitterSpec()):
        self.style = style
        self.noise = noise

    def detect(self, image: RasterImage) -> list[Detection]:
        dets = _glyph_detections(image, self.style)
        if self.noise.is_zero:
            return dets
        digest = hashlib.blake2b(image.pixels.tobytes(), digest_size=8).hexdigest()
        rng = derive_rng(self.noise.seed, "detect-px", digest)
        return apply_detection_noise(dets, self.noise, rng, image.width, image.height)


def _oracle_background_seed(class_name: str, width: int, height: int) -> int:
    h = hashlib.blake2b(f"oracle-bg\x1f{class_name}\x1f{width}x{height}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


def oracle_reconstruct(
    image: RasterImage,
    masked_patches: set[int],
    frame_hint: ContainerFrame | None,
    grammar: Grammar,
    framed: bool = True,
    patch_size: int = 16,
) -> RasterImage:
    """Repaint masked patches with the canonical scene for the hinted frame.

    Within the mask, pixels become background texture except where a
    canonical slot's glyph lands; everything outside the mask is copied
    verbatim. Without a frame (scatter scenes) the canonical scene is pure
    background, so masked content is simply erased.
    """
    if framed and frame_hint is None:
        raise BackendError("oracle reconstruction of a framed scene needs a frame hint")
    from ..geometry import PatchGrid

    grid = PatchGrid(image.width, image.height, patch_size)
    for index in masked_patches:
        if not 0 <= index < grid.patch_count:
            raise ValidationError(f"masked patch index {index} outside grid")
    canvas = render_background(
        image.width, image.height, _oracle_background_seed(grammar.class_name, image.width, image.height)
    )
    if frame_hint is not None:
        render_parts(canvas, instantiate_layout(grammar, frame_hint), style_for(grammar))
    out = image.mutable_copy()
    p = patch_size
    for index in masked_patches:
        row, col = divmod(index, grid.cols)
        out[row * p : (row + 1) * p, col * p : (col + 1) * p] = canvas[
            row * p : (row + 1) * p, col * p : (col + 1) * p
        ]
    return RasterImage(out)


class OracleReconstructor:
    """Reconstructor contract adapter over oracle_reconstruct."""

    def __init__(self, grammar: Grammar, framed: bool = True, patch_size: int = 16):
        self.grammar = grammar
        self.framed = framed
        self.patch_size = patch_size

    def reconstruct(
        self,
        image: RasterImage,
        masked_patches: set[int],
        hints: ContainerFrame | None = None,
    ) -> RasterImage:
        return oracle_reconstruct(
            image,
            masked_patches,
            hints,
            self.grammar,
            framed=self.framed,
            patch_size=self.patch_size,
        )
