"""Syntax-breaking edits of correct scenes.

Three in-place edit kinds mirror classic word-level mistakes (swapping two
parts, replacing a part with a wrong one, inserting an extra part) and a
fourth scatters all parts over a bare background. Omission is deliberately
not an edit kind: scenes may be correct despite missing parts, so removing
one must never be counted as breaking syntax.

Annotation boxes stay authoritative over pixels: downstream checking
consumes boxes and labels, the pixel edits exist so that pixel-driven
detectors see the same story. Pixel content is moved with bilinear
resampling and hard pastes.
"""

from __future__ import annotations

import dataclasses
import hashlib

import numpy as np
from PIL import Image

from .errors import GenerationError, ValidationError
from .geometry import BBox, Detection, iou
from .grammar import ContainerFrame
from .raster import RasterImage
from .render import GlyphStyle, draw_glyph, snap_box
from .synthcorpus import INCORRECT, PerturbationRecord, SceneAnnotation, derive_rng

_PLACEMENT_ATTEMPTS = 64
_PLACEMENT_MAX_IOU = 0.1
# Same-label glyphs need daylight between their rasterized boxes, or a
# pixel-driven detector reads two touching copies as one part.
_SAME_LABEL_GAP_PX = 2


class StyleGlyphSource:
    """Part-content library that paints fresh glyphs for a vocabulary style."""

    def __init__(self, style: GlyphStyle):
        self.style = style

    def has(self, label: str) -> bool:
        return label in self.style.colors

    def paint(self, canvas: np.ndarray, box: BBox, label: str) -> None:
        if not self.has(label):
            raise GenerationError(f"glyph source has no content for label {label!r}")
        draw_glyph(canvas, box, label, self.style)


def _crop(pixels: np.ndarray, box: BBox) -> np.ndarray:
    x0, y0, x1, y1 = snap_box(box)
    return pixels[y0:y1, x0:x1].copy()


def _paste_resized(canvas: np.ndarray, crop: np.ndarray, box: BBox) -> None:
    x0, y0, x1, y1 = snap_box(box)
    w, h = x1 - x0, y1 - y0
    if crop.shape[:2] != (h, w):
        crop = np.asarray(
            Image.fromarray(crop).resize((w, h), Image.BILINEAR), dtype=np.uint8
        )
    canvas[y0:y1, x0:x1] = crop


def _part_ref(det: Detection) -> dict:
    return {"label": det.label, "box": list(det.box.as_tuple())}


def _resolve_part(ann: SceneAnnotation, ref: str | int | dict) -> int:
    """Find a part by index, unique label, or {label, box} reference."""
    if isinstance(ref, int):
        if not 0 <= ref < len(ann.parts):
            raise ValidationError(f"part index {ref} out of range")
        return ref
    if isinstance(ref, str):
        hits = [i for i, d in enumerate(ann.parts) if d.label == ref]
        if not hits:
            raise ValidationError(f"no part labeled {ref!r} in scene {ann.scene_id!r}")
        if len(hits) > 1:
            raise ValidationError(
                f"label {ref!r} is ambiguous in scene {ann.scene_id!r}; use an index"
            )
        return hits[0]
    box = tuple(ref["box"])
    for i, d in enumerate(ann.parts):
        if d.label == ref["label"] and d.box.as_tuple() == box:
            return i
    raise ValidationError(f"no part matching reference {ref!r} in scene {ann.scene_id!r}")


def _with_parts(
    ann: SceneAnnotation,
    parts: tuple[Detection, ...],
    record: PerturbationRecord,
    framed: bool | None = None,
    frame: ContainerFrame | None = None,
) -> SceneAnnotation:
    return dataclasses.replace(
        ann,
        parts=parts,
        correctness=INCORRECT,
        provenance=ann.provenance + (record,),
        framed=ann.framed if framed is None else framed,
        frame=ann.frame if frame is None else frame,
    )


def perturb_swap(
    image: RasterImage,
    ann: SceneAnnotation,
    part_a: str | int | dict,
    part_b: str | int | dict,
    seed: int = 0,
) -> tuple[RasterImage, SceneAnnotation]:
    """Exchange the pixel content and labels of two parts.

    Each crop is bilinearly resized to the destination box; the boxes
    themselves do not move, so the part-label multiset is preserved.
    """
    ia = _resolve_part(ann, part_a)
    ib = _resolve_part(ann, part_b)
    if ia == ib:
        raise ValidationError("swap needs two different parts")
    a, b = ann.parts[ia], ann.parts[ib]
    canvas = image.mutable_copy()
    crop_a = _crop(image.pixels, a.box)
    crop_b = _crop(image.pixels, b.box)
    _paste_resized(canvas, crop_b, a.box)
    _paste_resized(canvas, crop_a, b.box)
    parts = list(ann.parts)
    parts[ia] = Detection(box=a.box, label=b.label, score=a.score)
    parts[ib] = Detection(box=b.box, label=a.label, score=b.score)
    record = PerturbationRecord(
        kind="swap", seed=seed, operands={"part_a": _part_ref(a), "part_b": _part_ref(b)}
    )
    return RasterImage(canvas), _with_parts(ann, tuple(parts), record)


def perturb_replace(
    image: RasterImage,
    ann: SceneAnnotation,
    target_part: str | int | dict,
    new_label: str,
    source_library: StyleGlyphSource,
    seed: int = 0,
) -> tuple[RasterImage, SceneAnnotation]:
    """Overwrite one part with library content for a different label."""
    it = _resolve_part(ann, target_part)
    target = ann.parts[it]
    if new_label == target.label:
        raise ValidationError(f"replacement label equals target label {new_label!r}")
    if not source_library.has(new_label):
        raise GenerationError(f"source library has no content for label {new_label!r}")
    canvas = image.mutable_copy()
    source_library.paint(canvas, target.box, new_label)
    parts = list(ann.parts)
    parts[it] = Detection(box=target.box, label=new_label, score=target.score)
    record = PerturbationRecord(
        kind="replace", seed=seed, operands={"target": _part_ref(target), "new_label": new_label}
    )
    return RasterImage(canvas), _with_parts(ann, tuple(parts), record)


def _touches(a: BBox, b: BBox, gap: int) -> bool:
    ax0, ay0, ax1, ay1 = snap_box(a)
    bx0, by0, bx1, by1 = snap_box(b)
    return not (ax1 + gap <= bx0 or bx1 + gap <= ax0 or ay1 + gap <= by0 or by1 + gap <= ay0)


def _sample_box(
    rng: np.random.Generator,
    w: float,
    h: float,
    region: BBox,
    obstacles: list[BBox],
    keep_clear: list[BBox] = (),
) -> BBox:
    if w > region.width or h > region.height:
        raise GenerationError(
            f"part of size {w:.0f}x{h:.0f} cannot fit inside region {region.as_tuple()}"
        )
    for _ in range(_PLACEMENT_ATTEMPTS):
        x0 = region.x_min + rng.random() * (region.width - w)
        y0 = region.y_min + rng.random() * (region.height - h)
        box = BBox(x0, y0, x0 + w, y0 + h)
        if all(iou(box, ob) < _PLACEMENT_MAX_IOU for ob in obstacles) and not any(
            _touches(box, other, _SAME_LABEL_GAP_PX) for other in keep_clear
        ):
            return box
    raise GenerationError(
        f"no non-overlapping placement found after {_PLACEMENT_ATTEMPTS} samples"
    )


def perturb_extra(
    image: RasterImage,
    ann: SceneAnnotation,
    label: str,
    seed: int = 0,
    source_library: StyleGlyphSource | None = None,
    size: tuple[float, float] | None = None,
) -> tuple[RasterImage, SceneAnnotation]:
    """Paste one additional part at a random in-frame location.

    The content is a copy of an existing part with that label when present,
    otherwise a library glyph (then `size` or the mean existing part size
    decides the box). The new box overlaps every existing part with IOU
    below 0.1.
    """
    rng = derive_rng(seed, "extra", ann.scene_id, label)
    donors = [d for d in ann.parts if d.label == label]
    if donors:
        donor = donors[0]
        w, h = donor.box.width, donor.box.height
    else:
        if source_library is None or not source_library.has(label):
            raise GenerationError(f"no existing part and no library content for {label!r}")
        if size is not None:
            w, h = size
        elif ann.parts:
            w = float(np.mean([d.box.width for d in ann.parts]))
            h = float(np.mean([d.box.height for d in ann.parts]))
        else:
            raise GenerationError("cannot infer a size for the extra part")
    box = _sample_box(
        rng,
        w,
        h,
        ann.frame.box,
        [d.box for d in ann.parts],
        keep_clear=[d.box for d in ann.parts if d.label == label],
    )
    canvas = image.mutable_copy()
    if donors:
        _paste_resized(canvas, _crop(image.pixels, donor.box), box)
    else:
        assert source_library is not None
        source_library.paint(canvas, box, label)
    parts = ann.parts + (Detection(box=box, label=label, score=1.0),)
    record = PerturbationRecord(
        kind="extra", seed=seed, operands={"label": label, "box": list(box.as_tuple())}
    )
    return RasterImage(canvas), _with_parts(ann, parts, record)


def perturb_scatter(
    image: RasterImage,
    ann: SceneAnnotation,
    background: RasterImage,
    seed: int = 0,
) -> tuple[RasterImage, SceneAnnotation]:
    """Cut all parts out and strew them over a bare background.

    The result has no object container: the annotation frame becomes the
    full image and the scene is marked frameless. Placements keep pairwise
    IOU below 0.1.
    """
    if (background.width, background.height) != (image.width, image.height):
        raise ValidationError(
            f"background {background.width}x{background.height} does not match "
            f"scene {image.width}x{image.height}"
        )
    rng = derive_rng(seed, "scatter", ann.scene_id)
    full = BBox(0.0, 0.0, float(image.width), float(image.height))
    canvas = background.mutable_copy()
    placed: list[Detection] = []
    placements = []
    for det in ann.parts:
        box = _sample_box(
            rng,
            det.box.width,
            det.box.height,
            full,
            [p.box for p in placed],
            keep_clear=[p.box for p in placed if p.label == det.label],
        )
        _paste_resized(canvas, _crop(image.pixels, det.box), box)
        placed.append(Detection(box=box, label=det.label, score=det.score))
        placements.append({"label": det.label, "box": list(box.as_tuple())})
    digest = hashlib.sha256(background.pixels.tobytes()).hexdigest()
    record = PerturbationRecord(
        kind="scatter",
        seed=seed,
        operands={"background": {"sha256": digest}, "placements": placements},
    )
    return RasterImage(canvas), _with_parts(
        ann, tuple(placed), record, framed=False, frame=ContainerFrame(full)
    )


def replay(
    image: RasterImage,
    ann: SceneAnnotation,
    record: PerturbationRecord,
    source_library: StyleGlyphSource | None = None,
    background: RasterImage | None = None,
) -> tuple[RasterImage, SceneAnnotation]:
    """Re-apply a recorded perturbation to its source scene."""
    if record.kind == "swap":
        return perturb_swap(
            image, ann, record.operands["part_a"], record.operands["part_b"], record.seed
        )
    if record.kind == "replace":
        if source_library is None:
            raise ValidationError("replaying a replace needs the source library")
        return perturb_replace(
            image,
            ann,
            record.operands["target"],
            record.operands["new_label"],
            source_library,
            record.seed,
        )
    if record.kind == "extra":
        x0, y0, x1, y1 = record.operands["box"]
        return perturb_extra(
            image,
            ann,
            record.operands["label"],
            record.seed,
            source_library=source_library,
            size=(x1 - x0, y1 - y0),
        )
    if record.kind == "scatter":
        if background is None:
            raise ValidationError("replaying a scatter needs the background image")
        expected = record.operands["background"]["sha256"]
        actual = hashlib.sha256(background.pixels.tobytes()).hexdigest()
        if actual != expected:
            raise ValidationError("scatter replay background does not match the record")
        return perturb_scatter(image, ann, background, record.seed)
    raise ValidationError(f"unknown perturbation kind {record.kind!r}")
