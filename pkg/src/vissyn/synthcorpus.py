"""Deterministic synthetic scene generation and corpus file I/O.

Scenes are grammar-conformant by construction: each part label is drawn as
a distinct flat-color glyph inside its (optionally jittered) slot box over
a seeded noise background. Realism is explicitly not a goal; exactness is.

On disk a corpus is a directory of P6 images plus one JSON annotation per
scene and a JSON manifest index (schemas in docs/formats.md).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import GenerationError, ValidationError
from .geometry import BBox, Detection, iou
from .grammar import ContainerFrame, Grammar, grammar_to_json, parse_grammar
from .raster import RasterImage, read_image, write_image

ANNOTATION_FORMAT_VERSION = 1
MANIFEST_FORMAT_VERSION = 1

CORRECT = "correct"
INCORRECT = "incorrect"
UNKNOWN = "unknown"
_CORRECTNESS = (CORRECT, INCORRECT, UNKNOWN)

# Same-label ground-truth pairs above this IOU would be NMS-unstable.
NMS_STABILITY_IOU = 0.3


def derive_rng(seed: int, *scope: object) -> np.random.Generator:
    """Stable, platform-independent RNG for a (seed, scope...) context."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for item in scope:
        h.update(b"\x1f")
        h.update(str(item).encode())
    return np.random.Generator(np.random.PCG64(int.from_bytes(h.digest(), "big")))


@dataclass(frozen=True)
class JitterSpec:
    """Controlled geometric noise for generation (and detector simulation).

    center_sigma and size_sigma are fractions of each part's size;
    drop_prob is the probability of omitting a non-required part.
    """

    seed: int = 0
    center_sigma: float = 0.0
    size_sigma: float = 0.0
    drop_prob: float = 0.0

    def __post_init__(self) -> None:
        if self.center_sigma < 0 or self.size_sigma < 0:
            raise ValidationError("jitter sigmas must be >= 0")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValidationError(f"drop_prob must be in [0, 1], got {self.drop_prob!r}")

    @property
    def is_zero(self) -> bool:
        return self.center_sigma == 0 and self.size_sigma == 0 and self.drop_prob == 0


@dataclass(frozen=True)
class PerturbationRecord:
    """Replayable description of one syntax-breaking edit."""

    kind: str
    seed: int
    operands: dict = field(default_factory=dict)

    _KINDS = ("swap", "replace", "extra", "scatter")
    _REQUIRED_OPERANDS = {
        "swap": ("part_a", "part_b"),
        "replace": ("target", "new_label"),
        "extra": ("label", "box"),
        "scatter": ("background",),
    }

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValidationError(f"unknown perturbation kind {self.kind!r}")
        missing = [k for k in self._REQUIRED_OPERANDS[self.kind] if k not in self.operands]
        if missing:
            raise ValidationError(f"{self.kind} record missing operands {missing}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "operands": self.operands}

    @classmethod
    def from_dict(cls, doc: dict) -> "PerturbationRecord":
        return cls(kind=doc["kind"], seed=int(doc["seed"]), operands=dict(doc["operands"]))


@dataclass(frozen=True)
class SceneAnnotation:
    """Ground truth (or detector output) for one scene."""

    scene_id: str
    class_name: str
    image_ref: str
    parts: tuple[Detection, ...]
    frame: ContainerFrame
    correctness: str = UNKNOWN
    framed: bool = True  # False for scatter scenes: no object container
    provenance: tuple[PerturbationRecord, ...] = ()

    def __post_init__(self) -> None:
        if self.correctness not in _CORRECTNESS:
            raise ValidationError(f"correctness must be one of {_CORRECTNESS}")
        if self.correctness == CORRECT:
            for i, a in enumerate(self.parts):
                for b in self.parts[i + 1 :]:
                    if a.label == b.label and iou(a.box, b.box) > NMS_STABILITY_IOU:
                        raise ValidationError(
                            f"scene {self.scene_id!r}: correct scene has same-label parts "
                            f"{a.label!r} with IOU > {NMS_STABILITY_IOU}"
                        )

    def validate_against(self, grammar: Grammar) -> None:
        for det in self.parts:
            if not grammar.has_label(det.label):
                raise ValidationError(
                    f"scene {self.scene_id!r}: part label {det.label!r} not in "
                    f"grammar {grammar.class_name!r}"
                )

    def label_multiset(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for det in self.parts:
            out[det.label] = out.get(det.label, 0) + 1
        return out


def default_frame(image_size: int) -> ContainerFrame:
    margin = 0.1 * image_size
    return ContainerFrame(BBox(margin, margin, image_size - margin, image_size - margin))


def _jitter_slot_box(
    base: BBox, jitter: JitterSpec, rng: np.random.Generator, frame: BBox
) -> BBox | None:
    w, h = base.width, base.height
    dx = rng.normal(0.0, 1.0) * jitter.center_sigma * w
    dy = rng.normal(0.0, 1.0) * jitter.center_sigma * h
    scale_w = max(0.2, 1.0 + rng.normal(0.0, 1.0) * jitter.size_sigma)
    scale_h = max(0.2, 1.0 + rng.normal(0.0, 1.0) * jitter.size_sigma)
    if scale_w == 1.0 and scale_h == 1.0:
        # pure translation keeps zero jitter bit-exact
        x0, y0, x1, y1 = base.x_min + dx, base.y_min + dy, base.x_max + dx, base.y_max + dy
    else:
        cx, cy = base.center
        sw, sh = w * scale_w, h * scale_h
        x0, y0 = (cx + dx) - sw / 2, (cy + dy) - sh / 2
        x1, y1 = (cx + dx) + sw / 2, (cy + dy) + sh / 2
    if x0 >= frame.x_min and y0 >= frame.y_min and x1 <= frame.x_max and y1 <= frame.y_max:
        return BBox(x0, y0, x1, y1)
    return None


def generate_scene(
    grammar: Grammar,
    image_size: int,
    jitter: JitterSpec,
    scene_id: str,
    patch_size: int = 16,
) -> tuple[RasterImage, SceneAnnotation]:
    """Render one syntactically correct scene.

    Deterministic given (grammar, image_size, jitter, scene_id). Required
    parts whose jitter leaves the frame are re-drawn up to 16 times before
    a GenerationError is raised.
    """
    from .render import render_background, style_for  # local: render pulls grammar

    if image_size <= 0 or image_size % patch_size != 0:
        raise ValidationError(
            f"image_size {image_size} must be a positive multiple of patch size {patch_size}"
        )
    frame = default_frame(image_size)
    rng = derive_rng(jitter.seed, "scene", scene_id)
    parts: list[Detection] = []
    for slot in grammar.layout:
        if not slot.required and rng.random() < jitter.drop_prob:
            continue
        base = _affine_slot_box(slot, frame.box)
        box = None
        for _ in range(16):
            box = _jitter_slot_box(base, jitter, rng, frame.box)
            if box is not None:
                break
        if box is None:
            raise GenerationError(
                f"scene {scene_id!r}: part {slot.label!r} left the frame after 16 jitter draws"
            )
        parts.append(Detection(box=box, label=slot.label, score=1.0))
    parts.sort(key=lambda d: (d.box.center[1], d.box.center[0], d.label))

    style = style_for(grammar)
    canvas = render_background(image_size, image_size, _background_seed(jitter.seed, scene_id))
    from .render import render_parts

    render_parts(canvas, parts, style)
    image = RasterImage(canvas)
    ann = SceneAnnotation(
        scene_id=scene_id,
        class_name=grammar.class_name,
        image_ref=f"{scene_id}.ppm",
        parts=tuple(parts),
        frame=frame,
        correctness=CORRECT,
    )
    return image, ann


def _affine_slot_box(slot, frame: BBox) -> BBox:
    rel = slot.rel_box()
    return BBox(
        frame.x_min + rel.x_min * frame.width,
        frame.y_min + rel.y_min * frame.height,
        frame.x_min + rel.x_max * frame.width,
        frame.y_min + rel.y_max * frame.height,
    )


def _background_seed(seed: int, scene_id: str) -> int:
    h = hashlib.blake2b(f"{seed}\x1fbg\x1f{scene_id}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


# --------------------------------------------------------------------------
# Serialization


def annotation_to_dict(ann: SceneAnnotation) -> dict:
    return {
        "version": ANNOTATION_FORMAT_VERSION,
        "scene_id": ann.scene_id,
        "class_name": ann.class_name,
        "image": ann.image_ref,
        "frame": list(ann.frame.box.as_tuple()),
        "framed": ann.framed,
        "correctness": ann.correctness,
        "parts": [
            {"label": d.label, "box": list(d.box.as_tuple()), "score": d.score}
            for d in ann.parts
        ],
        "provenance": [r.to_dict() for r in ann.provenance],
    }


def annotation_from_dict(doc: dict) -> SceneAnnotation:
    if doc.get("version") != ANNOTATION_FORMAT_VERSION:
        raise ValidationError(f"unsupported annotation version {doc.get('version')!r}")
    return SceneAnnotation(
        scene_id=doc["scene_id"],
        class_name=doc["class_name"],
        image_ref=doc["image"],
        parts=tuple(
            Detection(box=BBox(*p["box"]), label=p["label"], score=float(p["score"]))
            for p in doc["parts"]
        ),
        frame=ContainerFrame(BBox(*doc["frame"])),
        correctness=doc["correctness"],
        framed=bool(doc.get("framed", True)),
        provenance=tuple(PerturbationRecord.from_dict(r) for r in doc.get("provenance", [])),
    )


def _dump_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def imbalance_ratio(correct: int, incorrect: int) -> str:
    g = math.gcd(correct, incorrect)
    if g == 0:
        return f"{correct}:{incorrect}"
    return f"{correct // g}:{incorrect // g}"


def _build_manifest(entries: list[dict], grammars: dict[str, str]) -> dict:
    counts = {CORRECT: 0, INCORRECT: 0, UNKNOWN: 0}
    for e in entries:
        counts[e["correctness"]] += 1
    return {
        "version": MANIFEST_FORMAT_VERSION,
        "scenes": sorted(entries, key=lambda e: e["scene_id"]),
        "counts": counts,
        "imbalance": imbalance_ratio(counts[CORRECT], counts[INCORRECT]),
        "grammars": dict(sorted(grammars.items())),
    }


def write_corpus(
    scenes: Iterable[tuple[RasterImage, SceneAnnotation]],
    corpus_dir: str | Path,
    grammars: Iterable[Grammar] = (),
) -> Path:
    """Write images, annotations, grammar snapshots, and the manifest.

    Returns the manifest path. Fails if the directory already holds a
    manifest (use extend_corpus to add scenes).
    """
    corpus_dir = Path(corpus_dir)
    corpus_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = corpus_dir / "manifest.json"
    if manifest_path.exists():
        raise ValidationError(f"{manifest_path} already exists; use extend_corpus")
    grammar_files: dict[str, str] = {}
    for g in grammars:
        fname = f"{g.class_name}.grammar.json"
        (corpus_dir / fname).write_text(grammar_to_json(g), encoding="utf-8")
        grammar_files[g.class_name] = fname
    entries = _write_scene_files(scenes, corpus_dir, existing_ids=set())
    _dump_json(_build_manifest(entries, grammar_files), manifest_path)
    return manifest_path


def extend_corpus(
    scenes: Iterable[tuple[RasterImage, SceneAnnotation]],
    corpus_dir: str | Path,
    grammars: Iterable[Grammar] = (),
) -> Path:
    """Add scenes to an existing corpus and rewrite its manifest."""
    corpus_dir = Path(corpus_dir)
    manifest = read_manifest(corpus_dir)
    entries = list(manifest["scenes"])
    grammar_files = dict(manifest.get("grammars", {}))
    for g in grammars:
        fname = f"{g.class_name}.grammar.json"
        (corpus_dir / fname).write_text(grammar_to_json(g), encoding="utf-8")
        grammar_files[g.class_name] = fname
    existing = {e["scene_id"] for e in entries}
    entries.extend(_write_scene_files(scenes, corpus_dir, existing_ids=existing))
    manifest_path = corpus_dir / "manifest.json"
    _dump_json(_build_manifest(entries, grammar_files), manifest_path)
    return manifest_path


def _write_scene_files(
    scenes: Iterable[tuple[RasterImage, SceneAnnotation]],
    corpus_dir: Path,
    existing_ids: set[str],
) -> list[dict]:
    entries = []
    for image, ann in scenes:
        if ann.scene_id in existing_ids:
            raise ValidationError(f"duplicate scene_id {ann.scene_id!r} in corpus")
        existing_ids.add(ann.scene_id)
        image_name = ann.image_ref or f"{ann.scene_id}.ppm"
        ann_name = f"{ann.scene_id}.json"
        try:
            write_image(image, corpus_dir / image_name)
            _dump_json(annotation_to_dict(ann), corpus_dir / ann_name)
        except OSError as exc:
            raise GenerationError(f"cannot write scene files under {corpus_dir}: {exc}") from exc
        entries.append(
            {
                "scene_id": ann.scene_id,
                "class_name": ann.class_name,
                "correctness": ann.correctness,
                "image": image_name,
                "annotation": ann_name,
            }
        )
    return entries


def read_manifest(corpus_dir: str | Path) -> dict:
    path = Path(corpus_dir) / "manifest.json"
    if not path.exists():
        raise ValidationError(f"no manifest at {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("version") != MANIFEST_FORMAT_VERSION:
        raise ValidationError(f"unsupported manifest version {doc.get('version')!r}")
    return doc


def load_scene(corpus_dir: str | Path, entry: dict) -> tuple[RasterImage, SceneAnnotation]:
    corpus_dir = Path(corpus_dir)
    image = read_image(corpus_dir / entry["image"])
    ann = annotation_from_dict(
        json.loads((corpus_dir / entry["annotation"]).read_text(encoding="utf-8"))
    )
    return image, ann


def iter_scenes(
    corpus_dir: str | Path,
) -> Iterator[tuple[dict, RasterImage, SceneAnnotation]]:
    manifest = read_manifest(corpus_dir)
    for entry in manifest["scenes"]:
        image, ann = load_scene(corpus_dir, entry)
        yield entry, image, ann


def corpus_grammars(corpus_dir: str | Path, manifest: dict | None = None) -> dict[str, Grammar]:
    corpus_dir = Path(corpus_dir)
    manifest = manifest or read_manifest(corpus_dir)
    out = {}
    for class_name, fname in manifest.get("grammars", {}).items():
        out[class_name] = parse_grammar(
            (corpus_dir / fname).read_text(encoding="utf-8"), str(corpus_dir / fname)
        )
    return out
