"""Per-class part vocabularies and canonical relative layouts.

A grammar declares which part labels a scene class may contain and where
those parts canonically sit inside an object's container frame, in relative
coordinates. The layout is this toolkit's operational definition of correct
arrangement for a class; it drives synthesis and the grammar-backed
reference backends.

Grammar files come in two renderings sharing one schema (see
docs/formats.md): a line-oriented text format (``.gram``) and JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ValidationError
from .geometry import BBox, Detection, iou

GRAMMAR_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PartSlot:
    """One canonical part position, relative to the container frame.

    center_rel and size_rel are fractions of the frame; the implied relative
    box center_rel +/- size_rel / 2 must stay inside the unit square.
    """

    label: str
    center_rel: tuple[float, float]
    size_rel: tuple[float, float]
    required: bool = True

    def rel_box(self) -> BBox:
        (u, v), (w, h) = self.center_rel, self.size_rel
        return BBox(u - w / 2, v - h / 2, u + w / 2, v + h / 2)

    def __post_init__(self) -> None:
        if not self.label:
            raise ValidationError("slot label must be non-empty")
        w, h = self.size_rel
        if not (0 < w <= 1 and 0 < h <= 1):
            raise ValidationError(f"slot {self.label!r}: size {self.size_rel} outside (0, 1]")
        box = self.rel_box()
        if box.x_min < 0 or box.y_min < 0 or box.x_max > 1 or box.y_max > 1:
            raise ValidationError(
                f"slot {self.label!r}: relative box {box.as_tuple()} leaves the unit square"
            )


@dataclass(frozen=True)
class ContainerFrame:
    """Object extent within an image; the anchor for relative layouts."""

    box: BBox


@dataclass(frozen=True)
class Grammar:
    class_name: str
    vocabulary: tuple[str, ...]
    layout: tuple[PartSlot, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.class_name:
            raise ValidationError("grammar class_name must be non-empty")
        if not self.vocabulary:
            raise ValidationError(f"grammar {self.class_name!r}: vocabulary is empty")
        seen: set[str] = set()
        for label in self.vocabulary:
            if label in seen:
                raise ValidationError(
                    f"grammar {self.class_name!r}: duplicate label {label!r} in vocabulary"
                )
            seen.add(label)
        for slot in self.layout:
            if slot.label not in seen:
                raise ValidationError(
                    f"grammar {self.class_name!r}: slot label {slot.label!r} not in vocabulary"
                )
        for i, a in enumerate(self.layout):
            for b in self.layout[i + 1 :]:
                overlap = iou(a.rel_box(), b.rel_box())
                if overlap >= 0.5:
                    raise ValidationError(
                        f"grammar {self.class_name!r}: slots {a.label!r} and {b.label!r} "
                        f"overlap with relative IOU {overlap:.3f} >= 0.5"
                    )

    def has_label(self, label: str) -> bool:
        return label in self.vocabulary

    def required_slots(self) -> tuple[PartSlot, ...]:
        return tuple(s for s in self.layout if s.required)


def instantiate_layout(grammar: Grammar, frame: ContainerFrame) -> list[Detection]:
    """Map every required slot affinely into the frame, score 1.0.

    Output is row-major by box center: top-to-bottom, then left-to-right.
    """
    fb = frame.box
    dets = []
    for slot in grammar.required_slots():
        rel = slot.rel_box()
        box = BBox(
            fb.x_min + rel.x_min * fb.width,
            fb.y_min + rel.y_min * fb.height,
            fb.x_min + rel.x_max * fb.width,
            fb.y_min + rel.y_max * fb.height,
        )
        dets.append(Detection(box=box, label=slot.label, score=1.0))
    dets.sort(key=lambda d: (d.box.center[1], d.box.center[0], d.label))
    return dets


def _grammar_from_dict(doc: dict, source: str) -> Grammar:
    version = doc.get("version")
    if version != GRAMMAR_FORMAT_VERSION:
        raise ValidationError(f"{source}: unsupported grammar version {version!r}")
    class_name = doc.get("class_name")
    labels = doc.get("labels")
    if not isinstance(class_name, str):
        raise ValidationError(f"{source}: missing or non-string class_name")
    if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        raise ValidationError(f"{source}: labels must be a list of strings")
    slots = []
    for i, raw in enumerate(doc.get("slots", [])):
        try:
            slots.append(
                PartSlot(
                    label=raw["label"],
                    center_rel=(float(raw["center"][0]), float(raw["center"][1])),
                    size_rel=(float(raw["size"][0]), float(raw["size"][1])),
                    required=bool(raw.get("required", True)),
                )
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ValidationError(f"{source}: slot #{i} malformed: {exc}") from exc
    return Grammar(class_name=class_name, vocabulary=tuple(labels), layout=tuple(slots))


def _parse_gram_text(text: str, source: str) -> Grammar:
    doc: dict = {"slots": []}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(":")
        key, rest = key.strip(), rest.strip()
        where = f"{source}:{lineno}"
        if key == "version":
            try:
                doc["version"] = int(rest)
            except ValueError:
                raise ValidationError(f"{where}: version must be an integer") from None
        elif key == "class":
            doc["class_name"] = rest
        elif key == "labels":
            doc["labels"] = rest.split()
        elif key == "slot":
            tokens = rest.split()
            # slot: <label> center <u> <v> size <w> <h> [required|optional]
            if len(tokens) < 7 or tokens[1] != "center" or tokens[4] != "size":
                raise ValidationError(
                    f"{where}: expected 'slot: LABEL center U V size W H [required|optional]'"
                )
            required = True
            if len(tokens) >= 8:
                if tokens[7] == "optional":
                    required = False
                elif tokens[7] != "required":
                    raise ValidationError(f"{where}: unknown slot flag {tokens[7]!r}")
            try:
                doc["slots"].append(
                    {
                        "label": tokens[0],
                        "center": [float(tokens[2]), float(tokens[3])],
                        "size": [float(tokens[5]), float(tokens[6])],
                        "required": required,
                    }
                )
            except ValueError:
                raise ValidationError(f"{where}: non-numeric slot coordinates") from None
        else:
            raise ValidationError(f"{where}: unknown key {key!r}")
    return _grammar_from_dict(doc, source)


def parse_grammar(content: str, source: str = "<string>") -> Grammar:
    """Parse grammar file content, auto-detecting the JSON rendering."""
    stripped = content.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(content)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{source}: invalid JSON: {exc}") from exc
        return _grammar_from_dict(doc, source)
    return _parse_gram_text(content, source)


def grammar_to_json(grammar: Grammar) -> str:
    doc = {
        "version": GRAMMAR_FORMAT_VERSION,
        "class_name": grammar.class_name,
        "labels": list(grammar.vocabulary),
        "slots": [
            {
                "label": s.label,
                "center": [s.center_rel[0], s.center_rel[1]],
                "size": [s.size_rel[0], s.size_rel[1]],
                "required": s.required,
            }
            for s in grammar.layout
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def builtin_grammar_names() -> list[str]:
    root = resources.files("vissyn").joinpath("grammars")
    return sorted(p.name[: -len(".gram")] for p in root.iterdir() if p.name.endswith(".gram"))


def load_grammar(source: str | Path) -> Grammar:
    """Load a grammar from a file path or a bundled grammar name.

    Bundled names ("face", "cat", "wild") resolve to packaged .gram files.
    """
    path = Path(source)
    if path.suffix in (".gram", ".json") and path.exists():
        return parse_grammar(path.read_text(encoding="utf-8"), str(path))
    name = str(source)
    if "/" not in name and "\\" not in name and "." not in name:
        res = resources.files("vissyn").joinpath("grammars", f"{name}.gram")
        if res.is_file():
            return parse_grammar(res.read_text(encoding="utf-8"), f"builtin:{name}")
    if path.exists():
        return parse_grammar(path.read_text(encoding="utf-8"), str(path))
    raise ValidationError(f"grammar not found: {source!r} (no such file or builtin name)")
