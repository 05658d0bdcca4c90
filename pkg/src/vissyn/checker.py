"""IOU-based syntax checking of original vs reconstructed detections.

For every original detection, the checker scans all reconstructed
detections: any overlapping (IOU strictly above t) detection with a
different label yields a part-mismatch error, and an original detection
with no overlapping reconstructed detection at all yields an extra-part
error. Reconstructed detections unmatched by any original are ignored, so
omission is never an error; the comparison is deliberately asymmetric.

Errors are accumulated rather than short-circuited so each one can be
reported, but the resulting correct/incorrect flag is exactly the flag a
plain double loop with a boolean would compute.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError
from .geometry import BBox, Detection, iou

PART_MISMATCH = "part_mismatch"
EXTRA_PART = "extra_part"


@dataclass(frozen=True)
class SyntaxIssue:
    """One interpretable checking error.

    kind is "part_mismatch" (an overlapping reconstructed detection carries
    a different label) or "extra_part" (nothing in the reconstruction
    overlaps the original detection). Reconstructed fields are populated
    for mismatches only.
    """

    kind: str
    original_label: str
    original_box: BBox
    reconstructed_label: str | None = None
    reconstructed_box: BBox | None = None

    def __post_init__(self) -> None:
        if self.kind == PART_MISMATCH:
            if self.reconstructed_label is None or self.reconstructed_box is None:
                raise ValidationError("part_mismatch issue needs reconstructed label and box")
        elif self.kind == EXTRA_PART:
            if self.reconstructed_label is not None or self.reconstructed_box is not None:
                raise ValidationError("extra_part issue must not carry reconstructed fields")
        else:
            raise ValidationError(f"unknown issue kind {self.kind!r}")

    def message(self) -> str:
        if self.kind == PART_MISMATCH:
            return f"{self.original_label} in place of {self.reconstructed_label}"
        return f"{self.original_label} in place of no specific part"

    def to_dict(self) -> dict:
        doc: dict = {
            "kind": self.kind,
            "original_label": self.original_label,
            "original_box": list(self.original_box.as_tuple()),
        }
        if self.kind == PART_MISMATCH:
            doc["reconstructed_label"] = self.reconstructed_label
            doc["reconstructed_box"] = list(self.reconstructed_box.as_tuple())
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntaxIssue":
        rbox = doc.get("reconstructed_box")
        return cls(
            kind=doc["kind"],
            original_label=doc["original_label"],
            original_box=BBox(*doc["original_box"]),
            reconstructed_label=doc.get("reconstructed_label"),
            reconstructed_box=BBox(*rbox) if rbox is not None else None,
        )


@dataclass(frozen=True)
class SyntaxVerdict:
    correct: bool
    errors: tuple[SyntaxIssue, ...]

    def __post_init__(self) -> None:
        if self.correct != (len(self.errors) == 0):
            raise ValidationError("verdict flag must equal 'no errors'")

    def to_dict(self) -> dict:
        return {"correct": self.correct, "errors": [e.to_dict() for e in self.errors]}

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntaxVerdict":
        return cls(
            correct=bool(doc["correct"]),
            errors=tuple(SyntaxIssue.from_dict(e) for e in doc["errors"]),
        )


def check_syntax(
    original: list[Detection], reconstructed: list[Detection], t: float
) -> SyntaxVerdict:
    """Compare detection sets location by location at IOU threshold t.

    Inputs are expected to be NMS-filtered already. Every overlapping
    label disagreement produces its own error, and one original box
    overlapping several conflicting reconstructed boxes reports each pair.
    """
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"IOU threshold must be in [0, 1], got {t!r}")
    errors: list[SyntaxIssue] = []
    for orig in original:
        overlapped = False
        for rec in reconstructed:
            if iou(orig.box, rec.box) > t:
                overlapped = True
                if orig.label != rec.label:
                    errors.append(
                        SyntaxIssue(
                            kind=PART_MISMATCH,
                            original_label=orig.label,
                            original_box=orig.box,
                            reconstructed_label=rec.label,
                            reconstructed_box=rec.box,
                        )
                    )
        if not overlapped:
            errors.append(
                SyntaxIssue(kind=EXTRA_PART, original_label=orig.label, original_box=orig.box)
            )
    return SyntaxVerdict(correct=not errors, errors=tuple(errors))


def explain(verdict: SyntaxVerdict) -> list[str]:
    """One human-readable line per error; a fixed phrase when clean."""
    if verdict.correct:
        return ["syntactically correct"]
    return [e.message() for e in verdict.errors]
