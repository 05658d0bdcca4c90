"""Confusion-matrix accounting and balanced-accuracy reporting.

The positive class is "syntactically incorrect": sensitivity measures how
many broken scenes are caught, specificity how many intact scenes are left
alone, and balanced accuracy is their mean. Matrices are mergeable, so
shard-and-merge is the supported parallel pattern.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MetricsError, ValidationError
from .synthcorpus import CORRECT, INCORRECT, UNKNOWN


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts for correct-vs-incorrect classification.

    tp: incorrect predicted incorrect; tn: correct predicted correct;
    fn: incorrect predicted correct; fp: correct predicted incorrect.
    Records with unknown truth are tallied separately and excluded from
    every rate.
    """

    tp: int = 0
    fn: int = 0
    tn: int = 0
    fp: int = 0
    unlabeled: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fn", "tn", "fp", "unlabeled"):
            if getattr(self, name) < 0:
                raise ValidationError(f"ConfusionMatrix.{name} must be >= 0")

    def merged(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            tp=self.tp + other.tp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
            fp=self.fp + other.fp,
            unlabeled=self.unlabeled + other.unlabeled,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp


@dataclass(frozen=True)
class MetricSummary:
    sensitivity: float
    specificity: float
    balanced_accuracy: float
    matrix: ConfusionMatrix
    class_name: str = "all"


def accumulate(records: list[tuple[bool, str]]) -> ConfusionMatrix:
    """Fold (predicted_incorrect, truth) pairs into a matrix.

    predicted_incorrect is the checker's inverted flag: True when the scene
    was flagged as syntactically incorrect. truth is the ground-truth
    correctness string.
    """
    tp = fn = tn = fp = unlabeled = 0
    for predicted_incorrect, truth in records:
        if truth == UNKNOWN:
            unlabeled += 1
        elif truth == INCORRECT:
            if predicted_incorrect:
                tp += 1
            else:
                fn += 1
        elif truth == CORRECT:
            if predicted_incorrect:
                fp += 1
            else:
                tn += 1
        else:
            raise ValidationError(f"truth must be correct/incorrect/unknown, got {truth!r}")
    return ConfusionMatrix(tp=tp, fn=fn, tn=tn, fp=fp, unlabeled=unlabeled)


def summarize(matrix: ConfusionMatrix, class_name: str = "all") -> MetricSummary:
    """Sensitivity, specificity, and their mean, from one matrix."""
    if matrix.tp + matrix.fn == 0:
        raise MetricsError(
            f"cannot summarize {class_name!r}: empty positive class "
            f"(no scenes with truth 'incorrect')"
        )
    if matrix.tn + matrix.fp == 0:
        raise MetricsError(
            f"cannot summarize {class_name!r}: empty negative class "
            f"(no scenes with truth 'correct')"
        )
    sensitivity = matrix.tp / (matrix.tp + matrix.fn)
    specificity = matrix.tn / (matrix.tn + matrix.fp)
    return MetricSummary(
        sensitivity=sensitivity,
        specificity=specificity,
        balanced_accuracy=(sensitivity + specificity) / 2,
        matrix=matrix,
        class_name=class_name,
    )


@dataclass(frozen=True)
class Report:
    summaries: tuple[MetricSummary, ...]
    overall: MetricSummary
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "metadata": self.metadata,
            "classes": [_summary_dict(s) for s in self.summaries],
            "overall": _summary_dict(self.overall),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        rows = [_summary_row(s) for s in self.summaries]
        rows.append(_summary_row(self.overall))
        header = f"{'class':<12} {'tp':>6} {'fn':>6} {'tn':>6} {'fp':>6} {'sens':>8} {'spec':>8} {'bal.acc':>9}"
        lines = [header, "-" * len(header)]
        lines.extend(rows)
        for key in sorted(self.metadata):
            lines.append(f"{key}: {self.metadata[key]}")
        return "\n".join(lines) + "\n"


def _summary_dict(s: MetricSummary) -> dict:
    return {
        "class_name": s.class_name,
        "tp": s.matrix.tp,
        "fn": s.matrix.fn,
        "tn": s.matrix.tn,
        "fp": s.matrix.fp,
        "unlabeled": s.matrix.unlabeled,
        "sensitivity": round(s.sensitivity, 6),
        "specificity": round(s.specificity, 6),
        "balanced_accuracy": round(s.balanced_accuracy, 6),
        "balanced_accuracy_pct": f"{100 * s.balanced_accuracy:.2f}",
    }


def _summary_row(s: MetricSummary) -> str:
    m = s.matrix
    return (
        f"{s.class_name:<12} {m.tp:>6} {m.fn:>6} {m.tn:>6} {m.fp:>6} "
        f"{s.sensitivity:>8.4f} {s.specificity:>8.4f} {100 * s.balanced_accuracy:>8.2f}%"
    )


def report(summaries: list[MetricSummary], metadata: dict | None = None) -> Report:
    """Combine per-class summaries with an overall row (merged counts)."""
    if not summaries:
        raise MetricsError("report needs at least one summary")
    ordered = tuple(sorted(summaries, key=lambda s: s.class_name))
    merged = ConfusionMatrix()
    for s in ordered:
        merged = merged.merged(s.matrix)
    overall = summarize(merged, class_name="overall")
    return Report(summaries=ordered, overall=overall, metadata=dict(metadata or {}))


def write_report(rep: Report, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    text_path = out_dir / "report.txt"
    json_path.write_text(rep.to_json(), encoding="utf-8")
    text_path.write_text(rep.to_text(), encoding="utf-8")
    return json_path, text_path


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
