"""Read evaluation-harness corpora (manifest + annotation JSON + P6 images).

Only the documented corpus file formats are consumed here; nothing is
imported from the harness package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pnm import read_image


@dataclass(frozen=True)
class Scene:
    scene_id: str
    class_name: str
    correctness: str
    image_path: Path
    parts: list  # (label, (x0, y0, x1, y1)) pairs

    def load_pixels(self) -> np.ndarray:
        return read_image(self.image_path)


def load_manifest(corpus_dir: str | Path) -> dict:
    path = Path(corpus_dir) / "manifest.json"
    return json.loads(path.read_text(encoding="utf-8"))


def load_scenes(corpus_dir: str | Path) -> list[Scene]:
    corpus_dir = Path(corpus_dir)
    manifest = load_manifest(corpus_dir)
    scenes = []
    for entry in manifest["scenes"]:
        ann = json.loads((corpus_dir / entry["annotation"]).read_text(encoding="utf-8"))
        scenes.append(
            Scene(
                scene_id=entry["scene_id"],
                class_name=entry["class_name"],
                correctness=entry["correctness"],
                image_path=corpus_dir / entry["image"],
                parts=[(p["label"], tuple(p["box"])) for p in ann["parts"]],
            )
        )
    return scenes


def corpus_vocabulary(corpus_dir: str | Path) -> list[str]:
    """Union of part labels across the corpus' grammar snapshots, sorted."""
    corpus_dir = Path(corpus_dir)
    manifest = load_manifest(corpus_dir)
    labels: set[str] = set()
    for fname in manifest.get("grammars", {}).values():
        doc = json.loads((corpus_dir / fname).read_text(encoding="utf-8"))
        labels.update(doc["labels"])
    if not labels:
        raise ValueError(f"corpus {corpus_dir} carries no grammar snapshots")
    return sorted(labels)
