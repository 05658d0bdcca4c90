import dataclasses
import json

import numpy as np
import pytest

from vissyn.errors import GenerationError, ValidationError
from vissyn.geometry import BBox, Detection, iou
from vissyn.grammar import ContainerFrame, instantiate_layout
from vissyn.raster import RasterImage, from_p6, read_image
from vissyn.synthcorpus import (
    JitterSpec,
    SceneAnnotation,
    annotation_from_dict,
    annotation_to_dict,
    default_frame,
    extend_corpus,
    generate_scene,
    imbalance_ratio,
    iter_scenes,
    read_manifest,
    write_corpus,
)


def test_zero_jitter_matches_canonical_layout(face_grammar):
    img, ann = generate_scene(face_grammar, 224, JitterSpec(seed=5), "face-00000")
    canonical = instantiate_layout(face_grammar, default_frame(224))
    assert [d.label for d in ann.parts] == [d.label for d in canonical]
    for got, want in zip(ann.parts, canonical):
        assert got.box == want.box
        assert got.score == 1.0
    assert ann.correctness == "correct"
    assert ann.framed


def test_generation_is_deterministic(face_grammar):
    spec = JitterSpec(seed=9, center_sigma=0.05, size_sigma=0.04)
    img1, ann1 = generate_scene(face_grammar, 224, spec, "face-00042")
    img2, ann2 = generate_scene(face_grammar, 224, spec, "face-00042")
    assert img1.to_p6() == img2.to_p6()
    assert ann1 == ann2
    img3, _ = generate_scene(face_grammar, 224, spec, "face-00043")
    assert img3.to_p6() != img1.to_p6()


def test_jittered_parts_stay_in_frame(face_grammar):
    spec = JitterSpec(seed=3, center_sigma=0.08, size_sigma=0.05)
    frame = default_frame(224).box
    for i in range(20):
        _, ann = generate_scene(face_grammar, 224, spec, f"s{i}")
        for part in ann.parts:
            assert frame.contains_box(part.box)


def test_extreme_jitter_raises_generation_error(face_grammar):
    spec = JitterSpec(seed=1, center_sigma=50.0)
    with pytest.raises(GenerationError, match="16 jitter draws"):
        generate_scene(face_grammar, 224, spec, "doomed")


def test_drop_prob_one_removes_optional_ears(optional_ears_grammar):
    spec = JitterSpec(seed=2, drop_prob=1.0)
    _, ann = generate_scene(optional_ears_grammar, 224, spec, "no-ears")
    labels = {d.label for d in ann.parts}
    assert labels == {"eye_left", "eye_right", "nose", "mouth"}
    assert ann.correctness == "correct"


def test_image_size_must_fit_patch_grid(face_grammar):
    with pytest.raises(ValidationError):
        generate_scene(face_grammar, 220, JitterSpec(seed=1), "bad")


def test_jitter_spec_validation():
    with pytest.raises(ValidationError):
        JitterSpec(seed=0, center_sigma=-0.1)
    with pytest.raises(ValidationError):
        JitterSpec(seed=0, drop_prob=1.5)


def test_correct_scene_rejects_nms_unstable_parts():
    frame = ContainerFrame(BBox(0, 0, 100, 100))
    a = Detection(box=BBox(10, 10, 30, 30), label="dot", score=1.0)
    b = Detection(box=BBox(12, 12, 32, 32), label="dot", score=1.0)
    assert iou(a.box, b.box) > 0.3
    with pytest.raises(ValidationError, match="IOU"):
        SceneAnnotation(
            scene_id="x",
            class_name="pair",
            image_ref="x.ppm",
            parts=(a, b),
            frame=frame,
            correctness="correct",
        )
    # tolerated when the scene is marked incorrect
    SceneAnnotation(
        scene_id="x",
        class_name="pair",
        image_ref="x.ppm",
        parts=(a, b),
        frame=frame,
        correctness="incorrect",
    )


# --------------------------------------------------------------------------
# raster round-trips


def test_p6_round_trip_bytes(face_grammar):
    img, _ = generate_scene(face_grammar, 224, JitterSpec(seed=7), "rt")
    assert from_p6(img.to_p6()) == img


def test_p6_header_with_comment():
    data = b"P6\n# a comment\n2 1\n255\n" + bytes(6)
    img = from_p6(data)
    assert (img.width, img.height) == (2, 1)


def test_p6_truncated_payload_rejected():
    with pytest.raises(ValidationError, match="truncated"):
        from_p6(b"P6\n2 2\n255\n\x00\x00\x00")


def test_png_ingestion(tmp_path, face_grammar):
    from PIL import Image

    img, _ = generate_scene(face_grammar, 224, JitterSpec(seed=8), "png")
    png_path = tmp_path / "scene.png"
    Image.fromarray(np.asarray(img.pixels)).save(png_path)
    assert read_image(png_path) == img


def test_raster_image_validation():
    with pytest.raises(ValidationError):
        RasterImage(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ValidationError):
        RasterImage(np.zeros((4, 4, 3), dtype=np.float32))


# --------------------------------------------------------------------------
# corpus I/O


def _tiny_corpus(tmp_path, grammar, n_correct=3, n_incorrect=0):
    scenes = [
        generate_scene(grammar, 96, JitterSpec(seed=1), f"{grammar.class_name}-{i:05d}")
        for i in range(n_correct)
    ]
    for i in range(n_incorrect):
        img, ann = generate_scene(grammar, 96, JitterSpec(seed=2), f"bad-{i:05d}")
        scenes.append((img, dataclasses.replace(ann, correctness="incorrect")))
    return write_corpus(scenes, tmp_path / "corpus", [grammar])


def test_write_corpus_counts_and_files(tmp_path, face_grammar):
    manifest_path = _tiny_corpus(tmp_path, face_grammar, n_correct=3)
    manifest = read_manifest(manifest_path.parent)
    assert len(manifest["scenes"]) == 3
    assert manifest["counts"] == {"correct": 3, "incorrect": 0, "unknown": 0}
    assert len(list(manifest_path.parent.glob("*.ppm"))) == 3
    assert len(list(manifest_path.parent.glob("face-*.json"))) == 3
    assert manifest["grammars"] == {"face": "face.grammar.json"}


def test_corpus_round_trip_field_for_field(tmp_path, face_grammar):
    spec = JitterSpec(seed=11, center_sigma=0.03)
    originals = [generate_scene(face_grammar, 224, spec, f"face-{i:05d}") for i in range(3)]
    write_corpus(originals, tmp_path / "c", [face_grammar])
    loaded = list(iter_scenes(tmp_path / "c"))
    assert len(loaded) == 3
    for (img, ann), (_, img2, ann2) in zip(originals, loaded):
        assert img2 == img
        assert ann2 == ann


def test_imbalance_ratio_reduces_counts():
    assert imbalance_ratio(1000, 200) == "5:1"
    assert imbalance_ratio(10, 2) == "5:1"
    assert imbalance_ratio(3, 0) == "1:0"
    assert imbalance_ratio(0, 0) == "0:0"


def test_manifest_records_imbalance(tmp_path, face_grammar):
    manifest_path = _tiny_corpus(tmp_path, face_grammar, n_correct=10, n_incorrect=2)
    manifest = read_manifest(manifest_path.parent)
    assert manifest["imbalance"] == "5:1"


def test_extend_corpus_appends_and_rejects_duplicates(tmp_path, face_grammar):
    manifest_path = _tiny_corpus(tmp_path, face_grammar, n_correct=2)
    corpus = manifest_path.parent
    img, ann = generate_scene(face_grammar, 96, JitterSpec(seed=3), "face-extra")
    extend_corpus([(img, ann)], corpus)
    manifest = read_manifest(corpus)
    assert len(manifest["scenes"]) == 3
    with pytest.raises(ValidationError, match="duplicate scene_id"):
        extend_corpus([(img, ann)], corpus)


def test_annotation_serialization_round_trip(face_grammar):
    _, ann = generate_scene(face_grammar, 224, JitterSpec(seed=4, center_sigma=0.02), "ser")
    doc = annotation_to_dict(ann)
    assert annotation_from_dict(json.loads(json.dumps(doc))) == ann


def test_load_scene_missing_manifest(tmp_path):
    with pytest.raises(ValidationError, match="no manifest"):
        read_manifest(tmp_path)
