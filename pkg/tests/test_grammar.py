import json

import pytest

from vissyn.errors import ValidationError
from vissyn.geometry import BBox
from vissyn.grammar import (
    ContainerFrame,
    Grammar,
    PartSlot,
    grammar_to_json,
    instantiate_layout,
    load_grammar,
    parse_grammar,
)

FACE_PART_KINDS = {"eye", "ear", "nose", "mouth"}


def base_kind(label: str) -> str:
    return label.split("_")[0]


def test_builtin_face_grammar_vocabulary(face_grammar):
    assert face_grammar.class_name == "face"
    assert len(face_grammar.vocabulary) == 6
    assert {base_kind(l) for l in face_grammar.vocabulary} == FACE_PART_KINDS


def test_builtin_cat_and_wild_grammars():
    for name in ("cat", "wild"):
        g = load_grammar(name)
        assert {base_kind(l) for l in g.vocabulary} == {"eye", "ear", "nose"}
        assert len(g.layout) == 5


def test_unknown_builtin_name():
    with pytest.raises(ValidationError, match="not found"):
        load_grammar("zebra")


def test_duplicate_labels_rejected():
    with pytest.raises(ValidationError, match="eye_left"):
        Grammar(class_name="x", vocabulary=("eye_left", "eye_left"))


def test_empty_vocabulary_rejected():
    with pytest.raises(ValidationError, match="vocabulary is empty"):
        Grammar(class_name="x", vocabulary=())


def test_slot_outside_unit_square_rejected():
    with pytest.raises(ValidationError, match="unit square"):
        PartSlot("a", center_rel=(0.95, 0.5), size_rel=(0.2, 0.2))


def test_overlapping_slots_rejected():
    with pytest.raises(ValidationError, match="overlap"):
        Grammar(
            class_name="x",
            vocabulary=("a", "b"),
            layout=(
                PartSlot("a", (0.5, 0.5), (0.4, 0.4)),
                PartSlot("b", (0.52, 0.52), (0.4, 0.4)),
            ),
        )


def test_slot_label_not_in_vocabulary_rejected():
    with pytest.raises(ValidationError, match="not in vocabulary"):
        Grammar(
            class_name="x",
            vocabulary=("a",),
            layout=(PartSlot("b", (0.5, 0.5), (0.2, 0.2)),),
        )


def test_two_slots_colliding_on_one_label_rejected(tmp_path):
    gram = tmp_path / "collide.gram"
    gram.write_text(
        "version: 1\nclass: x\nlabels: eye_left\n"
        "slot: eye_left center 0.50 0.50 size 0.2 0.2\n"
        "slot: eye_left center 0.52 0.52 size 0.2 0.2\n"
    )
    with pytest.raises(ValidationError, match="eye_left"):
        load_grammar(gram)


# --------------------------------------------------------------------------
# instantiate_layout


def test_instantiate_layout_affine_mapping_by_hand():
    g = Grammar(
        class_name="face",
        vocabulary=("nose",),
        layout=(PartSlot("nose", (0.5, 0.55), (0.2, 0.15)),),
    )
    frame = ContainerFrame(BBox(0, 0, 100, 100))
    (d,) = instantiate_layout(g, frame)
    assert d.label == "nose"
    assert d.score == 1.0
    assert d.box.as_tuple() == pytest.approx((40, 47.5, 60, 62.5))


def test_instantiate_layout_identity_frame(face_grammar):
    frame = ContainerFrame(BBox(0, 0, 200, 200))
    for d, slot in zip(
        sorted(instantiate_layout(face_grammar, frame), key=lambda d: d.label),
        sorted(face_grammar.layout, key=lambda s: s.label),
    ):
        rel = slot.rel_box()
        assert d.box.as_tuple() == pytest.approx(
            (rel.x_min * 200, rel.y_min * 200, rel.x_max * 200, rel.y_max * 200)
        )


def test_instantiate_layout_translation_equivariance(face_grammar):
    a = instantiate_layout(face_grammar, ContainerFrame(BBox(0, 0, 100, 100)))
    b = instantiate_layout(face_grammar, ContainerFrame(BBox(25, 40, 125, 140)))
    assert len(a) == len(b)
    for da, db in zip(a, b):
        assert da.label == db.label
        assert db.box.x_min == pytest.approx(da.box.x_min + 25)
        assert db.box.y_min == pytest.approx(da.box.y_min + 40)
        assert db.box.x_max == pytest.approx(da.box.x_max + 25)
        assert db.box.y_max == pytest.approx(da.box.y_max + 40)


def test_instantiate_layout_row_major_order(face_grammar):
    dets = instantiate_layout(face_grammar, ContainerFrame(BBox(0, 0, 100, 100)))
    centers = [(d.box.center[1], d.box.center[0]) for d in dets]
    assert centers == sorted(centers)


def test_instantiate_layout_skips_optional_slots(optional_ears_grammar):
    dets = instantiate_layout(optional_ears_grammar, ContainerFrame(BBox(0, 0, 100, 100)))
    labels = {d.label for d in dets}
    assert labels == {"eye_left", "eye_right", "nose", "mouth"}


# --------------------------------------------------------------------------
# parsing


def test_text_and_json_renderings_agree(face_grammar):
    as_json = grammar_to_json(face_grammar)
    reparsed = parse_grammar(as_json, "roundtrip")
    assert reparsed == face_grammar


def test_load_grammar_from_files(tmp_path, face_grammar):
    gram = tmp_path / "my.gram"
    gram.write_text(
        "version: 1\nclass: mini\nlabels: a b\n"
        "slot: a center 0.3 0.3 size 0.2 0.2 required\n"
        "slot: b center 0.7 0.7 size 0.2 0.2 optional\n"
    )
    g = load_grammar(gram)
    assert g.class_name == "mini"
    assert not g.layout[1].required

    jsf = tmp_path / "face.json"
    jsf.write_text(grammar_to_json(face_grammar))
    assert load_grammar(jsf) == face_grammar


def test_malformed_text_grammar_messages(tmp_path):
    bad = tmp_path / "bad.gram"
    bad.write_text("version: 1\nclass: x\nlabels: a\nslot: a middle 0.5 0.5 size 0.2 0.2\n")
    with pytest.raises(ValidationError, match="bad.gram:4"):
        load_grammar(bad)
    bad.write_text("version: 2\nclass: x\nlabels: a\n")
    with pytest.raises(ValidationError, match="version"):
        load_grammar(bad)


def test_malformed_json_grammar(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": 1, "class_name": "x", "labels": "oops"}))
    with pytest.raises(ValidationError, match="labels"):
        load_grammar(bad)
