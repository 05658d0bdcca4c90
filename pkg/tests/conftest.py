import pytest

from vissyn.grammar import Grammar, PartSlot, load_grammar


@pytest.fixture(scope="session")
def face_grammar():
    return load_grammar("face")


@pytest.fixture(scope="session")
def cat_grammar():
    return load_grammar("cat")


@pytest.fixture(scope="session")
def optional_ears_grammar():
    """Face variant whose ears are tolerated but not canonical."""
    base = load_grammar("face")
    slots = tuple(
        PartSlot(s.label, s.center_rel, s.size_rel, required=not s.label.startswith("ear"))
        for s in base.layout
    )
    return Grammar(class_name="face", vocabulary=base.vocabulary, layout=slots)


@pytest.fixture(scope="session")
def two_part_grammar():
    return Grammar(
        class_name="pair",
        vocabulary=("dot", "bar"),
        layout=(
            PartSlot("dot", (0.3, 0.3), (0.2, 0.2)),
            PartSlot("bar", (0.7, 0.7), (0.3, 0.18)),
        ),
    )
