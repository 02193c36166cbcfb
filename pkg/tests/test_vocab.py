import json
from collections import Counter
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossalign.corrgen import DatasetFormatError
from crossalign.vocab import (
    REFERENCE_VARIATIONS,
    IdentityGenerator,
    TemplateGenerator,
    TextBag,
    expand_vocabulary,
    read_text_bags,
    validate_bags,
    variant_totals,
    write_text_bags,
)

DATA = Path(__file__).resolve().parents[1] / "src" / "crossalign" / "data"


def xview_names():
    obj = json.loads((DATA / "xview60.json").read_text())
    return {int(k): v for k, v in obj["aerial_categories"].items()}


def reference_bags():
    return [TextBag(i, name, (name, *variants)) for i, (name, variants) in enumerate(REFERENCE_VARIATIONS.items())]


class Repeating:
    def generate(self, name, seed=0):
        return [name, name.upper(), "  Mini   " + name, "mini " + name.lower()]


class Broken:
    def generate(self, name, seed=0):
        raise TimeoutError("no answer")


def test_small_aircraft_bag():
    (bag,) = expand_vocabulary(["Small Aircraft"], TemplateGenerator())
    assert bag.variants[0] == "Small Aircraft"
    assert set(bag.variants[1:]) == {
        "Light airplane",
        "Private plane",
        "Single-engine aircraft",
        "Propeller plane",
        "Cessna-type aircraft",
        "General aviation aircraft",
    }


def test_sixty_categories_give_360_variations():
    names = xview_names()
    bags = expand_vocabulary(names, TemplateGenerator(n_variants=6), max_variants=6)
    assert len(bags) == 60
    assert all(len(b.variants) == 7 for b in bags)
    assert variant_totals(bags) == {"variations": 360, "with_canonical": 420}
    assert validate_bags(bags).ok


def test_duplicates_collapse():
    (bag,) = expand_vocabulary(["Shed"], Repeating(), max_variants=6)
    assert bag.variants == ("Shed", "Mini Shed")


def test_generator_failure_leaves_canonical_only():
    warnings = Counter()
    bags = expand_vocabulary({3: "Pylon", 4: "Tower"}, Broken(), warnings=warnings)
    assert [b.variants for b in bags] == [("Pylon",), ("Tower",)]
    assert warnings["generator_failure"] == 2


def test_identity_generator_gives_singletons():
    bags = expand_vocabulary(xview_names(), IdentityGenerator())
    assert all(len(b.variants) == 1 for b in bags)


def test_single_category_single_bag():
    assert len(expand_vocabulary(["Bus"], TemplateGenerator())) == 1


def test_expand_errors():
    with pytest.raises(ValueError):
        expand_vocabulary([], TemplateGenerator())
    with pytest.raises(ValueError):
        expand_vocabulary(["Bus"], TemplateGenerator(), max_variants=0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 10), k=st.integers(1, 8), seed=st.integers(0, 99))
def test_bag_size_bounded(n, k, seed):
    names = [f"Thing {i}" for i in range(n)]
    bags = expand_vocabulary(names, TemplateGenerator(n_variants=8), max_variants=k, seed=seed)
    assert all(len(b.variants) == k + 1 for b in bags)
    assert bags == expand_vocabulary(names, TemplateGenerator(n_variants=8), max_variants=k, seed=seed)


def test_textbag_validation():
    with pytest.raises(ValueError):
        TextBag(1, "Car", ())
    with pytest.raises(ValueError):
        TextBag(1, "Car", ("Auto", "Car"))
    with pytest.raises(ValueError):
        TextBag(1, "Car", ("Car", "car "))
    assert TextBag(1, "Car", ("Car", " City  CAR")).keys == ("car", "city car")


def test_validate_disjoint_and_collision():
    assert validate_bags(reference_bags()).collisions == []
    bags = [TextBag(1, "Helicopter", ("Helicopter", "Chopper")), TextBag(2, "Motorbike", ("Motorbike", "chopper"))]
    report = validate_bags(bags)
    assert report.collisions == [("chopper", (1, 2))]
    assert not report.ok


def test_text_bags_round_trip(tmp_path):
    bags = reference_bags()
    write_text_bags(bags, tmp_path / "t.jsonl")
    first = (tmp_path / "t.jsonl").read_bytes()
    assert read_text_bags(tmp_path / "t.jsonl") == bags
    write_text_bags(list(reversed(bags)), tmp_path / "t.jsonl")
    assert (tmp_path / "t.jsonl").read_bytes() == first


def test_empty_text_bags_round_trip(tmp_path):
    write_text_bags([], tmp_path / "t.jsonl")
    assert read_text_bags(tmp_path / "t.jsonl") == []


def test_duplicate_category_id_rejected(tmp_path):
    bags = reference_bags()[:2]
    write_text_bags(bags, tmp_path / "t.jsonl")
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    lines.append(lines[1])
    (tmp_path / "t.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match=":4:"):
        read_text_bags(tmp_path / "t.jsonl")


def test_malformed_line_names_line_number(tmp_path):
    write_text_bags(reference_bags()[:2], tmp_path / "t.jsonl")
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    lines[2] = "{not json"
    (tmp_path / "t.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match=":3:"):
        read_text_bags(tmp_path / "t.jsonl")
