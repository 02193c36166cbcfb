"""Category vocabulary expansion into bags of textual variations."""

from __future__ import annotations

import json
import logging
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from crossalign.corrgen import DatasetFormatError, FORMAT_VERSION

logger = logging.getLogger(__name__)

TEXT_FORMAT = "crossalign/d_text"

# Hand-written variation lists for a few overhead-imagery categories.
REFERENCE_VARIATIONS: dict[str, tuple[str, ...]] = {
    "Small Aircraft": (
        "Light airplane",
        "Private plane",
        "Single-engine aircraft",
        "Propeller plane",
        "Cessna-type aircraft",
        "General aviation aircraft",
    ),
    "Helicopter": (
        "Chopper",
        "Rotary-wing aircraft",
        "Rotorcraft",
        "Helo",
        "Air ambulance",
        "Military helicopter",
        "Rescue helicopter",
    ),
    "Shed": ("Storage shed", "Outbuilding", "Toolshed", "Garden shed", "Small barn"),
    "Excavator": ("Digger", "Backhoe", "Trackhoe", "Mechanical shovel", "Hydraulic excavator"),
    "Small Car": (
        "Compact car",
        "Hatchback",
        "Subcompact vehicle",
        "Economy car",
        "City car",
        "Two-door car",
        "Four-door car",
    ),
}

_TEMPLATES = (
    "{} seen from above",
    "aerial view of a {}",
    "overhead {}",
    "{} in satellite imagery",
    "top-down view of a {}",
    "{} from a drone",
    "remote-sensing image of a {}",
    "bird's-eye view of a {}",
)


def normalize_variant(text: str) -> str:
    return " ".join(text.split()).casefold()


@dataclass(frozen=True)
class TextBag:
    """A category and its textual variations; the canonical name comes first."""

    category_id: int
    canonical_name: str
    variants: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        variants = tuple(self.variants)
        object.__setattr__(self, "variants", variants)
        if not variants:
            raise ValueError(f"bag {self.category_id}: no variants")
        keys = [normalize_variant(v) for v in variants]
        if not all(keys):
            raise ValueError(f"bag {self.category_id}: blank variant")
        if len(set(keys)) != len(keys):
            raise ValueError(f"bag {self.category_id}: duplicate variants {variants}")
        if keys[0] != normalize_variant(self.canonical_name):
            raise ValueError(f"bag {self.category_id}: canonical name must be the first variant")

    @property
    def keys(self) -> tuple[str, ...]:
        """Lower-cased, whitespace-normalised variants (matching keys)."""
        return tuple(normalize_variant(v) for v in self.variants)


class VariantGenerator(Protocol):
    def generate(self, name: str, seed: int = 0) -> list[str]: ...


class IdentityGenerator:
    """Returns only the category name itself."""

    def generate(self, name: str, seed: int = 0) -> list[str]:
        return [name]


class TemplateGenerator:
    """Offline stand-in for an LLM variation generator.

    Names found in ``table`` (default: :data:`REFERENCE_VARIATIONS`) start
    with their listed synonyms; the list is then padded with phrasing
    templates, starting at an offset fixed by ``(name, seed)``, until it
    holds at least ``n_variants`` strings. Listed synonyms are never cut.
    """

    def __init__(self, n_variants: int = 6, table: Mapping[str, Sequence[str]] | None = None) -> None:
        self.n_variants = n_variants
        table = REFERENCE_VARIATIONS if table is None else table
        self.table = {normalize_variant(k): list(v) for k, v in table.items()}

    def generate(self, name: str, seed: int = 0) -> list[str]:
        out = list(self.table.get(normalize_variant(name), ()))
        start = (zlib.crc32(name.encode()) + seed) % len(_TEMPLATES)
        for k in range(len(_TEMPLATES)):
            if len(out) >= self.n_variants:
                break
            out.append(_TEMPLATES[(start + k) % len(_TEMPLATES)].format(name.lower()))
        return out


def expand_vocabulary(
    categories: Mapping[int, str] | Sequence[str],
    generator: VariantGenerator,
    max_variants: int = 6,
    seed: int = 0,
    warnings: Counter | None = None,
) -> list[TextBag]:
    """Build one bag per category, canonical name first.

    Generated strings are de-duplicated case-insensitively (the canonical
    name included), cut to ``max_variants`` and the canonical name is
    prepended, so a bag holds at most ``max_variants + 1`` strings.
    A generator error leaves the bag with just the canonical name.
    """
    if max_variants < 1:
        raise ValueError("max_variants must be at least 1")
    table = dict(categories) if isinstance(categories, Mapping) else dict(enumerate(categories))
    if not table:
        raise ValueError("no categories to expand")
    warnings = Counter() if warnings is None else warnings
    bags = []
    for cid in sorted(table):
        name = table[cid]
        try:
            generated = list(generator.generate(name, seed))
        except Exception as exc:  # timeouts and client errors alike
            warnings["generator_failure"] += 1
            logger.warning("variant generation failed for %r: %s", name, exc)
            generated = []
        variants, seen = [], {normalize_variant(name)}
        for v in generated:
            key = normalize_variant(str(v))
            if key and key not in seen:
                seen.add(key)
                variants.append(" ".join(str(v).split()))
        bags.append(TextBag(cid, name, (name, *variants[:max_variants])))
    return bags


def variant_totals(bags: Sequence[TextBag]) -> dict[str, int]:
    """``variations`` counts generated strings only; ``with_canonical`` adds one name per bag."""
    with_canonical = sum(len(b.variants) for b in bags)
    return {"variations": with_canonical - len(bags), "with_canonical": with_canonical}


@dataclass
class BagReport:
    collisions: list[tuple[str, tuple[int, ...]]]
    empty_bags: list[int]

    @property
    def ok(self) -> bool:
        return not self.collisions and not self.empty_bags


def validate_bags(bags: Sequence[TextBag]) -> BagReport:
    """List variant strings shared by more than one bag, and empty bags."""
    owners: dict[str, list[int]] = {}
    empty = []
    for bag in bags:
        if not bag.variants:
            empty.append(bag.category_id)
        for key in bag.keys:
            owners.setdefault(key, []).append(bag.category_id)
    collisions = [(k, tuple(v)) for k, v in sorted(owners.items()) if len(v) > 1]
    return BagReport(collisions, empty)


def write_text_bags(bags: Sequence[TextBag], path: str | Path) -> None:
    lines = [json.dumps({"format": TEXT_FORMAT, "version": FORMAT_VERSION})]
    for bag in sorted(bags, key=lambda b: b.category_id):
        lines.append(
            json.dumps(
                {
                    "category_id": bag.category_id,
                    "canonical": bag.canonical_name,
                    "variants": list(bag.variants),
                    "normalized": list(bag.keys),
                },
                ensure_ascii=False,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_text_bags(path: str | Path) -> list[TextBag]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DatasetFormatError(path, 1, "missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, 1, f"invalid header: {exc}") from None
    if not isinstance(header, dict) or header.get("format") != TEXT_FORMAT or header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(path, 1, f"expected a version-{FORMAT_VERSION} {TEXT_FORMAT!r} header")
    bags, seen = [], set()
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            bag = TextBag(int(obj["category_id"]), str(obj["canonical"]), tuple(obj["variants"]))
            if "normalized" in obj and list(obj["normalized"]) != list(bag.keys):
                raise ValueError("normalized keys do not match the variants")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(path, no, f"bad text bag: {exc}") from None
        if bag.category_id in seen:
            raise DatasetFormatError(path, no, f"duplicate category_id {bag.category_id}")
        seen.add(bag.category_id)
        bags.append(bag)
    return sorted(bags, key=lambda b: b.category_id)
