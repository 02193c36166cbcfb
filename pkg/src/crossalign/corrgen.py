"""Aerial-ground correspondence generation.

Builds the aligned training set in three passes: direct pairs for categories
annotated on both sides, inferred pairs for aerial-only categories (an
open-vocabulary detector proposes ground boxes, filtered by confidence and
NMS), then geometric augmentation of the aerial side.

File formats (JSON lines, first line is a versioned header):

* annotations: header ``{"format": "crossalign/annotations", "version": 1,
  "source": "aerial"|"ground", "categories": {"<id>": "<name>", ...}}``, then
  one ``{"image_id", "width", "height", "boxes": [[x0, y0, x1, y1, cat], ...]}``
  per image.
* aligned dataset: header ``{"format": "crossalign/d_aligned", "version": 1}``,
  then one correspondence record per line.
* detector script: a single JSON object ``{"format": "crossalign/detector-script",
  "version": 1, "detections": {image_id: {category name: [[x0, y0, x1, y1,
  score], ...]}}, "failures": [[image_id, category name], ...]}``.
"""

from __future__ import annotations

import json
import logging
import zlib
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Literal, Mapping, Protocol, Sequence

import numpy as np

from crossalign.geometry import Box2D, ScoredDetection, nms

logger = logging.getLogger(__name__)

ANNOTATION_FORMAT = "crossalign/annotations"
ALIGNED_FORMAT = "crossalign/d_aligned"
DETECTOR_FORMAT = "crossalign/detector-script"
FORMAT_VERSION = 1
DEFAULT_PAIRING_CAP = 64
ROTATIONS = (0, 90, 180, 270)

Provenance = Literal["direct", "inferred"]

# named sub-streams of the top-level seed
_DIRECT_STREAM = 1
_INFERRED_STREAM = 2
_AUGMENT_STREAM = 3


class ConfigError(ValueError):
    """Inconsistent category tables or generation settings."""


class DatasetFormatError(ValueError):
    """A malformed line in one of the line-delimited input files."""

    def __init__(self, path: str | Path, line: int, message: str) -> None:
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class DetectorError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    image_size: tuple[float, float]
    boxes: tuple[tuple[Box2D, int], ...] = ()
    source: str = "aerial"

    def __post_init__(self) -> None:
        w, h = self.image_size
        if not (w > 0 and h > 0):
            raise ValueError(f"image {self.image_id}: size must be positive, got {self.image_size}")
        if self.source not in ("aerial", "ground"):
            raise ValueError(f"image {self.image_id}: unknown source {self.source!r}")
        for box, _ in self.boxes:
            if not box.within(w, h):
                raise ValueError(f"image {self.image_id}: box {box.as_tuple()} outside {w}x{h} frame")


@dataclass
class AnnotationSet:
    source: str
    categories: dict[int, str]
    records: list[AnnotationRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        for rec in self.records:
            if rec.source != self.source:
                raise ValueError(f"image {rec.image_id} tagged {rec.source!r} inside a {self.source!r} set")
            for _, cat in rec.boxes:
                if cat not in self.categories:
                    raise ValueError(f"image {rec.image_id}: category {cat} not in the {self.source} table")

    def instances(self, category_id: int) -> list[tuple[AnnotationRecord, Box2D]]:
        return [(rec, box) for rec in self.records for box, cat in rec.boxes if cat == category_id]


@dataclass(frozen=True)
class CategoryPartition:
    common: frozenset[int]
    unique_aerial: frozenset[int]
    name_map: dict[int, int]
    aerial_names: dict[int, str]


@dataclass(frozen=True)
class CorrespondenceRecord:
    pair_id: str
    category_id: int
    aerial_image: str
    aerial_size: tuple[float, float]
    aerial_box: Box2D
    ground_image: str
    ground_size: tuple[float, float]
    ground_box: Box2D
    provenance: Provenance
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if self.provenance not in ("direct", "inferred"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if not self.aerial_box.within(*self.aerial_size):
            raise ValueError(f"{self.pair_id}: aerial box outside its frame")
        if not self.ground_box.within(*self.ground_size):
            raise ValueError(f"{self.pair_id}: ground box outside its frame")

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "category_id": self.category_id,
            "provenance": self.provenance,
            "confidence": self.confidence,
            "aerial": {
                "image_id": self.aerial_image,
                "size": list(self.aerial_size),
                "box": list(self.aerial_box.as_tuple()),
            },
            "ground": {
                "image_id": self.ground_image,
                "size": list(self.ground_size),
                "box": list(self.ground_box.as_tuple()),
            },
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "CorrespondenceRecord":
        a, g = obj["aerial"], obj["ground"]
        return cls(
            pair_id=str(obj["pair_id"]),
            category_id=int(obj["category_id"]),
            aerial_image=str(a["image_id"]),
            aerial_size=_size(a["size"]),
            aerial_box=Box2D.from_seq(a["box"]),
            ground_image=str(g["image_id"]),
            ground_size=_size(g["size"]),
            ground_box=Box2D.from_seq(g["box"]),
            provenance=obj["provenance"],
            confidence=float(obj["confidence"]),
        )


def _size(values) -> tuple[float, float]:
    w, h = values
    return (float(w), float(h))


class DetectorClient(Protocol):
    def detect(self, image_id: str, category_name: str, seed: int = 0) -> list[ScoredDetection]: ...


class ScriptedDetector:
    """Offline detector replaying a fixed script of boxes and scores.

    Category names are matched case-insensitively. Pairs listed under
    ``failures`` raise :class:`DetectorError`, exercising the skip path.
    """

    def __init__(
        self,
        detections: Mapping[str, Mapping[str, Sequence[Sequence[float]]]],
        failures: Iterable[tuple[str, str]] = (),
    ) -> None:
        self._script = {
            img: {name.casefold(): [tuple(map(float, e)) for e in entries] for name, entries in per.items()}
            for img, per in detections.items()
        }
        self._failures = {(img, name.casefold()) for img, name in failures}

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedDetector":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if obj.get("format") != DETECTOR_FORMAT or obj.get("version") != FORMAT_VERSION:
            raise DatasetFormatError(path, 1, "not a version-1 detector script")
        return cls(obj.get("detections", {}), [tuple(f) for f in obj.get("failures", [])])

    def detect(self, image_id: str, category_name: str, seed: int = 0) -> list[ScoredDetection]:
        key = category_name.casefold()
        if (image_id, key) in self._failures:
            raise DetectorError(f"scripted failure for {image_id!r} / {category_name!r}")
        entries = self._script.get(image_id, {}).get(key, [])
        return [ScoredDetection(Box2D(*e[:4]), -1, e[4], image_id) for e in entries]


def partition_categories(
    aerial_categories: Mapping[int, str],
    ground_categories: Mapping[int, str],
    name_map: Mapping[str, str] | None = None,
) -> CategoryPartition:
    """Split aerial categories into those with a ground counterpart and the rest.

    ``name_map`` maps aerial names to ground names; when omitted, names are
    matched case-insensitively. A mapped ground name that the ground table
    does not contain leaves the aerial category unique.
    """
    ground_by_name: dict[str, int] = {}
    for gid, gname in ground_categories.items():
        key = gname.casefold()
        if key in ground_by_name:
            raise ConfigError(f"ground category name {gname!r} appears twice")
        ground_by_name[key] = gid
    aerial_by_name: dict[str, int] = {}
    for aid, aname in aerial_categories.items():
        key = aname.casefold()
        if key in aerial_by_name:
            raise ConfigError(f"aerial category name {aname!r} appears twice")
        aerial_by_name[key] = aid

    if name_map is None:
        pairs = {k: k for k in aerial_by_name}
    else:
        pairs = {}
        for a_name, g_name in name_map.items():
            a_key, g_key = a_name.casefold(), g_name.casefold()
            if a_key not in aerial_by_name:
                raise ConfigError(f"name_map entry {a_name!r} is not an aerial category")
            if a_key in pairs:
                raise ConfigError(f"aerial name {a_name!r} is mapped twice")
            pairs[a_key] = g_key
        targets = Counter(pairs.values())
        dupes = sorted(t for t, n in targets.items() if n > 1)
        if dupes:
            raise ConfigError(f"name_map is not injective; ground names mapped more than once: {dupes}")

    mapping = {
        aerial_by_name[a_key]: ground_by_name[g_key]
        for a_key, g_key in pairs.items()
        if g_key in ground_by_name
    }
    common = frozenset(mapping)
    return CategoryPartition(
        common=common,
        unique_aerial=frozenset(aerial_categories) - common,
        name_map=mapping,
        aerial_names=dict(aerial_categories),
    )


def _capped_pairs(n_a: int, n_g: int, cap: int | None, rng_key: list[int]) -> list[tuple[int, int]]:
    total = n_a * n_g
    if cap is None or total <= cap:
        picks = range(total)
    else:
        rng = np.random.default_rng(rng_key)
        picks = np.sort(rng.choice(total, size=cap, replace=False)).tolist()
    return [divmod(int(k), n_g) for k in picks]


def direct_correspondence(
    aerial: AnnotationSet,
    ground: AnnotationSet,
    partition: CategoryPartition,
    pairing_cap: int | None = DEFAULT_PAIRING_CAP,
    seed: int = 0,
    warnings: Counter | None = None,
) -> list[CorrespondenceRecord]:
    """Pair every aerial instance of each common category with ground instances.

    When the per-category cross product exceeds ``pairing_cap`` a seeded
    uniform subsample of exactly ``pairing_cap`` pairs is kept.
    """
    warnings = Counter() if warnings is None else warnings
    out: list[CorrespondenceRecord] = []
    for cat in sorted(partition.common):
        a_inst = aerial.instances(cat)
        g_inst = ground.instances(partition.name_map[cat])
        if not a_inst or not g_inst:
            warnings["direct_empty_category"] += 1
            logger.warning("category %d has %d aerial / %d ground instances; no direct pairs", cat, len(a_inst), len(g_inst))
            continue
        for ai, gi in _capped_pairs(len(a_inst), len(g_inst), pairing_cap, [seed, _DIRECT_STREAM, cat]):
            (a_rec, a_box), (g_rec, g_box) = a_inst[ai], g_inst[gi]
            out.append(
                CorrespondenceRecord(
                    pair_id=f"direct-c{cat:04d}-a{ai:05d}-g{gi:05d}",
                    category_id=cat,
                    aerial_image=a_rec.image_id,
                    aerial_size=a_rec.image_size,
                    aerial_box=a_box,
                    ground_image=g_rec.image_id,
                    ground_size=g_rec.image_size,
                    ground_box=g_box,
                    provenance="direct",
                    confidence=1.0,
                )
            )
    return out


def _clip(box: Box2D, w: float, h: float) -> Box2D | None:
    x0, y0 = max(box.x_min, 0.0), max(box.y_min, 0.0)
    x1, y1 = min(box.x_max, w), min(box.y_max, h)
    if x1 <= x0 or y1 <= y0:
        return None
    return Box2D(x0, y0, x1, y1)


def inferred_correspondence(
    aerial: AnnotationSet,
    ground_images: Sequence[AnnotationRecord],
    partition: CategoryPartition,
    detector: DetectorClient,
    tau: float = 0.3,
    iou_threshold: float = 0.5,
    pairing_cap: int | None = DEFAULT_PAIRING_CAP,
    seed: int = 0,
    warnings: Counter | None = None,
) -> list[CorrespondenceRecord]:
    """Pseudo-label ground images for aerial-only categories and pair them.

    For each unique category the detector is queried on every ground image;
    per image, boxes are clipped to the frame and passed through
    ``nms(iou_threshold, tau)``. Survivors are paired with the category's
    aerial instances under the same capping rule as direct pairs, with the
    detector score stored as confidence.
    """
    warnings = Counter() if warnings is None else warnings
    out: list[CorrespondenceRecord] = []
    for cat in sorted(partition.unique_aerial):
        name = partition.aerial_names[cat]
        a_inst = aerial.instances(cat)
        if not a_inst:
            warnings["inferred_no_aerial_instances"] += 1
            logger.warning("unique category %d (%s) has no aerial instances", cat, name)
            continue
        pseudo: list[tuple[AnnotationRecord, ScoredDetection]] = []
        for img in ground_images:
            try:
                raw = detector.detect(img.image_id, name, seed)
            except Exception as exc:  # any client failure is a per-image skip
                warnings["detector_failure"] += 1
                logger.warning("detector failed on %s for %r: %s", img.image_id, name, exc)
                continue
            dets = []
            for d in raw:
                clipped = _clip(d.box, *img.image_size)
                if clipped is not None:
                    dets.append(ScoredDetection(clipped, cat, d.score, img.image_id))
            pseudo.extend((img, d) for d in nms(dets, iou_threshold, tau))
        if not pseudo:
            warnings["inferred_no_detections"] += 1
            logger.warning("unique category %d (%s): no detections survived filtering", cat, name)
            continue
        for ai, gi in _capped_pairs(len(a_inst), len(pseudo), pairing_cap, [seed, _INFERRED_STREAM, cat]):
            (a_rec, a_box), (g_rec, det) = a_inst[ai], pseudo[gi]
            out.append(
                CorrespondenceRecord(
                    pair_id=f"inferred-c{cat:04d}-a{ai:05d}-g{gi:05d}",
                    category_id=cat,
                    aerial_image=a_rec.image_id,
                    aerial_size=a_rec.image_size,
                    aerial_box=a_box,
                    ground_image=g_rec.image_id,
                    ground_size=g_rec.image_size,
                    ground_box=det.box,
                    provenance="inferred",
                    confidence=det.score,
                )
            )
    return out


def rotate_box(box: Box2D, size: tuple[float, float], degrees: int) -> tuple[Box2D, tuple[float, float]]:
    """Rotate a box with its frame by a multiple of 90 degrees.

    A 90 degree turn maps a point ``(x, y)`` of a ``W x H`` frame to
    ``(y, W - x)`` in the resulting ``H x W`` frame.
    """
    w, h = size
    x0, y0, x1, y1 = box.as_tuple()
    if degrees == 0:
        return box, size
    if degrees == 90:
        return Box2D(y0, w - x1, y1, w - x0), (h, w)
    if degrees == 180:
        return Box2D(w - x1, h - y1, w - x0, h - y0), (w, h)
    if degrees == 270:
        return Box2D(h - y1, x0, h - y0, x1), (h, w)
    raise ConfigError(f"rotation must be one of {ROTATIONS}, got {degrees}")


def augment_pairs(
    records: Sequence[CorrespondenceRecord],
    crop_jitter: float = 0.1,
    rotations: Sequence[int] = ROTATIONS,
    seed: int = 0,
    warnings: Counter | None = None,
) -> list[CorrespondenceRecord]:
    """Append one cropped-and-rotated copy of every record per rotation.

    Each side of the aerial frame is trimmed by an independent uniform
    fraction of up to ``crop_jitter``; the aerial box is clipped to the crop,
    shifted and rotated with the frame. Copies whose box does not survive
    the crop are dropped. Random draws are keyed on ``(seed, pair_id,
    rotation)`` so output does not depend on record order.
    """
    if not 0.0 <= crop_jitter < 0.5:
        raise ConfigError(f"crop_jitter must lie in [0, 0.5), got {crop_jitter}")
    bad = [r for r in rotations if r not in ROTATIONS]
    if bad:
        raise ConfigError(f"rotations must be drawn from {ROTATIONS}, got {bad}")
    warnings = Counter() if warnings is None else warnings
    out = list(records)
    for rec in records:
        w, h = rec.aerial_size
        for rot in rotations:
            rng = np.random.default_rng([seed, _AUGMENT_STREAM, zlib.crc32(rec.pair_id.encode()), rot])
            left, top, right, bottom = rng.uniform(0.0, crop_jitter, 4)
            cx0, cy0 = left * w, top * h
            cx1, cy1 = w - right * w, h - bottom * h
            b = rec.aerial_box
            x0, y0 = max(b.x_min, cx0) - cx0, max(b.y_min, cy0) - cy0
            x1, y1 = min(b.x_max, cx1) - cx0, min(b.y_max, cy1) - cy0
            if x1 <= x0 or y1 <= y0:
                warnings["augment_degenerate"] += 1
                continue
            box, size = rotate_box(Box2D(x0, y0, x1, y1), (cx1 - cx0, cy1 - cy0), rot)
            out.append(replace(rec, pair_id=f"{rec.pair_id}+r{rot:03d}", aerial_box=box, aerial_size=size))
    return out


@dataclass
class GenerationSummary:
    by_provenance: dict[str, int]
    by_category: dict[int, int]
    warnings: dict[str, int]
    total: int

    def lines(self) -> list[str]:
        rows = [f"total records: {self.total}"]
        rows += [f"  {k}: {v}" for k, v in sorted(self.by_provenance.items())]
        rows += [f"  category {k}: {v}" for k, v in sorted(self.by_category.items())]
        rows += [f"warning {k}: {v}" for k, v in sorted(self.warnings.items())]
        return rows


def summarize(records: Sequence[CorrespondenceRecord], warnings: Mapping[str, int] | None = None) -> GenerationSummary:
    prov = Counter(r.provenance for r in records)
    return GenerationSummary(
        by_provenance={"direct": prov.get("direct", 0), "inferred": prov.get("inferred", 0)},
        by_category=dict(sorted(Counter(r.category_id for r in records).items())),
        warnings=dict(sorted((warnings or {}).items())),
        total=len(records),
    )


def generate_aligned(
    aerial: AnnotationSet,
    ground: AnnotationSet,
    detector: DetectorClient,
    name_map: Mapping[str, str] | None = None,
    tau: float = 0.3,
    iou_threshold: float = 0.5,
    pairing_cap: int | None = DEFAULT_PAIRING_CAP,
    crop_jitter: float = 0.1,
    rotations: Sequence[int] = ROTATIONS,
    augment: bool = True,
    seed: int = 0,
) -> tuple[list[CorrespondenceRecord], GenerationSummary]:
    """Partition, direct pairs, inferred pairs, augmentation; sorted by pair_id."""
    warnings: Counter = Counter()
    partition = partition_categories(aerial.categories, ground.categories, name_map)
    records = direct_correspondence(aerial, ground, partition, pairing_cap, seed, warnings)
    records += inferred_correspondence(
        aerial, ground.records, partition, detector, tau, iou_threshold, pairing_cap, seed, warnings
    )
    if augment:
        records = augment_pairs(records, crop_jitter, rotations, seed, warnings)
    records.sort(key=lambda r: r.pair_id)
    return records, summarize(records, warnings)


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def _read_lines(path: str | Path, expected_format: str) -> tuple[dict, list[tuple[int, dict]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DatasetFormatError(path, 1, "missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, 1, f"invalid header: {exc}") from None
    if not isinstance(header, dict) or header.get("format") != expected_format:
        raise DatasetFormatError(path, 1, f"expected a {expected_format!r} header")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(path, 1, f"unsupported version {header.get('version')!r}")
    body = []
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            body.append((no, json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(path, no, f"invalid JSON: {exc}") from None
    return header, body


def write_aligned_dataset(records: Sequence[CorrespondenceRecord], path: str | Path) -> None:
    lines = [_dump({"format": ALIGNED_FORMAT, "version": FORMAT_VERSION})]
    lines += [_dump(r.to_json()) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_aligned_dataset(path: str | Path) -> list[CorrespondenceRecord]:
    _, body = _read_lines(path, ALIGNED_FORMAT)
    out, seen = [], set()
    for no, obj in body:
        try:
            rec = CorrespondenceRecord.from_json(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(path, no, f"bad correspondence record: {exc}") from None
        if rec.pair_id in seen:
            raise DatasetFormatError(path, no, f"duplicate pair_id {rec.pair_id!r}")
        seen.add(rec.pair_id)
        out.append(rec)
    return out


def write_annotations(annotations: AnnotationSet, path: str | Path) -> None:
    header = {
        "format": ANNOTATION_FORMAT,
        "version": FORMAT_VERSION,
        "source": annotations.source,
        "categories": {str(k): v for k, v in sorted(annotations.categories.items())},
    }
    lines = [_dump(header)]
    for rec in annotations.records:
        lines.append(
            _dump(
                {
                    "image_id": rec.image_id,
                    "width": rec.image_size[0],
                    "height": rec.image_size[1],
                    "boxes": [[*b.as_tuple(), c] for b, c in rec.boxes],
                }
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_annotations(path: str | Path) -> AnnotationSet:
    header, body = _read_lines(path, ANNOTATION_FORMAT)
    source = header.get("source")
    if source not in ("aerial", "ground"):
        raise DatasetFormatError(path, 1, f"header source must be aerial or ground, got {source!r}")
    try:
        categories = {int(k): str(v) for k, v in header.get("categories", {}).items()}
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(path, 1, f"bad category table: {exc}") from None
    records = []
    for no, obj in body:
        try:
            boxes = []
            for entry in obj.get("boxes", []):
                *coords, cat = entry
                if int(cat) not in categories:
                    raise ValueError(f"category {cat} not in the header table")
                boxes.append((Box2D.from_seq(coords), int(cat)))
            records.append(
                AnnotationRecord(
                    image_id=str(obj["image_id"]),
                    image_size=(float(obj["width"]), float(obj["height"])),
                    boxes=tuple(boxes),
                    source=source,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(path, no, f"bad annotation record: {exc}") from None
    return AnnotationSet(source, categories, records)
