"""COCO-style detection evaluation, base/novel harmonic mean and retrieval recall.

Conventions: 101-point interpolated AP on the recall grid 0.00..1.00, IoU
thresholds 0.50..0.95 in steps of 0.05, greedy per-image matching in
descending score order where each detection takes the still-unmatched
same-class target of highest IoU. Classes without targets are left out of
class means. Grids are built as ``k / 100`` so that rational recalls such as
7/20 meet the 0.35 threshold exactly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from crossalign.corrgen import DatasetFormatError, FORMAT_VERSION, read_annotations
from crossalign.geometry import Box2D, ScoredDetection, iou

IOU_THRESHOLDS = tuple(k / 100 for k in range(50, 100, 5))
RECALL_GRID = np.arange(101) / 100
DETECTIONS_FORMAT = "crossalign/detections"
RESULT_FORMAT = "crossalign/eval-result"


class Target(NamedTuple):
    box: Box2D
    category_id: int
    image_id: str = ""


@dataclass
class PRCurve:
    scores: np.ndarray
    tp: np.ndarray
    n_targets: int
    recall_grid: np.ndarray = field(default_factory=lambda: RECALL_GRID.copy())
    precisions: np.ndarray = field(default_factory=lambda: np.zeros(101))

    @property
    def ap(self) -> float:
        return float(self.precisions.mean())


def _targets(targets: Iterable) -> list[Target]:
    return [t if isinstance(t, Target) else Target(*t) for t in targets]


def pr_curve(dets: Sequence[ScoredDetection], targets: Sequence, iou_threshold: float, category_id: int) -> PRCurve | None:
    """Interpolated precision-recall curve of one class; ``None`` if it has no targets."""
    tgts = [t for t in _targets(targets) if t.category_id == category_id]
    if not tgts:
        return None
    by_image: dict[str, list[Target]] = {}
    for t in tgts:
        by_image.setdefault(t.image_id, []).append(t)
    cls_dets = [(i, d) for i, d in enumerate(dets) if d.category_id == category_id]
    images = sorted({d.image_id for _, d in cls_dets})
    decisions = []  # (score, image order, rank in image, is_tp)
    for img_order, image in enumerate(images):
        img_dets = sorted((x for x in cls_dets if x[1].image_id == image), key=lambda x: (-x[1].score, x[0]))
        img_tgts = by_image.get(image, [])
        matched = [False] * len(img_tgts)
        for rank, (_, d) in enumerate(img_dets):
            best, best_iou = -1, min(iou_threshold, 1 - 1e-10)
            for k, t in enumerate(img_tgts):
                if matched[k]:
                    continue
                o = iou(d.box, t.box)
                if o < best_iou:
                    continue
                best, best_iou = k, o
            if best >= 0:
                matched[best] = True
            decisions.append((-d.score, img_order, rank, best >= 0))
    decisions.sort()
    scores = np.array([-s for s, *_ in decisions])
    tp = np.array([flag for *_, flag in decisions], dtype=bool)
    curve = PRCurve(scores=scores, tp=tp, n_targets=len(tgts))
    if len(tp):
        tp_cum = np.cumsum(tp)
        recall = tp_cum / len(tgts)
        precision = tp_cum / np.arange(1, len(tp) + 1)
        precision = np.maximum.accumulate(precision[::-1])[::-1]
        idx = np.searchsorted(recall, RECALL_GRID, side="left")
        valid = idx < len(recall)
        curve.precisions[valid] = precision[idx[valid]]
    return curve


def average_precision(dets: Sequence[ScoredDetection], targets: Sequence, iou_threshold: float = 0.5) -> dict[int, float]:
    """101-point AP per class that has at least one target."""
    classes = sorted({t.category_id for t in _targets(targets)})
    return {c: pr_curve(dets, targets, iou_threshold, c).ap for c in classes}


def harmonic_mean(map_base: float, map_novel: float) -> float:
    if map_base < 0 or map_novel < 0:
        raise ValueError("harmonic mean needs non-negative inputs")
    s = map_base + map_novel
    return 0.0 if s == 0 else 2.0 * map_base * map_novel / s


@dataclass
class SplitResult:
    map_base: float | None
    map_novel: float | None
    hm: float | None
    flags: tuple[str, ...] = ()


def split_base_novel(per_class: Mapping[int, float], novel: Iterable[int]) -> SplitResult:
    novel = set(novel)
    extra = sorted(novel - set(per_class))
    if extra:
        raise ValueError(f"novel classes {extra} were not evaluated")
    base_vals = [v for c, v in per_class.items() if c not in novel]
    novel_vals = [v for c, v in per_class.items() if c in novel]
    flags = []
    if not base_vals:
        flags.append("base_undefined")
    if not novel_vals:
        flags.append("novel_undefined")
    b = float(np.mean(base_vals)) if base_vals else None
    n = float(np.mean(novel_vals)) if novel_vals else None
    hm = harmonic_mean(b, n) if b is not None and n is not None else None
    return SplitResult(b, n, hm, tuple(flags))


@dataclass
class EvalResult:
    name: str = ""
    per_class: dict[int, list[float]] = field(default_factory=dict)
    iou_thresholds: tuple[float, ...] = IOU_THRESHOLDS
    map: float = 0.0
    map_base: float | None = None
    map_novel: float | None = None
    hm: float | None = None
    counts: dict[str, int] = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def class_ap(self, c: int) -> float:
        return float(np.mean(self.per_class[c]))

    def ap_at(self, c: int, thr: float) -> float:
        return self.per_class[c][self.iou_thresholds.index(thr)]

    def to_json(self) -> dict:
        d = asdict(self)
        d["per_class"] = {str(k): v for k, v in self.per_class.items()}
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "EvalResult":
        return cls(
            name=d["name"],
            per_class={int(k): list(v) for k, v in d["per_class"].items()},
            iou_thresholds=tuple(d["iou_thresholds"]),
            map=d["map"],
            map_base=d["map_base"],
            map_novel=d["map_novel"],
            hm=d["hm"],
            counts=dict(d["counts"]),
            flags=tuple(d["flags"]),
        )


def map_50_95(
    dets: Sequence[ScoredDetection],
    targets: Sequence,
    novel: Iterable[int] | None = None,
    name: str = "",
) -> EvalResult:
    """AP averaged over the ten IoU thresholds and over classes with targets."""
    tgts = _targets(targets)
    per_class: dict[int, list[float]] = {}
    for thr in IOU_THRESHOLDS:
        for c, ap in average_precision(dets, tgts, thr).items():
            per_class.setdefault(c, []).append(ap)
    images = {t.image_id for t in tgts} | {d.image_id for d in dets}
    result = EvalResult(
        name=name,
        per_class=dict(sorted(per_class.items())),
        counts={"images": len(images), "targets": len(tgts), "detections": len(dets)},
    )
    if not per_class:
        result.flags = ("no_targets",)
        return result
    class_means = {c: float(np.mean(v)) for c, v in result.per_class.items()}
    result.map = float(np.mean(list(class_means.values())))
    if novel is not None:
        split = split_base_novel(class_means, novel)
        result.map_base, result.map_novel, result.hm = split.map_base, split.map_novel, split.hm
        result.flags = split.flags
    return result


def retrieval_recall_at_k(
    queries: np.ndarray, gallery: np.ndarray, pairing: Sequence[int], k: int = 1
) -> float:
    """Fraction of queries whose paired gallery item is among the k most cosine-similar.

    A gallery item outranks the true match if it is strictly more similar, or
    equally similar with a lower index.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    g = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    pairing = np.asarray(pairing, dtype=np.int64)
    if len(pairing) != len(q):
        raise ValueError("one gallery index per query is required")
    if not 1 <= k <= len(g):
        raise ValueError(f"k must lie in [1, {len(g)}], got {k}")
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    gn = g / np.linalg.norm(g, axis=1, keepdims=True)
    sims = qn @ gn.T
    true = sims[np.arange(len(q)), pairing][:, None]
    cols = np.arange(len(g))[None, :]
    ahead = (sims > true) | ((sims == true) & (cols < pairing[:, None]))
    return float(np.mean(ahead.sum(axis=1) < k))


def _pct(v: float | None) -> str:
    return "-" if v is None else f"{100 * v:.2f}"


_CLASS_COLS = ("AP50", "AP75", "AP50:95")
_SUMMARY_COLS = ("mAP", "mAP_base", "mAP_novel", "HM")


def report(results: Sequence[EvalResult], fmt: str = "table") -> str:
    """Render per-class rows then summary rows, as an aligned table or CSV.

    The table prints percentages with two decimals; the CSV keeps full
    precision fractions so it can be parsed back losslessly.
    """
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("result", "row") + _CLASS_COLS + _SUMMARY_COLS)
        for r in results:
            for c in r.per_class:
                w.writerow([r.name, c, repr(r.ap_at(c, 0.5)), repr(r.ap_at(c, 0.75)), repr(r.class_ap(c)), "", "", "", ""])
            w.writerow([r.name, "summary", "", "", ""] + ["" if v is None else repr(v) for v in (r.map, r.map_base, r.map_novel, r.hm)])
        return buf.getvalue()
    if fmt != "table":
        raise ValueError(f"unknown report format {fmt!r}")
    width = max([len("result")] + [len(r.name) for r in results])
    lines = [f"{'result':<{width}}  {'class':>6}" + "".join(f"  {c:>8}" for c in _CLASS_COLS)]
    for r in results:
        for c in r.per_class:
            vals = (r.ap_at(c, 0.5), r.ap_at(c, 0.75), r.class_ap(c))
            lines.append(f"{r.name:<{width}}  {c:>6}" + "".join(f"  {_pct(v):>8}" for v in vals))
    lines.append(f"{'result':<{width}}" + "".join(f"  {c:>9}" for c in _SUMMARY_COLS))
    for r in results:
        vals = (r.map, r.map_base, r.map_novel, r.hm)
        lines.append(f"{r.name:<{width}}" + "".join(f"  {_pct(v):>9}" for v in vals))
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> dict[str, dict]:
    """Inverse of ``report(..., fmt="csv")``: {name: {"per_class": ..., "summary": ...}}."""
    out: dict[str, dict] = {}
    for row in csv.DictReader(io.StringIO(text)):
        entry = out.setdefault(row["result"], {"per_class": {}, "summary": {}})
        if row["row"] == "summary":
            entry["summary"] = {c: (float(row[c]) if row[c] else None) for c in _SUMMARY_COLS}
        else:
            entry["per_class"][int(row["row"])] = tuple(float(row[c]) for c in _CLASS_COLS)
    return out


def write_detections(dets: Sequence[ScoredDetection], path: str | Path) -> None:
    lines = [json.dumps({"format": DETECTIONS_FORMAT, "version": FORMAT_VERSION})]
    for d in dets:
        x0, y0, x1, y1 = d.box.as_tuple()
        lines.append(json.dumps({"image_id": d.image_id, "x_min": x0, "y_min": y0, "x_max": x1, "y_max": y1,
                                 "category_id": d.category_id, "score": d.score}))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_detections(path: str | Path) -> list[ScoredDetection]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    try:
        header = json.loads(lines[0]) if lines else None
    except json.JSONDecodeError:
        header = None
    if not isinstance(header, dict) or header.get("format") != DETECTIONS_FORMAT or header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(path, 1, f"expected a version-{FORMAT_VERSION} {DETECTIONS_FORMAT!r} header")
    out = []
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            o = json.loads(line)
            box = Box2D(float(o["x_min"]), float(o["y_min"]), float(o["x_max"]), float(o["y_max"]))
            out.append(ScoredDetection(box, int(o["category_id"]), float(o["score"]), str(o["image_id"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(path, no, f"bad detection: {exc}") from None
    return out


def read_targets(path: str | Path) -> list[Target]:
    """Targets from an annotation file (same schema as the correspondence inputs)."""
    ann = read_annotations(path)
    return [Target(box, cat, rec.image_id) for rec in ann.records for box, cat in rec.boxes]


def save_results(results: Sequence[EvalResult], path: str | Path) -> None:
    obj = {"format": RESULT_FORMAT, "version": FORMAT_VERSION, "results": [r.to_json() for r in results]}
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def load_results(path: str | Path) -> list[EvalResult]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format") != RESULT_FORMAT or obj.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(path, 1, "not a version-1 evaluation result file")
    return [EvalResult.from_json(r) for r in obj["results"]]

